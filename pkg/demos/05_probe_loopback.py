"""
Measuring a link with the UDP probe
===================================

The probe is a paced UDP echo: the client stamps each datagram on send,
the server stamps receive and re-send, and the client stamps arrival.
Four timestamps per packet split the round trip into an uplink and a
downlink leg without any clock synchronization tricks beyond "both ends
use nanoseconds since the epoch".

Here both ends live in this process and talk over loopback, which makes
the demo self-contained and also shows the floor of what the probe can
resolve: loopback legs are tens of microseconds.
"""

import numpy as np

from llab.probe import ProbeConfig, ProbeServer, pacing_errors_ns, run_client

# port 0 lets the kernel pick a free port; the context manager runs the
# echo thread and closes the socket on exit
with ProbeServer("127.0.0.1", 0) as server:
    cfg = ProbeConfig(
        host=server.host,
        port=server.port,
        interval_ns=2_000_000,   # 500 Hz
        duration_s=2.0,
        payload_size=64,
    )
    print(f"probing 127.0.0.1:{server.port} at 500 Hz for {cfg.duration_s:.0f} s "
          f"({cfg.n_probes} datagrams of {cfg.payload_size} bytes)")
    trace = run_client(cfg)
    print(f"server echoed {server.n_echoed} datagrams")

delivered = ~trace.lost
print(f"client got {int(delivered.sum())}/{len(trace)} replies "
      f"(loss {trace.loss_fraction:.2%})\n")

# each delivered sample carries all three delay columns
for col, label in (("ul", "uplink"), ("dl", "downlink"), ("rtt", "round trip")):
    ms = trace.delay_ms(col)[delivered]
    print(f"{label:11s} median {np.median(ms) * 1000:7.1f} us   "
          f"p99 {np.quantile(ms, 0.99) * 1000:7.1f} us")

# rtt is stamped end to end, so it can exceed ul + dl by queueing inside
# the client but never undercut it by more than clock granularity
slack_ms = (trace.delay_ms("rtt") - trace.delay_ms("ul")
            - trace.delay_ms("dl"))[delivered]
print(f"\nrtt minus (ul + dl): min {slack_ms.min() * 1000:.1f} us "
      f"(negative values beyond 1 ms would mean broken stamping)")

# pacing quality: how far each send strayed from its nominal slot
err_us = pacing_errors_ns(trace) / 1000.0
print(f"send pacing error: p50 {np.percentile(np.abs(err_us), 50):.0f} us, "
      f"p99 {np.percentile(np.abs(err_us), 99):.0f} us "
      f"(target interval {cfg.interval_ns / 1e6:.0f} ms)")
