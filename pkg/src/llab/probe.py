"""UDP echo probe: wire format, stateless reflector, and paced client.

The client stamps each probe at send, the reflector stamps receive and
re-send, and the client stamps arrival, which splits the round trip into
an uplink (send to reflector receive), a downlink (reflector send to
arrival), and the full loop. Timestamps ride in the packet, so the
reflector keeps no state and any number of clients can share one.

One-way figures are only meaningful when both ends share a clock (same
host, or externally synchronized); the round trip needs no sync at all.
"""

from __future__ import annotations

import gc
import socket
import struct
import sys
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .core import ABSENT, Trace, TraceMetadata
from .errors import BadMagic, BindFailure, LlabError, SocketFailure, Truncated, UnsupportedVersion

#: "LLAB" in big-endian ASCII.
MAGIC = 0x4C4C4142
VERSION = 1
HEADER_LEN = 40
#: magic u32, version u8, flags u8, reserved u16, then four u64 fields:
#: seq, t_client_send, t_server_recv, t_server_send (all wall-clock ns).
_HEADER = struct.Struct(">IBBHQQQQ")

#: Flag bit set by the reflector so a client never mistakes stray copies of
#: its own packets for replies.
FLAG_SERVER_ECHO = 0x01

#: Final stretch before a send deadline that is busy-waited instead of
#: slept; sleep wake-ups on virtualized hosts overshoot by whole
#: milliseconds, so the margin has to be generous.
_SPIN_NS = 2_500_000

#: Within the busy-wait, keep handing the interpreter to the receiver
#: thread until this close to the deadline; only the last stretch is a
#: pure spin.
_YIELD_NS = 300_000


@dataclass(frozen=True)
class ProbePacket:
    seq: int
    t_client_send: int
    t_server_recv: int = 0
    t_server_send: int = 0
    flags: int = 0
    version: int = VERSION
    reserved: int = 0

    @property
    def server_echoed(self) -> bool:
        return bool(self.flags & FLAG_SERVER_ECHO)


def encode_packet(pkt: ProbePacket, payload_size: int = HEADER_LEN) -> bytes:
    """Serialize a packet, zero-padded to payload_size bytes."""
    if payload_size < HEADER_LEN:
        raise ValueError(f"payload_size must be >= {HEADER_LEN}, got {payload_size}")
    head = _HEADER.pack(MAGIC, pkt.version, pkt.flags, pkt.reserved,
                        pkt.seq, pkt.t_client_send, pkt.t_server_recv, pkt.t_server_send)
    return head + b"\x00" * (payload_size - HEADER_LEN)


def decode_packet(data: bytes) -> ProbePacket:
    """Parse a packet header; padding past the header is ignored.

    :raises Truncated: fewer than the header's bytes arrived.
    :raises BadMagic: the stream is not a probe packet.
    :raises UnsupportedVersion: a future or corrupt version byte.
    """
    if len(data) < HEADER_LEN:
        raise Truncated(f"packet is {len(data)} bytes, header needs {HEADER_LEN}")
    magic, version, flags, reserved, seq, t_cs, t_sr, t_ss = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic 0x{magic:08X}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} not supported")
    return ProbePacket(seq=seq, t_client_send=t_cs, t_server_recv=t_sr,
                       t_server_send=t_ss, flags=flags, version=version,
                       reserved=reserved)


class ProbeServer:
    """Stateless UDP reflector; anything that does not decode is dropped."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind((host, port))
        except OSError as e:
            self._sock.close()
            raise BindFailure(f"cannot bind {host}:{port}: {e}") from None
        self._sock.settimeout(0.2)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.n_echoed = 0

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    @property
    def host(self) -> str:
        return self._sock.getsockname()[0]

    def start(self) -> "ProbeServer":
        self._thread = threading.Thread(target=self._serve, name="llab-probe-server",
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self._sock.close()

    def __enter__(self) -> "ProbeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                return
            t_recv = time.time_ns()
            try:
                pkt = decode_packet(data)
            except LlabError:
                continue
            echo = replace(pkt, t_server_recv=t_recv,
                           flags=pkt.flags | FLAG_SERVER_ECHO,
                           t_server_send=time.time_ns())
            try:
                self._sock.sendto(encode_packet(echo, len(data)), addr)
                self.n_echoed += 1
            except OSError:
                continue


def run_server(host: str = "127.0.0.1", port: int = 0,
               ready=None) -> None:
    """Run a reflector in the foreground until interrupted.

    ``ready`` is an optional callable invoked with the bound port once the
    socket is listening (handy when port 0 asked the OS to pick).
    """
    server = ProbeServer(host, port)
    if ready is not None:
        ready(server.port)
    server.start()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


@dataclass(frozen=True)
class ProbeConfig:
    """Client schedule: probes every interval_ns for duration_s seconds."""

    host: str = "127.0.0.1"
    port: int = 0
    interval_ns: int = 2_000_000
    duration_s: float = 1.0
    payload_size: int = 64
    receive_timeout_ms: int = 1000

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.interval_ns < 100_000:
            raise ValueError("interval_ns must be at least 100000 (100 us)")
        if self.payload_size < HEADER_LEN:
            raise ValueError(f"payload_size must be >= {HEADER_LEN}")

    @property
    def n_probes(self) -> int:
        return max(1, int(round(self.duration_s * 1e9 / self.interval_ns)))


def _wait_until(deadline_mono_ns: int) -> None:
    # absolute deadline: oversleeping one probe never shifts the next
    while True:
        rem = deadline_mono_ns - time.monotonic_ns()
        if rem <= 0:
            return
        if rem > _SPIN_NS:
            time.sleep((rem - _SPIN_NS) / 1e9)
        elif rem > _YIELD_NS:
            time.sleep(0)


def run_client(config: ProbeConfig) -> Trace:
    """Send paced probes, collect echoes, and return the resulting trace.

    Probes the reflector answers carry all three delays; probes with no
    reply inside the drain window are lost rows. An unreachable reflector
    therefore yields an all-lost trace, not an error.
    """
    n = config.n_probes
    try:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    except OSError as e:
        raise SocketFailure(f"cannot create probe socket: {e}") from None
    sock.settimeout(0.05)

    t_send = np.zeros(n, dtype=np.int64)
    ul = np.full(n, ABSENT, dtype=np.int64)
    dl = np.full(n, ABSENT, dtype=np.int64)
    rtt = np.full(n, ABSENT, dtype=np.int64)
    got = np.zeros(n, dtype=bool)
    sender_done = threading.Event()
    dest = (config.host, config.port)
    inbox: list[tuple[int, bytes]] = []

    def sender() -> None:
        t0 = time.monotonic_ns()
        try:
            for i in range(n):
                _wait_until(t0 + i * config.interval_ns)
                tw = time.time_ns()
                t_send[i] = tw
                pkt = encode_packet(ProbePacket(seq=i, t_client_send=tw),
                                    config.payload_size)
                try:
                    sock.sendto(pkt, dest)
                except OSError:
                    continue  # unreachable peer: the row simply stays lost
        finally:
            sender_done.set()

    def receiver() -> None:
        # only stamp and stash here; parsing waits until the run is over, so
        # this thread never holds the interpreter long enough to delay a send
        drain_ns = config.receive_timeout_ms * 1_000_000
        drain_deadline = None
        while True:
            if sender_done.is_set():
                if drain_deadline is None:
                    drain_deadline = time.monotonic_ns() + drain_ns
                if len(inbox) >= n or time.monotonic_ns() > drain_deadline:
                    return
            try:
                data, _ = sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                return
            inbox.append((time.time_ns(), data))

    rx = threading.Thread(target=receiver, name="llab-probe-rx", daemon=True)
    # single-core hosts: a coarse switch interval would let the receiver sit
    # on the interpreter past a send deadline, and a full cyclic-GC pass can
    # stall the sender for milliseconds; both are paused for the run
    old_switch = sys.getswitchinterval()
    gc_was_enabled = gc.isenabled()
    sys.setswitchinterval(0.0005)
    gc.disable()
    rx.start()
    try:
        sender()
        rx.join()
    finally:
        if gc_was_enabled:
            gc.enable()
        sys.setswitchinterval(old_switch)
        sock.close()

    for t_recv, data in inbox:
        try:
            pkt = decode_packet(data)
        except LlabError:
            continue
        if not pkt.server_echoed:
            continue
        i = pkt.seq
        if 0 <= i < n and not got[i]:
            ul[i] = max(0, pkt.t_server_recv - pkt.t_client_send)
            dl[i] = max(0, t_recv - pkt.t_server_send)
            rtt[i] = max(0, t_recv - pkt.t_client_send)
            got[i] = True

    # wall clock can step backwards mid-run; measurements taken across the
    # step are meaningless, so those rows are flagged lost and the stored
    # send times are clamped to stay non-decreasing
    stepped = np.zeros(n, dtype=bool)
    stepped[1:] = t_send[1:] < t_send[:-1]
    np.maximum.accumulate(t_send, out=t_send)
    lost = ~got | stepped
    ul[lost] = ABSENT
    dl[lost] = ABSENT
    rtt[lost] = ABSENT
    meta = TraceMetadata(
        source=f"probe:{config.host}:{config.port}",
        start_time_ns=int(t_send[0]),
        has_ul=bool(got.any()), has_dl=bool(got.any()), has_rtt=bool(got.any()),
    )
    return Trace(
        seq=np.arange(n, dtype=np.uint64), t_send=t_send,
        ul=ul, dl=dl, rtt=rtt, lost=lost,
        dt_nominal=config.interval_ns, meta=meta,
    )


def pacing_errors_ns(trace: Trace) -> np.ndarray:
    """Per-probe deviation from the ideal schedule t_send[0] + seq * interval."""
    ideal = trace.t_send[0] + trace.seq.astype(np.int64) * trace.dt_nominal
    return trace.t_send - ideal
