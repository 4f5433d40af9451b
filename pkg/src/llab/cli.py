"""Command-line front end.

Subcommands mirror the analysis flow: generate or capture a trace, detect
the period phase, average the within-period profile, fit latency models,
score them over growing measurement windows, and turn any result into a
plot-ready CSV. Outputs are written atomically (temp file then rename) so
a crash never leaves a half-written artifact.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import probe as probe_mod
from .classify import (
    auprc_from_grid,
    dsa_eval,
    fit_grid,
    label_period,
    quantile_mse_from_grid,
)
from .core import DIRECTIONS, Trace, parse_trace, validate_trace, write_trace
from .errors import LlabError, MissingSeries
from .segment import (
    SegmentationConfig,
    Segmentation,
    detect_phase,
    period_matrix,
    profile_from_trace,
    segment_trace,
    stable_core,
)
from .stats import FitConfig, fit_by_name, model_to_json
from .synth import GaussianNoise, GroundTruth, MixtureNoise, ParetoTailNoise, SynthConfig, generate

log = logging.getLogger("llab")

SEED_ENV = "LLAB_SEED"


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1, not argparse's default 2
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_globals(p, suppress: bool) -> None:
    # the same flags parse before or after the subcommand; the subcommand
    # copies suppress their defaults so they never mask a top-level value
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int,
                   default=d, help=f"RNG seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--threads", type=int,
                   default=d if suppress else 1, help="fit worker threads")
    p.add_argument("--log-level", default=d if suppress else "warning",
                   choices=("debug", "info", "warning", "error"))


def atomic_write(path: str, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a torn file."""
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
        return
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".llab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def parse_duration_ms(text: str) -> float:
    """Duration like '100ms', '5s', or a bare number of milliseconds."""
    t = text.strip().lower()
    try:
        if t.endswith("ms"):
            return float(t[:-2])
        if t.endswith("s"):
            return float(t[:-1]) * 1000.0
        return float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse duration {text!r}") from None


def parse_windows(text: str) -> list[float]:
    """Window list: 'a,b,c' of durations, or an 'start:stop:step' grid."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("grid must be start:stop:step")
        start, stop, step = (parse_duration_ms(p) for p in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError("grid needs step > 0 and stop >= start")
        out = []
        w = start
        while w <= stop + 1e-9:
            out.append(round(w, 9))
            w += step
        return out
    return [parse_duration_ms(p) for p in text.split(",") if p.strip()]


def _fmt_for(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "jsonl" if path.endswith(".jsonl") else "csv"


def read_trace_file(path: str, fmt: str | None = None) -> Trace:
    if path == "-":
        data = sys.stdin.buffer.read()
        return parse_trace(data, fmt or "csv", source="stdin")
    with open(path, "rb") as f:
        data = f.read()
    return parse_trace(data, _fmt_for(path, fmt), source=path)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get(SEED_ENV, "0"))


def _load_segmentation(args, trace: Trace, series) -> Segmentation:
    if getattr(args, "seg", None):
        with open(args.seg, "r", encoding="utf-8") as f:
            return Segmentation.from_json(f.read())
    cfg = SegmentationConfig(S=args.S) if getattr(args, "S", None) else SegmentationConfig()
    det = detect_phase(series, cfg)
    return segment_trace(trace, det.s_star, cfg, histogram=det.histogram)


def _core_and_labels(args, trace: Trace) -> tuple[np.ndarray, list[str], Segmentation, float]:
    series = trace.delay_ms(args.column)
    seg = _load_segmentation(args, trace, series)
    dt_ms = trace.dt_nominal / 1e6
    mat = period_matrix(series, seg)
    core = stable_core(mat, dt_ms)
    if getattr(args, "truth", None):
        with open(args.truth, "r", encoding="utf-8") as f:
            truth = GroundTruth.from_json(f.read())
        kept = seg.kept
        if max(sl.p for sl in kept) >= len(truth.labels):
            raise ValueError("ground truth has fewer periods than the segmentation")
        labels = [truth.labels[sl.p] for sl in kept]
    else:
        labels = [label_period(core[i], args.lt_ms).label for i in range(core.shape[0])]
    return core, labels, seg, dt_ms


# -- subcommands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.noise_kind == "gaussian":
        noise = GaussianNoise(sigma_ms=args.noise_sigma)
    elif args.noise_kind == "mixture":
        noise = MixtureNoise(weights=(0.7, 0.3), offsets_ms=(0.0, 6.0),
                             sigmas_ms=(args.noise_sigma, args.noise_sigma))
    else:
        noise = ParetoTailNoise(body_sigma_ms=args.noise_sigma)
    cfg = SynthConfig(
        n_periods=args.periods, T_ms=args.T_ms, dt_ms=args.dt_ms,
        phase_offset=args.phase, noise=noise, loss_rate=args.loss_rate,
        lt_ms=args.lt_ms, seed=_resolve_seed(args),
    )
    trace, truth = generate(cfg)
    atomic_write(args.out, write_trace(trace, _fmt_for(args.out, args.format)))
    if args.truth_out:
        atomic_write(args.truth_out, truth.to_json().encode("utf-8"))
    log.info("wrote %d samples to %s", len(trace), args.out)
    return 0


def cmd_validate(args) -> int:
    trace = read_trace_file(args.trace, args.format)
    rep = validate_trace(trace)
    out = {
        "n_samples": rep.n_samples,
        "n_lost": rep.n_lost,
        "loss_fraction": rep.loss_fraction,
        "delay_split_checked": rep.delay_split_checked,
        "delay_split_violations": rep.delay_split_violations,
        "delay_split_violation_fraction": rep.delay_split_violation_fraction,
        "intersend_median_ns": rep.intersend_median_ns,
        "intersend_mad_ns": rep.intersend_mad_ns,
        "direction_flags_consistent": rep.direction_flags_consistent,
    }
    atomic_write(args.out, (json.dumps(out, indent=2) + "\n").encode("utf-8"))
    return 0


def cmd_segment(args) -> int:
    trace = read_trace_file(args.trace, args.format)
    series = trace.delay_ms(args.column)
    cfg = SegmentationConfig(S=args.S, c=args.c) if args.S else SegmentationConfig(c=args.c)
    det = detect_phase(series, cfg)
    seg = segment_trace(trace, det.s_star, cfg, histogram=det.histogram)
    atomic_write(args.out, (seg.to_json() + "\n").encode("utf-8"))
    log.info("phase %.3f bins, %d periods (%d kept)",
             seg.s_star, len(seg.periods), len(seg.kept))
    return 0


def cmd_profile(args) -> int:
    trace = read_trace_file(args.trace, args.format)
    series = trace.delay_ms(args.column)
    seg = _load_segmentation(args, trace, series)
    prof = profile_from_trace(trace, seg, column=args.column)
    atomic_write(args.out, prof.to_csv().encode("utf-8"))
    return 0


def cmd_fit(args) -> int:
    trace = read_trace_file(args.trace, args.format)
    series = trace.delay_ms(args.column)
    seg = _load_segmentation(args, trace, series)
    dt_ms = trace.dt_nominal / 1e6
    core = stable_core(period_matrix(series, seg), dt_ms)
    if not 0 <= args.period < core.shape[0]:
        raise ValueError(f"period {args.period} out of range 0..{core.shape[0] - 1}")
    row = core[args.period]
    if args.window is not None:
        n = int(round(args.window / dt_ms))
        row = row[:max(1, n)]
    xs = row[np.isfinite(row)]
    name = f"gmm{args.k}" if args.model == "gmm" else args.model
    model = fit_by_name(name, xs, FitConfig(gpd_k=args.gpd_k), seed=_resolve_seed(args))
    atomic_write(args.out, (model_to_json(model) + "\n").encode("utf-8"))
    return 0


def cmd_evaluate(args) -> int:
    trace = read_trace_file(args.trace, args.format)
    core, labels, seg, dt_ms = _core_and_labels(args, trace)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    grid = fit_grid(core, dt_ms, args.windows, models, FitConfig(),
                    seed=_resolve_seed(args), threads=args.threads)
    mse = quantile_mse_from_grid(grid, core, args.q)
    areas = auprc_from_grid(grid, labels, args.lt_ms)
    report = {
        "q": args.q,
        "lt_ms": args.lt_ms,
        "dt_ms": dt_ms,
        "windows_ms": list(grid.windows_ms),
        "n_periods": grid.n_periods,
        "per_model": {
            name: {
                "mse_curve": [
                    {"w_ms": s.w_ms, "mse_ms2": s.mse_ms2,
                     "n_fitted": s.n_fitted, "n_skipped": s.n_skipped}
                    for s in mse[name]
                ],
                "auprc_curve": [
                    {"w_ms": a.w_ms, "auprc": a.auprc, "n_scored": a.n_scored}
                    for a in areas[name]
                ],
            }
            for name in models
        },
    }
    atomic_write(args.out, (json.dumps(report, indent=2) + "\n").encode("utf-8"))
    return 0


def cmd_dsa(args) -> int:
    trace = read_trace_file(args.trace, args.format)
    core, labels, seg, dt_ms = _core_and_labels(args, trace)
    period_ms = seg.S * dt_ms
    caps = [float(c) for c in args.max_fpr.split(",") if c.strip()]
    points = dsa_eval(core, labels, dt_ms, args.window, args.model, args.lt_ms,
                      caps, period_ms, FitConfig(), seed=_resolve_seed(args),
                      threads=args.threads)
    if args.out.endswith(".csv"):
        lines = ["model,max_fpr,sampling_ms,threshold,tpr,dsa"]
        lines += [f"{args.model},{p.max_fpr!r},{p.w_ms!r},{p.threshold!r},"
                  f"{p.tpr!r},{p.dsa!r}" for p in points]
        atomic_write(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
        return 0
    report = {
        "model": args.model,
        "w_ms": args.window,
        "period_ms": period_ms,
        "lt_ms": args.lt_ms,
        "points": [
            {"max_fpr": p.max_fpr, "threshold": p.threshold, "w_ms": p.w_ms,
             "sa": p.sa, "tpr": p.tpr, "fpr": p.fpr, "dsa": p.dsa,
             "n_calibrate": p.n_calibrate, "n_evaluate": p.n_evaluate}
            for p in points
        ],
    }
    atomic_write(args.out, (json.dumps(report, indent=2) + "\n").encode("utf-8"))
    return 0


def _split_host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def cmd_probe_server(args) -> int:
    host, port = (args.host, args.port)
    if args.bind:
        host, port = _split_host_port(args.bind)

    def announce(bound: int) -> None:
        print(f"listening on {host}:{bound}", flush=True)

    probe_mod.run_server(host, port, ready=announce)
    return 0


def cmd_probe_client(args) -> int:
    host, port = (args.host, args.port)
    if args.server:
        host, port = _split_host_port(args.server)
    if port is None:
        raise ValueError("a server port is required (--port or --server host:port)")
    cfg = probe_mod.ProbeConfig(
        host=host, port=port,
        interval_ns=int(round(args.interval * 1e6)),
        duration_s=args.duration / 1000.0,
        payload_size=args.payload_size,
        receive_timeout_ms=args.receive_timeout,
    )
    trace = probe_mod.run_client(cfg)
    atomic_write(args.out, write_trace(trace, _fmt_for(args.out, args.format)))
    log.info("captured %d probes, %d lost", len(trace), trace.n_lost)
    return 0


def _figure_rows(args) -> str:
    if args.kind == "profile":
        if not args.trace:
            raise MissingSeries("figure profile needs --trace")
        trace = read_trace_file(args.trace, args.format)
        series = trace.delay_ms(args.column)
        seg = _load_segmentation(args, trace, series)
        prof = profile_from_trace(trace, seg, column=args.column)
        dt_ms = trace.dt_nominal / 1e6
        lines = ["s_ms,centered_ms"]
        lines += [f"{s * dt_ms!r},{float(v)!r}" for s, v in enumerate(prof.values)]
        return "\n".join(lines) + "\n"

    if not args.report:
        raise MissingSeries(f"figure {args.kind} needs --report")
    with open(args.report, "r", encoding="utf-8") as f:
        report = json.load(f)

    if args.kind in ("mse", "auprc"):
        models = report.get("per_model", {})
        if args.model not in models:
            raise MissingSeries(f"report holds no model {args.model!r}")
        key = "mse_curve" if args.kind == "mse" else "auprc_curve"
        curve = models[args.model].get(key)
        if not curve:
            raise MissingSeries(f"report holds no {key} for {args.model!r}")
        field = "mse_ms2" if args.kind == "mse" else "auprc"
        lines = [f"w_ms,{field}"]
        for row in curve:
            v = row[field]
            lines.append(f"{row['w_ms']!r},{'' if v is None else repr(float(v))}")
        return "\n".join(lines) + "\n"

    points = report.get("points")
    if not points:
        raise MissingSeries("report holds no availability points")
    lines = ["max_fpr,threshold,w_ms,sa,tpr,fpr,dsa"]
    for p in points:
        lines.append(",".join(repr(float(p[k]))
                              for k in ("max_fpr", "threshold", "w_ms", "sa",
                                        "tpr", "fpr", "dsa")))
    return "\n".join(lines) + "\n"


def cmd_figure(args) -> int:
    atomic_write(args.out, _figure_rows(args).encode("utf-8"))
    return 0


# -- parser ----------------------------------------------------------------------


def _add_common_io(p, needs_column=True):
    p.add_argument("--trace", "--in", dest="trace", required=True,
                   help="trace file (csv or jsonl, - for stdin)")
    p.add_argument("--format", choices=("csv", "jsonl"), default=None,
                   help="trace format (default: by extension)")
    if needs_column:
        p.add_argument("--column", choices=DIRECTIONS, default="ul",
                       help="delay column to analyze")


def _add_lt(p):
    p.add_argument("--lt-ms", "--lt", dest="lt_ms", type=parse_duration_ms,
                   default=50.0, help="latency target (e.g. 50ms)")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="llab", description=__doc__.splitlines()[0])
    _add_globals(top, suppress=False)
    sub = top.add_subparsers(dest="command", required=True)

    def add_cmd(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        return p

    p = add_cmd("synth", "generate a synthetic trace with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", "--truth-out", dest="truth_out", default=None,
                   help="also write ground truth JSON")
    p.add_argument("--format", choices=("csv", "jsonl"), default=None)
    p.add_argument("--periods", type=int, default=100)
    p.add_argument("--T-ms", dest="T_ms", type=parse_duration_ms, default=15000.0)
    p.add_argument("--dt-ms", dest="dt_ms", type=parse_duration_ms, default=2.0)
    p.add_argument("--phase", type=float, default=0.0, help="true phase in bins")
    p.add_argument("--noise-kind", choices=("gaussian", "mixture", "pareto"),
                   default="gaussian")
    p.add_argument("--noise-sigma", type=float, default=1.5)
    p.add_argument("--loss-rate", type=float, default=0.0)
    _add_lt(p)
    p.set_defaults(func=cmd_synth)

    p = add_cmd("validate", "data-quality report for a trace")
    _add_common_io(p, needs_column=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)

    p = add_cmd("segment", "detect period phase and slice a trace")
    _add_common_io(p)
    p.add_argument("--S", type=int, default=None, help="period length in bins")
    p.add_argument("--c", type=float, default=8.0, help="jump threshold scale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = add_cmd("profile", "mean-centered within-period profile")
    _add_common_io(p)
    p.add_argument("--seg", default=None, help="segmentation JSON (default: detect)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = add_cmd("fit", "fit one latency model to one period's core")
    _add_common_io(p)
    p.add_argument("--seg", default=None)
    p.add_argument("--model", required=True,
                   help="uniform, gaussian, gmm (with --k), gmmK, empirical, or gpd")
    p.add_argument("--k", type=int, default=3, help="mixture components for --model gmm")
    p.add_argument("--gpd-k", dest="gpd_k", type=int, default=25,
                   help="tail exceedances for --model gpd")
    p.add_argument("--period", type=int, default=0)
    p.add_argument("--window", "--window-ms", dest="window", type=parse_duration_ms,
                   default=None, help="fit only the first WINDOW of the core")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = add_cmd("evaluate", "quantile error and ranking quality per window")
    _add_common_io(p)
    p.add_argument("--seg", default=None)
    p.add_argument("--truth", default=None, help="ground truth JSON for labels")
    p.add_argument("--models", default="gaussian,gmm3,empirical",
                   help="comma list of model names")
    p.add_argument("--windows", type=parse_windows, default=[100.0, 500.0, 1000.0, 5000.0],
                   help="'a,b,c' or start:stop:step, durations like 100ms or 5s")
    p.add_argument("--q", type=float, default=0.99)
    _add_lt(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = add_cmd("dsa", "discounted availability at false-positive caps")
    _add_common_io(p)
    p.add_argument("--seg", default=None)
    p.add_argument("--truth", default=None)
    p.add_argument("--model", default="gaussian")
    p.add_argument("--window", "--window-ms", dest="window", type=parse_duration_ms,
                   default=1000.0)
    p.add_argument("--max-fpr", default="0.05,0.10", help="comma list of caps")
    _add_lt(p)
    p.add_argument("--out", required=True,
                   help=".csv for the flat table, .json for the full report")
    p.set_defaults(func=cmd_dsa)

    p = add_cmd("probe-server", "run the UDP echo reflector")
    p.add_argument("--bind", default=None, help="host:port (overrides --host/--port)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0, help="0 picks a free port")
    p.set_defaults(func=cmd_probe_server)

    p = add_cmd("probe-client", "send paced probes and record a trace")
    p.add_argument("--server", default=None, help="host:port (overrides --host/--port)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--duration", type=parse_duration_ms, default=1000.0,
                   help="total probing time (e.g. 10s)")
    p.add_argument("--interval", type=parse_duration_ms, default=2.0,
                   help="send interval (e.g. 2ms)")
    p.add_argument("--payload-size", type=int, default=64)
    p.add_argument("--receive-timeout", type=int, default=1000,
                   help="drain wait after the last probe, ms")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default=None)
    p.set_defaults(func=cmd_probe_client)

    p = add_cmd("figure", "emit a plot-ready CSV series")
    p.add_argument("--kind", required=True, choices=("profile", "mse", "auprc", "dsa"))
    p.add_argument("--trace", "--in", dest="trace", default=None,
                   help="trace for --kind profile")
    p.add_argument("--format", choices=("csv", "jsonl"), default=None)
    p.add_argument("--column", choices=DIRECTIONS, default="ul")
    p.add_argument("--seg", default=None)
    p.add_argument("--report", default=None, help="report JSON for mse/auprc/dsa")
    p.add_argument("--model", default=None, help="model series for mse/auprc")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_figure)

    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LlabError as e:
        print(f"llab: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"llab: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
