"""Latency trace data model and serialization.

A trace is an ordered sequence of probe samples taken at a nominal send
interval. Delay fields are integer nanoseconds so file round-trips are
exact. Lost probes keep their row (seq and send time with every delay
absent) so the sample position always reflects the send schedule; period
alignment downstream depends on that.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DuplicateSeq, EmptyTrace, MalformedRow

#: Slack allowed before a round trip is flagged as shorter than the sum of
#: its one-way parts (separate probe paths may disagree by clock noise).
DELAY_SPLIT_EPSILON_NS = 1_000_000

CSV_HEADER = "seq,t_send_ns,ul_ns,dl_ns,rtt_ns,lost"

DIRECTIONS = ("ul", "dl", "rtt")

#: Sentinel for an absent delay in columnar storage.
ABSENT = -1

#: Fallback nominal interval (2 ms) when a parsed trace is too short to
#: infer one.
DEFAULT_DT_NS = 2_000_000

#: Period quality labels used by ground truth and classification.
GOOD = "Good"
DEGRADED = "Degraded"


@dataclass(frozen=True)
class LatencySample:
    """One probe transmission.

    Delays are nanoseconds; ``None`` means the direction was not measured.
    A lost probe retains seq and t_send with all delays absent.
    """

    seq: int
    t_send: int
    ul: int | None = None
    dl: int | None = None
    rtt: int | None = None
    lost: bool = False

    def __post_init__(self) -> None:
        if self.lost and not (self.ul is None and self.dl is None and self.rtt is None):
            raise ValueError(f"lost sample {self.seq} carries delay values")
        for name in DIRECTIONS:
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"negative {name} on sample {self.seq}")


@dataclass(frozen=True)
class TraceMetadata:
    """Provenance and direction coverage of a trace."""

    source: str = ""
    satellite_path: str = ""
    terrestrial_path: str = ""
    start_time_ns: int = 0
    has_ul: bool = False
    has_dl: bool = False
    has_rtt: bool = False


def _as_readonly(arr: np.ndarray, dtype) -> np.ndarray:
    a = np.asarray(arr)
    if a.dtype == dtype and a.flags.c_contiguous and not a.flags.writeable:
        return a
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = a.copy()  # keep the caller's array writable, freeze only ours
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Trace:
    """Ordered probe samples at a nominal send interval.

    Storage is columnar: int64 nanosecond arrays with ``ABSENT`` (-1)
    standing for a missing measurement, which keeps multi-hour traces cheap
    to scan. Arrays are read-only; treat a Trace as a value. Indexing
    materializes :class:`LatencySample` views.
    """

    seq: np.ndarray
    t_send: np.ndarray
    ul: np.ndarray
    dl: np.ndarray
    rtt: np.ndarray
    lost: np.ndarray
    dt_nominal: int
    meta: TraceMetadata = field(default_factory=TraceMetadata)

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "seq", _as_readonly(self.seq, np.uint64))
        set_(self, "t_send", _as_readonly(self.t_send, np.int64))
        for name in DIRECTIONS:
            set_(self, name, _as_readonly(getattr(self, name), np.int64))
        set_(self, "lost", _as_readonly(self.lost, np.bool_))
        n = len(self.seq)
        for name in ("t_send", "ul", "dl", "rtt", "lost"):
            if len(getattr(self, name)) != n:
                raise ValueError("column lengths differ")
        if self.dt_nominal <= 0:
            raise ValueError("dt_nominal must be positive")
        if n > 1:
            dseq = np.diff(self.seq.astype(np.int64))
            if np.any(dseq == 0):
                i = int(np.argmax(dseq == 0))
                raise DuplicateSeq(f"duplicate seq {int(self.seq[i])}")
            if np.any(dseq < 0):
                raise ValueError("seq must be strictly increasing")
            if np.any(np.diff(self.t_send) < 0):
                raise ValueError("t_send must be non-decreasing")
        for name in DIRECTIONS:
            col = getattr(self, name)
            if n and int(col.min()) < ABSENT:
                raise ValueError(f"negative {name} delay")
            if n and np.any(col[self.lost] != ABSENT):
                raise ValueError("lost samples must have absent delays")

    # -- construction ----------------------------------------------------

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[LatencySample],
        dt_nominal: int,
        meta: TraceMetadata | None = None,
    ) -> "Trace":
        """Build a trace from sample objects, inferring metadata if absent."""
        n = len(samples)
        seq = np.fromiter((s.seq for s in samples), np.uint64, n)
        t_send = np.fromiter((s.t_send for s in samples), np.int64, n)
        cols = {}
        for name in DIRECTIONS:
            cols[name] = np.fromiter(
                (ABSENT if getattr(s, name) is None else getattr(s, name) for s in samples),
                np.int64,
                n,
            )
        lost = np.fromiter((s.lost for s in samples), np.bool_, n)
        if meta is None:
            meta = infer_metadata(t_send, cols["ul"], cols["dl"], cols["rtt"], lost)
        return cls(seq, t_send, cols["ul"], cols["dl"], cols["rtt"], lost, dt_nominal, meta)

    # -- value semantics ---------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.dt_nominal == other.dt_nominal
            and self.meta == other.meta
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("seq", "t_send", "ul", "dl", "rtt", "lost")
            )
        )

    # -- access ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.seq)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trace(
                self.seq[i], self.t_send[i], self.ul[i], self.dl[i],
                self.rtt[i], self.lost[i], self.dt_nominal, self.meta,
            )
        ix = int(i)
        vals = {n: (None if getattr(self, n)[ix] == ABSENT else int(getattr(self, n)[ix]))
                for n in DIRECTIONS}
        return LatencySample(
            seq=int(self.seq[ix]), t_send=int(self.t_send[ix]),
            lost=bool(self.lost[ix]), **vals,
        )

    def __iter__(self) -> Iterator[LatencySample]:
        return (self[i] for i in range(len(self)))

    def delay_ms(self, column: str) -> np.ndarray:
        """Delay series in float milliseconds, NaN where absent or lost."""
        if column not in DIRECTIONS:
            raise ValueError(f"unknown column {column!r}")
        raw = getattr(self, column)
        out = raw.astype(np.float64)
        out[raw == ABSENT] = np.nan
        out /= 1e6
        return out

    @property
    def n_lost(self) -> int:
        return int(np.count_nonzero(self.lost))

    @property
    def loss_fraction(self) -> float:
        return self.n_lost / len(self) if len(self) else 0.0


def infer_metadata(
    t_send: np.ndarray,
    ul: np.ndarray,
    dl: np.ndarray,
    rtt: np.ndarray,
    lost: np.ndarray,
    source: str = "",
) -> TraceMetadata:
    """Derive direction flags from field presence among delivered samples.

    A direction counts as covered when at least 99% of non-lost samples
    carry it.
    """
    alive = ~lost
    n_alive = int(np.count_nonzero(alive))

    def covered(col: np.ndarray) -> bool:
        if n_alive == 0:
            return False
        return np.count_nonzero(col[alive] != ABSENT) / n_alive >= 0.99

    return TraceMetadata(
        source=source,
        start_time_ns=int(t_send[0]) if len(t_send) else 0,
        has_ul=covered(ul),
        has_dl=covered(dl),
        has_rtt=covered(rtt),
    )


# -- parsing ---------------------------------------------------------------


def parse_trace(
    data: bytes | str,
    fmt: str = "csv",
    dt_nominal_ns: int | None = None,
    source: str = "",
) -> Trace:
    """Parse a serialized trace.

    Rows may arrive unordered; they are sorted by seq. The nominal interval
    is the median inter-send gap unless given explicitly.

    :raises MalformedRow: a row failed to parse (1-based line number).
    :raises DuplicateSeq: two rows share a sequence number.
    :raises EmptyTrace: the stream holds no data rows.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedRow(0, f"stream is not UTF-8: {e}") from None
    else:
        text = data
    if fmt == "csv":
        rows = _parse_csv(text)
    elif fmt == "jsonl":
        rows = _parse_jsonl(text)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if not rows:
        raise EmptyTrace("no data rows")

    arr = np.array(rows, dtype=np.int64)  # columns: seq t ul dl rtt lost line
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    dup = np.flatnonzero(np.diff(arr[:, 0]) == 0)
    if dup.size:
        raise DuplicateSeq(f"duplicate seq {int(arr[dup[0], 0])}")
    bad_t = np.flatnonzero(np.diff(arr[:, 1]) < 0)
    if bad_t.size:
        raise MalformedRow(int(arr[bad_t[0] + 1, 6]), "t_send_ns decreases with seq")

    if dt_nominal_ns is None:
        if len(arr) > 1:
            dt_nominal_ns = max(1, int(round(float(np.median(np.diff(arr[:, 1]))))))
        else:
            dt_nominal_ns = DEFAULT_DT_NS
    lost = arr[:, 5].astype(bool)
    meta = infer_metadata(arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], lost, source=source)
    return Trace(
        arr[:, 0].astype(np.uint64), arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4],
        lost, dt_nominal_ns, meta,
    )


def _row_field(raw: str, line: int, name: str) -> int:
    if raw == "":
        return ABSENT
    try:
        v = int(raw)
    except ValueError:
        raise MalformedRow(line, f"{name} is not an integer: {raw!r}") from None
    if v < 0:
        raise MalformedRow(line, f"{name} is negative")
    return v


def _check_loss(vals: list[int], lost: int, line: int) -> None:
    if lost and any(v != ABSENT for v in vals):
        raise MalformedRow(line, "lost sample carries delay values")


def _parse_csv(text: str) -> list[list[int]]:
    lines = text.splitlines()
    if not lines:
        raise EmptyTrace("empty stream")
    if lines[0].strip() != CSV_HEADER:
        raise MalformedRow(1, f"header must be {CSV_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise MalformedRow(lineno, f"expected 6 fields, got {len(parts)}")
        try:
            seq = int(parts[0])
            t_send = int(parts[1])
        except ValueError:
            raise MalformedRow(lineno, "seq/t_send_ns are not integers") from None
        delays = [_row_field(parts[i], lineno, name)
                  for i, name in ((2, "ul_ns"), (3, "dl_ns"), (4, "rtt_ns"))]
        if parts[5] not in ("0", "1"):
            raise MalformedRow(lineno, f"lost must be 0 or 1, got {parts[5]!r}")
        lost = int(parts[5])
        _check_loss(delays, lost, lineno)
        rows.append([seq, t_send, *delays, lost, lineno])
    return rows


def _parse_jsonl(text: str) -> list[list[int]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRow(lineno, f"invalid JSON: {e.msg}") from None
        if not isinstance(obj, dict):
            raise MalformedRow(lineno, "row is not an object")
        try:
            seq = int(obj["seq"])
            t_send = int(obj["t_send_ns"])
        except (KeyError, TypeError, ValueError):
            raise MalformedRow(lineno, "seq/t_send_ns missing or non-integer") from None
        delays = []
        for name in ("ul_ns", "dl_ns", "rtt_ns"):
            v = obj.get(name)
            if v is None:
                delays.append(ABSENT)
                continue
            if isinstance(v, bool) or not isinstance(v, int):
                raise MalformedRow(lineno, f"{name} is not an integer")
            if v < 0:
                raise MalformedRow(lineno, f"{name} is negative")
            delays.append(v)
        lost_raw = obj.get("lost", False)
        if isinstance(lost_raw, bool):
            lost = int(lost_raw)
        elif lost_raw in (0, 1):
            lost = int(lost_raw)
        else:
            raise MalformedRow(lineno, f"lost must be boolean, got {lost_raw!r}")
        _check_loss(delays, lost, lineno)
        rows.append([seq, t_send, *delays, lost, lineno])
    return rows


# -- writing ---------------------------------------------------------------


def write_trace(trace: Trace, fmt: str = "csv") -> bytes:
    """Serialize a trace; inverse of :func:`parse_trace` on the data fields.

    :raises EmptyTrace: the trace holds no samples.
    """
    if len(trace) == 0:
        raise EmptyTrace("refusing to write a trace with no samples")
    if fmt == "csv":
        return _write_csv(trace)
    if fmt == "jsonl":
        return _write_jsonl(trace)
    raise ValueError(f"unknown format {fmt!r}")


def _write_csv(trace: Trace) -> bytes:
    out = [CSV_HEADER]
    cols = (trace.seq, trace.t_send, trace.ul, trace.dl, trace.rtt, trace.lost)
    for seq, t, ul, dl, rtt, lost in zip(*cols):
        d = ["" if v == ABSENT else str(int(v)) for v in (ul, dl, rtt)]
        out.append(f"{int(seq)},{int(t)},{d[0]},{d[1]},{d[2]},{int(lost)}")
    out.append("")
    return "\n".join(out).encode("utf-8")


def _write_jsonl(trace: Trace) -> bytes:
    out = []
    for i in range(len(trace)):
        obj = {"seq": int(trace.seq[i]), "t_send_ns": int(trace.t_send[i])}
        for name in DIRECTIONS:
            v = int(getattr(trace, name)[i])
            if v != ABSENT:
                obj[f"{name}_ns"] = v
        obj["lost"] = bool(trace.lost[i])
        out.append(json.dumps(obj, separators=(",", ":")))
    out.append("")
    return "\n".join(out).encode("utf-8")


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Data-quality summary of a trace; computing it never raises."""

    n_samples: int
    n_lost: int
    loss_fraction: float
    delay_split_checked: int
    delay_split_violations: int
    delay_split_violation_fraction: float
    intersend_median_ns: float
    intersend_mad_ns: float
    direction_flags_consistent: bool


def validate_trace(trace: Trace, eps_ns: int = DELAY_SPLIT_EPSILON_NS) -> ValidationReport:
    """Report loss, send-interval jitter, and round-trip consistency.

    A sample with all three delays present violates the path relation when
    ``rtt < ul + dl - eps_ns``; one-way paths of a round trip cannot sum to
    more than the round trip beyond clock noise.
    """
    n = len(trace)
    present = (trace.ul != ABSENT) & (trace.dl != ABSENT) & (trace.rtt != ABSENT)
    checked = int(np.count_nonzero(present))
    viol = 0
    if checked:
        ul = trace.ul[present]
        dl = trace.dl[present]
        rtt = trace.rtt[present]
        viol = int(np.count_nonzero(rtt < ul + dl - eps_ns))
    if n > 1:
        gaps = np.diff(trace.t_send).astype(np.float64)
        med = float(np.median(gaps))
        mad = float(np.median(np.abs(gaps - med)))
    else:
        med, mad = 0.0, 0.0

    alive = ~trace.lost
    n_alive = int(np.count_nonzero(alive))
    consistent = True
    for name, flag in (("ul", trace.meta.has_ul), ("dl", trace.meta.has_dl),
                       ("rtt", trace.meta.has_rtt)):
        if n_alive == 0:
            continue
        has = getattr(trace, name)[alive] != ABSENT
        match = np.count_nonzero(has == flag) / n_alive
        if match < 0.99:
            consistent = False
    return ValidationReport(
        n_samples=n,
        n_lost=trace.n_lost,
        loss_fraction=trace.loss_fraction,
        delay_split_checked=checked,
        delay_split_violations=viol,
        delay_split_violation_fraction=viol / checked if checked else 0.0,
        intersend_median_ns=med,
        intersend_mad_ns=mad,
        direction_flags_consistent=consistent,
    )
