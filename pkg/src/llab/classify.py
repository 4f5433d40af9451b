"""Period classification, precision-recall machinery, and availability scoring.

A period is Good when at least 99% of its stable-core bins meet the latency
target (a lost bin never meets it). Detectors score periods by the modeled
probability of exceeding the target, so higher scores mean more likely
Degraded; thresholds on that score trade recall against false alarms, and
the discounted availability folds the detection quality and the time spent
measuring into a single number a capacity planner can use.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import DEGRADED, GOOD
from .errors import (
    AllTiesAtThreshold,
    EmptyInput,
    InvalidConfig,
    InvalidRange,
    InvalidWindow,
    NoFeasibleThreshold,
    OutOfTailRegion,
    SingleClass,
    TooFew,
    ZeroVariance,
)
from .stats import FitConfig, FittedModel, empirical_quantile, fit_by_name

MEET_FRACTION_GOOD = 0.99


@dataclass(frozen=True)
class PeriodLabel:
    label: str
    meet_fraction: float
    n_bins: int
    n_lost: int


def label_period(core_values_ms, lt_ms: float, min_bins: int = 100) -> PeriodLabel:
    """Label one period from its stable-core latencies (NaN marks loss)."""
    v = np.asarray(core_values_ms, dtype=np.float64).ravel()
    if v.size < min_bins:
        raise TooFew(f"need at least {min_bins} bins to label, got {v.size}")
    with np.errstate(invalid="ignore"):
        meets = int(np.count_nonzero(v <= lt_ms))
    frac = meets / v.size
    label = GOOD if frac >= MEET_FRACTION_GOOD else DEGRADED
    return PeriodLabel(label=label, meet_fraction=frac, n_bins=v.size,
                       n_lost=int(np.count_nonzero(np.isnan(v))))


def score_period(model: FittedModel, lt_ms: float) -> float:
    """Detector score: modeled P(latency > target). Higher = more degraded."""
    return float(model.exceedance(lt_ms))


def _pos_mask(labels) -> np.ndarray:
    out = np.empty(len(labels), dtype=bool)
    for i, lab in enumerate(labels):
        if lab == DEGRADED:
            out[i] = True
        elif lab == GOOD:
            out[i] = False
        else:
            raise ValueError(f"unknown label {lab!r}")
    return out


@dataclass(frozen=True)
class PrCurve:
    """Precision-recall points in increasing-recall order.

    The first point is the conventional anchor (threshold +inf, recall 0,
    precision 1) so the curve always starts at zero recall; the remaining
    points sit at the distinct score values, ties grouped.
    """

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def __post_init__(self) -> None:
        for name in ("thresholds", "precision", "recall"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def auprc(self) -> float:
        r, p = self.recall, self.precision
        return float(np.sum((r[1:] - r[:-1]) * (p[1:] + p[:-1]) * 0.5))


def pr_curve(scores, labels) -> PrCurve:
    """Precision-recall curve with Degraded as the positive class."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInput("no scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    pos = _pos_mask(labels)
    if pos.size != s.size:
        raise ValueError("scores and labels length mismatch")
    n_pos = int(pos.sum())
    if n_pos == 0 or n_pos == pos.size:
        raise SingleClass("both classes are required for a PR curve")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    cum_tp = np.cumsum(pos[order])
    # group score ties: keep only the last index of each run of equal scores
    ends = np.nonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))[0]
    tp = cum_tp[ends].astype(np.float64)
    predicted = ends + 1.0
    precision = tp / predicted
    recall = tp / n_pos
    return PrCurve(
        thresholds=np.concatenate(([np.inf], s_sorted[ends])),
        precision=np.concatenate(([1.0], precision)),
        recall=np.concatenate(([0.0], recall)),
    )


def auprc(scores, labels) -> float:
    """Area under the precision-recall curve (trapezoidal, anchored)."""
    return pr_curve(scores, labels).auprc


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def fpr(self) -> float:
        denom = self.fp + self.tn
        return self.fp / denom if denom else 0.0


def confusion(scores, labels, threshold: float) -> Confusion:
    """Counts for the rule: score >= threshold predicts Degraded."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    pos = _pos_mask(labels)
    pred = s >= threshold
    return Confusion(
        tp=int(np.count_nonzero(pred & pos)),
        fp=int(np.count_nonzero(pred & ~pos)),
        tn=int(np.count_nonzero(~pred & ~pos)),
        fn=int(np.count_nonzero(~pred & pos)),
    )


@dataclass(frozen=True)
class ThresholdSelection:
    threshold: float
    fpr: float
    tpr: float


def select_threshold_for_fpr(scores, labels, max_fpr: float) -> ThresholdSelection:
    """Lowest score threshold whose false-positive rate stays within max_fpr.

    Lower thresholds catch more Degraded periods, so the best feasible
    choice is the smallest one. When even the strictest finite threshold
    overshoots the cap, +inf is returned (predict nothing Degraded), which
    trivially has zero false positives.
    """
    if max_fpr < 0:
        raise NoFeasibleThreshold("max_fpr must be >= 0")
    s = np.asarray(scores, dtype=np.float64).ravel()
    pos = _pos_mask(labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("both classes are required to place a threshold")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    cum_tp = np.cumsum(pos[order])
    ends = np.nonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))[0]
    tp = cum_tp[ends]
    fp = ends + 1 - tp
    feasible = np.nonzero(fp / n_neg <= max_fpr)[0]
    if feasible.size == 0:
        return ThresholdSelection(threshold=math.inf, fpr=0.0, tpr=0.0)
    i = int(feasible[-1])  # fpr grows as the threshold drops, so take the last
    return ThresholdSelection(
        threshold=float(s_sorted[ends[i]]),
        fpr=float(fp[i] / n_neg),
        tpr=float(tp[i] / n_pos),
    )


def service_availability(labels) -> float:
    """Fraction of periods labeled Good."""
    if len(labels) == 0:
        raise EmptyInput("no period labels")
    pos = _pos_mask(labels)
    return float(np.count_nonzero(~pos)) / pos.size


def discounted_availability(sa: float, tpr: float, window_ms: float,
                            period_ms: float) -> float:
    """Availability discounted by measurement time and detector recall.

    A period only counts when the detector would pass it and the fraction
    of it left after the measurement window is still usable, so the result
    never exceeds the plain availability.
    """
    if not 0.0 <= sa <= 1.0:
        raise InvalidRange(f"sa must lie in [0, 1], got {sa}")
    if not 0.0 <= tpr <= 1.0:
        raise InvalidRange(f"tpr must lie in [0, 1], got {tpr}")
    if not 0.0 <= window_ms <= period_ms:
        raise InvalidRange(f"window must lie in [0, {period_ms}] ms, got {window_ms}")
    return sa * (period_ms - window_ms) / period_ms * tpr


# -- windowed evaluation ---------------------------------------------------------


def window_bins(w_ms: float, dt_ms: float, n_core: int) -> int:
    """Number of leading core bins inside a w-millisecond window."""
    n = int(round(w_ms / dt_ms))
    if n < 1 or n > n_core:
        raise InvalidWindow(f"window {w_ms} ms maps to {n} of {n_core} core bins")
    return n


@dataclass(frozen=True)
class FitGrid:
    """Models fitted per (family, window, period); None marks a failed fit.

    One grid is fitted once and shared by the quantile, ranking, and
    availability evaluations, which keeps a multi-metric study at one fit
    per cell.
    """

    windows_ms: tuple[float, ...]
    model_names: tuple[str, ...]
    n_periods: int
    fits: dict = field(repr=False)


def fit_grid(core, dt_ms: float, windows_ms, model_names,
             config: FitConfig | None = None, seed: int = 0,
             threads: int = 1) -> FitGrid:
    """Fit every model family to every window prefix of every period.

    ``core`` is the (periods, core bins) latency matrix in ms with NaN for
    lost bins. Fits use only the finite values inside the window. Seeds are
    derived per (period, window) so results do not depend on thread count.
    """
    cfg = config or FitConfig()
    mat = np.asarray(core, dtype=np.float64)
    if mat.ndim != 2 or mat.size == 0:
        raise EmptyInput("core matrix must be 2-D and non-empty")
    names = tuple(model_names)
    windows = tuple(float(w) for w in windows_ms)
    n_p, n_core = mat.shape
    bins = [window_bins(w, dt_ms, n_core) for w in windows]

    def fit_cell(name: str, p: int, wi: int) -> FittedModel | None:
        xs = mat[p, :bins[wi]]
        xs = xs[np.isfinite(xs)]
        try:
            return fit_by_name(name, xs, cfg, seed=seed + 100003 * wi + p)
        except (TooFew, ZeroVariance, AllTiesAtThreshold):
            return None

    fits: dict = {}
    for name in names:
        per_window = []
        for wi in range(len(windows)):
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as ex:
                    row = list(ex.map(lambda p: fit_cell(name, p, wi), range(n_p)))
            else:
                row = [fit_cell(name, p, wi) for p in range(n_p)]
            per_window.append(row)
        fits[name] = per_window
    return FitGrid(windows_ms=windows, model_names=names, n_periods=n_p, fits=fits)


@dataclass(frozen=True)
class WindowScore:
    w_ms: float
    mse_ms2: float | None
    n_fitted: int
    n_skipped: int


def quantile_mse_from_grid(grid: FitGrid, core, q: float = 0.99) -> dict:
    """Mean squared error of each model's q-quantile against the realized one.

    The realized value is the empirical q-quantile of the period's full
    stable core; predictions come from fits on window prefixes. Periods a
    model cannot answer for (failed fit, or a tail level outside its fitted
    region) are skipped and counted.
    """
    mat = np.asarray(core, dtype=np.float64)
    truths = np.empty(grid.n_periods)
    for p in range(grid.n_periods):
        row = mat[p]
        truths[p] = empirical_quantile(row[np.isfinite(row)], q)

    out: dict = {}
    for name in grid.model_names:
        scores = []
        for wi, w in enumerate(grid.windows_ms):
            errs = []
            skipped = 0
            for p in range(grid.n_periods):
                model = grid.fits[name][wi][p]
                if model is None:
                    skipped += 1
                    continue
                try:
                    pred = model.quantile(q)
                except OutOfTailRegion:
                    skipped += 1
                    continue
                errs.append((pred - truths[p]) ** 2)
            mse = float(np.mean(errs)) if errs else None
            scores.append(WindowScore(w_ms=w, mse_ms2=mse, n_fitted=len(errs),
                                      n_skipped=skipped))
        out[name] = scores
    return out


@dataclass(frozen=True)
class AuprcPoint:
    w_ms: float
    auprc: float | None
    n_scored: int


def auprc_from_grid(grid: FitGrid, labels, lt_ms: float) -> dict:
    """Ranking quality of each model's exceedance score per window."""
    if len(labels) != grid.n_periods:
        raise ValueError("labels must align with grid periods")
    out: dict = {}
    for name in grid.model_names:
        points = []
        for wi, w in enumerate(grid.windows_ms):
            scores, labs = [], []
            for p in range(grid.n_periods):
                model = grid.fits[name][wi][p]
                if model is None:
                    continue
                scores.append(score_period(model, lt_ms))
                labs.append(labels[p])
            try:
                area = auprc(scores, labs) if scores else None
            except SingleClass:
                area = None
            points.append(AuprcPoint(w_ms=w, auprc=area, n_scored=len(scores)))
        out[name] = points
    return out


def quantile_mse_eval(core, dt_ms: float, windows_ms, model_names, q: float = 0.99,
                      config: FitConfig | None = None, seed: int = 0,
                      threads: int = 1) -> dict:
    grid = fit_grid(core, dt_ms, windows_ms, model_names, config, seed, threads)
    return quantile_mse_from_grid(grid, core, q)


def auprc_eval(core, labels, dt_ms: float, windows_ms, model_names, lt_ms: float,
               config: FitConfig | None = None, seed: int = 0,
               threads: int = 1) -> dict:
    grid = fit_grid(core, dt_ms, windows_ms, model_names, config, seed, threads)
    return auprc_from_grid(grid, labels, lt_ms)


@dataclass(frozen=True)
class DsaPoint:
    max_fpr: float
    threshold: float
    w_ms: float
    sa: float
    tpr: float
    fpr: float
    dsa: float
    n_calibrate: int
    n_evaluate: int


def dsa_eval(core, labels, dt_ms: float, w_ms: float, model_name: str,
             lt_ms: float, max_fprs, period_ms: float,
             config: FitConfig | None = None, seed: int = 0,
             threads: int = 1) -> list[DsaPoint]:
    """Calibrated discounted availability at each false-positive cap.

    Periods are split chronologically: thresholds are placed on the first
    half and every reported rate (and the availability they discount) is
    realized on the second half, so the numbers estimate forward-looking
    operation rather than in-sample fit.
    """
    mat = np.asarray(core, dtype=np.float64)
    n_p = mat.shape[0]
    if len(labels) != n_p:
        raise ValueError("labels must align with core periods")
    if n_p < 4:
        raise TooFew("need at least 4 periods to calibrate and evaluate")
    half = n_p // 2

    grid = fit_grid(mat, dt_ms, [w_ms], [model_name], config, seed, threads)
    fitted = grid.fits[model_name][0]
    cal = [(score_period(m, lt_ms), labels[p])
           for p, m in enumerate(fitted[:half]) if m is not None]
    ev = [(score_period(m, lt_ms), labels[p + half])
          for p, m in enumerate(fitted[half:]) if m is not None]
    if not cal or not ev:
        raise TooFew("every fit failed in one of the halves")
    cal_scores, cal_labels = zip(*cal)
    ev_scores, ev_labels = zip(*ev)
    sa = service_availability(ev_labels)

    points = []
    for cap in max_fprs:
        sel = select_threshold_for_fpr(cal_scores, cal_labels, cap)
        c = confusion(ev_scores, ev_labels, sel.threshold)
        points.append(DsaPoint(
            max_fpr=float(cap), threshold=sel.threshold, w_ms=float(w_ms),
            sa=sa, tpr=c.tpr, fpr=c.fpr,
            dsa=discounted_availability(sa, c.tpr, w_ms, period_ms),
            n_calibrate=len(cal), n_evaluate=len(ev),
        ))
    return points
