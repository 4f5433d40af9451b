"""Synthetic trace generator with exact ground truth.

Reproduces the structure of a periodically reconfiguring link: latency is
piecewise stationary over fixed-length periods, the mean level jumps at
period boundaries, and each boundary carries a short spike (a decaying head
at the period start and a smaller ramp into the period end). Intra-period
noise is configurable: plain Gaussian, a mixture of narrow components
(latency concentrated on a few values), or a Gaussian body with a
heavy Pareto-style tail.

Everything is driven by one seeded PCG64 stream with a fixed draw order
(period means, then noise, then loss), so a config and seed pin the trace
bit for bit. Ground truth (true phase, per-period means, true upper
percentiles, Good/Degraded labels) comes from the configured noiseless
distributions, not from the realized samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import ndtr, ndtri

from ._num import bisect_increasing
from .core import ABSENT, DEGRADED, GOOD, Trace, infer_metadata
from .errors import InvalidConfig


# -- intra-period noise models ----------------------------------------------


@dataclass(frozen=True)
class GaussianNoise:
    """Zero-mean Gaussian intra-period noise."""

    sigma_ms: float = 1.5

    def __post_init__(self) -> None:
        if self.sigma_ms < 0:
            raise InvalidConfig("sigma_ms must be >= 0")

    @property
    def std(self) -> float:
        return self.sigma_ms

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.sigma_ms == 0:
            return np.zeros(n)
        return rng.normal(0.0, self.sigma_ms, n)

    def cdf(self, x: float) -> float:
        if self.sigma_ms == 0:
            return 1.0 if x >= 0 else 0.0
        return float(ndtr(x / self.sigma_ms))

    def quantile(self, q: float) -> float:
        if self.sigma_ms == 0:
            return 0.0
        return float(self.sigma_ms * ndtri(q))


@dataclass(frozen=True)
class MixtureNoise:
    """Mixture of Gaussian components, recentred to mean zero.

    Narrow or zero-width components model links whose latency concentrates
    on a few discrete values. Offsets are component locations before
    recentring; the generator subtracts the mixture mean so the configured
    per-period mean stays the true mean.
    """

    weights: tuple[float, ...]
    offsets_ms: tuple[float, ...]
    sigmas_ms: tuple[float, ...]

    def __post_init__(self) -> None:
        k = len(self.weights)
        if k == 0 or len(self.offsets_ms) != k or len(self.sigmas_ms) != k:
            raise InvalidConfig("weights/offsets/sigmas must have equal nonzero length")
        if any(w <= 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise InvalidConfig("weights must be positive and sum to 1")
        if any(s < 0 for s in self.sigmas_ms):
            raise InvalidConfig("sigmas must be >= 0")

    @property
    def _centered(self) -> np.ndarray:
        off = np.asarray(self.offsets_ms, dtype=float)
        return off - float(np.dot(self.weights, off))

    @property
    def std(self) -> float:
        c = self._centered
        s = np.asarray(self.sigmas_ms, dtype=float)
        return float(math.sqrt(np.dot(self.weights, s * s + c * c)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        eps = rng.standard_normal(n)
        c = self._centered
        s = np.asarray(self.sigmas_ms, dtype=float)
        return c[comp] + s[comp] * eps

    def cdf(self, x: float) -> float:
        total = 0.0
        for w, c, s in zip(self.weights, self._centered, self.sigmas_ms):
            if s == 0:
                total += w if x >= c else 0.0
            else:
                total += w * float(ndtr((x - c) / s))
        return total

    def quantile(self, q: float) -> float:
        c = self._centered
        smax = max(self.sigmas_ms)
        lo = float(c.min()) - 10.0 * smax - 1.0
        hi = float(c.max()) + 10.0 * smax + 1.0
        while self.cdf(hi) < q:
            hi = lo + 2.0 * (hi - lo)
        return bisect_increasing(self.cdf, q, lo, hi)


@dataclass(frozen=True)
class ParetoTailNoise:
    """Gaussian body with probability ``tail_prob`` of a Pareto-type excursion.

    A tail draw is ``tail_offset_ms`` plus a generalized Pareto variate with
    scale ``tail_scale_ms`` and shape ``tail_shape`` (0 gives an exponential
    tail). The whole distribution is recentred to mean zero, which requires
    tail_shape < 1.
    """

    body_sigma_ms: float = 1.0
    tail_prob: float = 0.05
    tail_offset_ms: float = 4.0
    tail_scale_ms: float = 3.0
    tail_shape: float = 0.3

    def __post_init__(self) -> None:
        if self.body_sigma_ms < 0:
            raise InvalidConfig("body_sigma_ms must be >= 0")
        if not 0.0 <= self.tail_prob < 1.0:
            raise InvalidConfig("tail_prob must be in [0, 1)")
        if self.tail_scale_ms <= 0:
            raise InvalidConfig("tail_scale_ms must be > 0")
        if not 0.0 <= self.tail_shape < 1.0:
            raise InvalidConfig("tail_shape must be in [0, 1) for a finite mean")
        if self.tail_offset_ms < 0:
            raise InvalidConfig("tail_offset_ms must be >= 0")

    @property
    def _shift(self) -> float:
        # mean of the uncentred distribution
        tail_mean = self.tail_offset_ms + self.tail_scale_ms / (1.0 - self.tail_shape)
        return self.tail_prob * tail_mean

    @property
    def std(self) -> float:
        xi = self.tail_shape
        if xi >= 0.5:
            return math.inf
        s, off, p = self.tail_scale_ms, self.tail_offset_ms, self.tail_prob
        ey = s / (1.0 - xi)
        ey2 = 2.0 * s * s / ((1.0 - xi) * (1.0 - 2.0 * xi))
        e_tail2 = off * off + 2.0 * off * ey + ey2
        m = self._shift
        e2 = (1.0 - p) * self.body_sigma_ms**2 + p * e_tail2
        return math.sqrt(e2 - m * m)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        is_tail = rng.random(n) < self.tail_prob
        body = rng.normal(0.0, self.body_sigma_ms, n) if self.body_sigma_ms else np.zeros(n)
        u = rng.random(n)
        xi, s = self.tail_shape, self.tail_scale_ms
        if xi == 0:
            excess = -s * np.log1p(-u)
        else:
            excess = s / xi * ((1.0 - u) ** (-xi) - 1.0)
        out = np.where(is_tail, self.tail_offset_ms + excess, body)
        return out - self._shift

    def cdf(self, x: float) -> float:
        z = x + self._shift
        if self.body_sigma_ms > 0:
            body = float(ndtr(z / self.body_sigma_ms))
        else:
            body = 1.0 if z >= 0 else 0.0
        y = z - self.tail_offset_ms
        if y <= 0:
            tail = 0.0
        elif self.tail_shape == 0:
            tail = 1.0 - math.exp(-y / self.tail_scale_ms)
        else:
            tail = 1.0 - (1.0 + self.tail_shape * y / self.tail_scale_ms) ** (-1.0 / self.tail_shape)
        return (1.0 - self.tail_prob) * body + self.tail_prob * tail

    def quantile(self, q: float) -> float:
        lo = -self._shift - 10.0 * self.body_sigma_ms - 1.0
        hi = self._shift + self.tail_offset_ms + 10.0 * (self.body_sigma_ms + self.tail_scale_ms) + 1.0
        while self.cdf(hi) < q:
            hi = lo + 2.0 * (hi - lo)
        return bisect_increasing(self.cdf, q, lo, hi)


NoiseModel = Union[GaussianNoise, MixtureNoise, ParetoTailNoise]


# -- per-period mean levels ---------------------------------------------------


@dataclass(frozen=True)
class PeriodMeanModel:
    """Per-period mean latency: Gaussian, truncated below at a floor.

    Sampling uses inverse-CDF transform of uniforms so the draw count per
    period is fixed regardless of the floor.
    """

    mean_ms: float = 40.0
    sigma_ms: float = 8.0
    floor_ms: float = 20.0

    def __post_init__(self) -> None:
        if self.sigma_ms < 0:
            raise InvalidConfig("sigma_ms must be >= 0")
        if self.sigma_ms == 0 and self.mean_ms < self.floor_ms:
            raise InvalidConfig("constant mean lies below the floor")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        if self.sigma_ms == 0:
            return np.full(n, self.mean_ms)
        a = (self.floor_ms - self.mean_ms) / self.sigma_ms
        fa = float(ndtr(a))
        z = ndtri(fa + u * (1.0 - fa))
        return self.mean_ms + self.sigma_ms * z


# -- boundary spike -----------------------------------------------------------


@dataclass(frozen=True)
class SpikeTemplate:
    """Latency excursion around a period boundary, in ms above the mean.

    The head occupies the first ``head_duration_ms`` of a period starting at
    ``head_peak_ms`` and decaying to zero; the tail ramps up to
    ``tail_peak_ms`` over the last ``tail_duration_ms``. Exponential decay
    uses a time constant of a quarter of the window.
    """

    head_duration_ms: float = 140.0
    tail_duration_ms: float = 75.0
    head_peak_ms: float = 74.0
    tail_peak_ms: float = 20.0
    shape: str = "exponential-decay"

    def __post_init__(self) -> None:
        if self.shape not in ("exponential-decay", "linear-decay"):
            raise InvalidConfig(f"unknown spike shape {self.shape!r}")
        if self.head_peak_ms <= 0:
            raise InvalidConfig("head_peak_ms must be > 0")
        if self.head_duration_ms < 0 or self.tail_duration_ms < 0:
            raise InvalidConfig("spike durations must be >= 0")
        if self.tail_peak_ms < 0:
            raise InvalidConfig("tail_peak_ms must be >= 0")

    def head_bins(self, dt_ms: float) -> int:
        return int(math.ceil(self.head_duration_ms / dt_ms - 1e-12))

    def tail_bins(self, dt_ms: float) -> int:
        return int(math.ceil(self.tail_duration_ms / dt_ms - 1e-12))

    def values(self, S: int, dt_ms: float) -> np.ndarray:
        """Spike offset for every within-period position 0..S-1."""
        hb = self.head_bins(dt_ms)
        tb = self.tail_bins(dt_ms)
        if hb + tb > S:
            raise InvalidConfig("spike windows exceed the period")
        v = np.zeros(S)
        if hb:
            s = np.arange(hb)
            if self.shape == "exponential-decay":
                tau = self.head_duration_ms / 4.0
                v[:hb] = self.head_peak_ms * np.exp(-(s * dt_ms) / tau)
            else:
                v[:hb] = self.head_peak_ms * (1.0 - s / hb)
        if tb and self.tail_peak_ms > 0:
            s = np.arange(S - tb, S)
            if self.shape == "exponential-decay":
                tau = self.tail_duration_ms / 4.0
                v[S - tb:] = self.tail_peak_ms * np.exp(-((S - 1 - s) * dt_ms) / tau)
            else:
                v[S - tb:] = self.tail_peak_ms * (s - (S - tb) + 1.0) / tb
        return v

    def value_at(self, s: int, S: int, dt_ms: float) -> float:
        """Spike offset at one within-period position."""
        if not 0 <= s < S:
            raise InvalidConfig("position outside the period")
        hb = self.head_bins(dt_ms)
        tb = self.tail_bins(dt_ms)
        if s < hb:
            if self.shape == "exponential-decay":
                return float(self.head_peak_ms * math.exp(-(s * dt_ms) / (self.head_duration_ms / 4.0)))
            return float(self.head_peak_ms * (1.0 - s / hb))
        if s >= S - tb and self.tail_peak_ms > 0:
            if self.shape == "exponential-decay":
                return float(self.tail_peak_ms * math.exp(-((S - 1 - s) * dt_ms) / (self.tail_duration_ms / 4.0)))
            return float(self.tail_peak_ms * (s - (S - tb) + 1.0) / tb)
        return 0.0


# -- configuration and ground truth -------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Full description of a synthetic trace.

    ``phase_offset`` is the within-period position (in bins, may be
    fractional) at which the first recorded regime begins; bins before it
    belong to an unrecorded lead-in regime.
    """

    n_periods: int = 100
    T_ms: float = 15_000.0
    dt_ms: float = 2.0
    phase_offset: float = 0.0
    period_mean: PeriodMeanModel = field(default_factory=PeriodMeanModel)
    noise: NoiseModel = field(default_factory=GaussianNoise)
    spike: SpikeTemplate = field(default_factory=SpikeTemplate)
    loss_rate: float = 0.0
    dl_ms: float = 20.0
    lt_ms: float = 50.0
    seed: int = 0
    start_time_ns: int = 1_700_000_000_000_000_000

    def __post_init__(self) -> None:
        if self.n_periods < 1:
            raise InvalidConfig("n_periods must be >= 1")
        if self.T_ms <= 0 or self.dt_ms <= 0:
            raise InvalidConfig("T_ms and dt_ms must be > 0")
        ratio = self.T_ms / self.dt_ms
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise InvalidConfig("T_ms must be a positive integer multiple of dt_ms")
        if not 0.0 <= self.phase_offset < ratio:
            raise InvalidConfig("phase_offset must lie in [0, S)")
        if not 0.0 <= self.loss_rate < 1.0:
            raise InvalidConfig("loss_rate must be in [0, 1)")
        if self.dl_ms < 0:
            raise InvalidConfig("dl_ms must be >= 0")
        # raises if spike windows exceed the period
        self.spike.values(self.S, self.dt_ms)

    @property
    def S(self) -> int:
        return int(round(self.T_ms / self.dt_ms))

    @property
    def dt_ns(self) -> int:
        return int(round(self.dt_ms * 1e6))


@dataclass(frozen=True)
class GroundTruth:
    """What the generator knows: phase, per-period means, true p99, labels."""

    s_star: int
    period_means_ms: np.ndarray
    p99_ms: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        for name in ("period_means_ms", "p99_ms"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            set_(self, name, a)
        set_(self, "labels", tuple(self.labels))
        if not (len(self.period_means_ms) == len(self.p99_ms) == len(self.labels)):
            raise ValueError("ground truth lengths differ")

    def to_json(self) -> str:
        return json.dumps(
            {
                "s_star": self.s_star,
                "period_means_ms": [float(v) for v in self.period_means_ms],
                "p99_ms": [float(v) for v in self.p99_ms],
                "labels": list(self.labels),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        obj = json.loads(text)
        return cls(
            s_star=int(obj["s_star"]),
            period_means_ms=np.asarray(obj["period_means_ms"], dtype=np.float64),
            p99_ms=np.asarray(obj["p99_ms"], dtype=np.float64),
            labels=tuple(obj["labels"]),
        )


def generate(config: SynthConfig) -> tuple[Trace, GroundTruth]:
    """Generate a trace of exactly ``n_periods * S`` samples plus its truth.

    Regime p (mean level and boundary spike) starts at bin
    ``round(phase_offset) + p*S``. With a nonzero phase the leading bins
    belong to regime -1, whose mean is drawn first but not recorded, so
    ground truth always covers regimes 0..n_periods-1. The uplink column
    carries the periodic process; downlink is the configured constant and
    rtt is their exact sum.
    """
    rng = np.random.default_rng(config.seed)
    S = config.S
    P = config.n_periods
    N = P * S
    s0 = int(round(config.phase_offset)) % S

    means_all = config.period_mean.sample(rng, P + 1)  # [-1, 0, .., P-1]
    noise = config.noise.sample(rng, N)
    lost = rng.random(N) < config.loss_rate if config.loss_rate > 0 else np.zeros(N, dtype=bool)

    n = np.arange(N, dtype=np.int64)
    rel = (n - s0) % S
    regime = (n - s0) // S
    spike_vals = config.spike.values(S, config.dt_ms)

    ul_ms = means_all[regime + 1] + spike_vals[rel] + noise
    ul = np.rint(np.maximum(ul_ms, 0.0) * 1e6).astype(np.int64)
    dl = np.full(N, int(round(config.dl_ms * 1e6)), dtype=np.int64)
    rtt = ul + dl
    ul[lost] = ABSENT
    dl[lost] = ABSENT
    rtt[lost] = ABSENT

    t_send = config.start_time_ns + n * config.dt_ns
    meta = infer_metadata(t_send, ul, dl, rtt, lost, source="synth")
    trace = Trace(n.astype(np.uint64), t_send, ul, dl, rtt, lost, config.dt_ns, meta)

    means = means_all[1:]
    q99 = config.noise.quantile(0.99)
    p99 = means + q99
    labels = tuple(
        GOOD if config.noise.cdf(config.lt_ms - m) >= 0.99 else DEGRADED for m in means
    )
    truth = GroundTruth(s_star=s0, period_means_ms=means, p99_ms=p99, labels=labels)
    return trace, truth
