"""Monte Carlo evaluation: ARL fits, threshold calibration, EDD/Type-I metrics.

A *detector factory* is any callable ``factory(seed) -> StreamingDetector``
returning a fresh detector. Sequence ``i`` of a run set is driven by
``derive_seed(seed, i)``, split further into a detector stream and a data
stream, so run sets are reproducible and prefix-stable in ``n_sequences``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, stats

from .core import RunResult, StreamingDetector, run_to_stop
from .datagen import ObservationSequence
from .seeding import derive_seed

DetectorFactory = Callable[[np.random.SeedSequence], StreamingDetector]


class CalibrationError(RuntimeError):
    """The threshold search could not bracket the requested target."""


@dataclass(frozen=True)
class ArlFit:
    horizon: int
    n_sequences: int
    crossing_fraction: float
    rate: float
    arl_estimate: float

    @classmethod
    def from_fraction(cls, crossing_fraction: float, horizon: int, n_sequences: int) -> ArlFit:
        """``rate = -log(1 - p) / T`` and ``ARL = 1 / rate``."""
        p = float(crossing_fraction)
        if p >= 1.0:
            rate = math.inf
        else:
            rate = -math.log1p(-p) / horizon
        arl = math.inf if rate == 0.0 else 1.0 / rate
        return cls(horizon, n_sequences, p, rate, arl)

    @classmethod
    def from_maxima(cls, maxima, threshold: float, horizon: int) -> ArlFit:
        maxima = np.asarray(maxima, dtype=float)
        return cls.from_fraction(float(np.mean(maxima > threshold)), horizon, maxima.size)

    @property
    def out_of_range(self) -> bool:
        """No crossings (ARL infinite) or only crossings (ARL zero)."""
        return self.crossing_fraction in (0.0, 1.0)


@dataclass(frozen=True)
class Calibration:
    threshold: float
    fit: ArlFit
    target: float
    iterations: int
    boundary: bool = False


@dataclass
class MetricReport:
    arl: float
    edd: float
    edd_se: float
    type1_error: float
    failure_rate: float
    threshold: float
    n_sequences: int
    horizon: int
    change_point: int
    censored_count: int
    conditional_edd: float = math.nan
    pre_increment_mean: float = math.nan
    post_increment_mean: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)


def simulate(
    factory: DetectorFactory,
    pre,
    post,
    change_point: int,
    horizon: int,
    seed,
) -> RunResult:
    """One sequence: burn-in (if the detector asks for it), then ``pre`` up to
    ``change_point`` and ``post`` afterwards, monitored up to ``horizon``.
    """
    if not 0 <= change_point <= horizon:
        raise ValueError("change_point must lie in [0, horizon]")
    detector = factory(derive_seed(seed, "detector"))
    rng = np.random.default_rng(derive_seed(seed, "data"))
    if detector.burn_in:
        detector.warm_up(pre.sample(detector.burn_in, rng))
    parts = [pre.sample(change_point, rng)] if change_point else []
    if horizon > change_point:
        if post is None:
            raise ValueError("post-change source needed when change_point < horizon")
        parts.append(post.sample(horizon - change_point, rng))
    data = np.concatenate(parts)
    k = change_point if horizon > change_point else None
    return run_to_stop(detector, ObservationSequence(data, change_point=k))


def run_set(factory, pre, post, change_point, horizon, n_sequences, seed) -> list[RunResult]:
    return [simulate(factory, pre, post, change_point, horizon, derive_seed(seed, i))
            for i in range(n_sequences)]


def pre_change_runs(factory: DetectorFactory, pre, horizon: int, n_sequences: int, seed) -> list[RunResult]:
    return [simulate(factory, pre, None, horizon, horizon, derive_seed(seed, i)) for i in range(n_sequences)]


def run_maxima(runs: list[RunResult], until: int | None = None) -> np.ndarray:
    """Per-run maximum statistic over observations ``1..until``; ``-inf`` if none."""
    out = np.empty(len(runs))
    for i, run in enumerate(runs):
        mask = run.obs_index <= (math.inf if until is None else until)
        out[i] = run.statistics[mask].max() if mask.any() else -math.inf
    return out


def first_crossings(runs: list[RunResult], threshold: float) -> np.ndarray:
    """Observation index of each run's first crossing of ``threshold`` (``inf`` if none)."""
    out = np.full(len(runs), math.inf)
    for i, run in enumerate(runs):
        hits = np.flatnonzero(run.statistics > threshold)
        if hits.size:
            out[i] = run.obs_index[hits[0]]
    return out


def pre_change_maxima(
    factory: DetectorFactory,
    pre,
    horizon: int,
    n_sequences: int,
    seed,
) -> np.ndarray:
    """Per-sequence maximum statistic of pre-change-only runs of length ``horizon``."""
    return run_maxima(pre_change_runs(factory, pre, horizon, n_sequences, seed))


def estimate_arl(factory, pre, threshold: float, horizon: int, n_sequences: int, seed) -> ArlFit:
    maxima = pre_change_maxima(factory, pre, horizon, n_sequences, seed)
    return ArlFit.from_maxima(maxima, threshold, horizon)


def calibrate_from_maxima(
    maxima,
    target_arl: float,
    horizon: int,
    tolerance: float = 0.1,
    b_range: tuple[float, float] | None = None,
    max_iter: int = 200,
) -> Calibration:
    """Bisection on ``b`` until the fitted ARL is within ``tolerance`` of the target.

    Trajectories do not depend on ``b``, so the crossing fraction at any ``b``
    is read off cached per-sequence maxima.
    """
    if target_arl <= 0:
        raise ValueError("target_arl must be positive")
    maxima = np.asarray(maxima, dtype=float)
    finite = maxima[np.isfinite(maxima)]
    if b_range is None:
        if finite.size == 0:
            raise CalibrationError("no statistic was emitted in any calibration run")
        b_range = (float(finite.min()) - 1.0, float(finite.max()) + 1.0)
    lo, hi = b_range

    def arl(b: float) -> float:
        return ArlFit.from_maxima(maxima, b, horizon).arl_estimate

    if not arl(lo) <= target_arl <= arl(hi):
        raise CalibrationError(
            f"target ARL {target_arl} not bracketed by b in [{lo}, {hi}] "
            f"(ARL {arl(lo):.4g} .. {arl(hi):.4g})"
        )
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        value = arl(mid)
        if abs(value - target_arl) <= tolerance * target_arl:
            return Calibration(mid, ArlFit.from_maxima(maxima, mid, horizon), target_arl, it)
        if value < target_arl:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            break
    # The fitted ARL is a step function of b and can jump over the whole
    # tolerance band (e.g. every run has the same maximum). Fall back to the
    # smallest b with ARL >= target, flagged as a boundary case.
    for b in np.unique(np.r_[finite, hi]):
        if arl(b) >= target_arl:
            return Calibration(float(b), ArlFit.from_maxima(maxima, b, horizon), target_arl, it, boundary=True)
    raise CalibrationError(f"no threshold reaches ARL {target_arl}")  # unreachable: arl(hi) >= target


def calibrate_threshold(
    factory,
    pre,
    target_arl: float,
    horizon: int,
    n_sequences: int,
    seed,
    tolerance: float = 0.1,
    b_range: tuple[float, float] | None = None,
) -> Calibration:
    maxima = pre_change_maxima(factory, pre, horizon, n_sequences, seed)
    return calibrate_from_maxima(maxima, target_arl, horizon, tolerance, b_range)


def type1_threshold_from_maxima(maxima, target_type1: float, horizon: int | None = None) -> Calibration:
    """``b`` = empirical ``(1 - target)`` quantile of the pre-change maxima.

    When ``n * target < 1`` the quantile sits at the sample maximum and the
    result is flagged as a boundary case.
    """
    if not 0.0 < target_type1 < 1.0:
        raise ValueError("target Type-I error must lie in (0, 1)")
    maxima = np.asarray(maxima, dtype=float)
    if maxima.size == 0:
        raise ValueError("need at least one calibration run")
    boundary = maxima.size * target_type1 < 1.0
    b = float(maxima.max()) if boundary else float(np.quantile(maxima, 1.0 - target_type1))
    fit = ArlFit.from_maxima(maxima, b, horizon or 1)
    return Calibration(b, fit, target_type1, 0, boundary)


def calibrate_threshold_type1(factory, pre, target_type1: float, change_point: int,
                              n_sequences: int, seed) -> Calibration:
    maxima = pre_change_maxima(factory, pre, change_point, n_sequences, seed)
    return type1_threshold_from_maxima(maxima, target_type1, change_point)


def metrics_from_runs(runs: list[RunResult], threshold: float, horizon: int, arl: float = math.nan) -> MetricReport:
    if not runs:
        raise ValueError("no runs to summarize")
    k = runs[0].change_point
    if k is None:
        raise ValueError("runs carry no change point")
    n = len(runs)
    delay = np.empty(n)
    censored = np.zeros(n, dtype=bool)
    pre_inc, post_inc = [], []
    for i, run in enumerate(runs):
        hit = run.first_crossing_after(k, threshold)
        if hit is None:
            censored[i] = True
            delay[i] = horizon - k
        else:
            delay[i] = hit - k
        if run.increments is not None and len(run.increments) == run.obs_index.size:
            before = run.obs_index <= k
            if before.any():
                pre_inc.append(float(np.mean(run.increments[before])))
            if (~before).any():
                post_inc.append(float(np.mean(run.increments[~before])))
    type1 = float(np.mean([run.max_before_change > threshold for run in runs]))
    failure = float(np.mean([not run.max_after_change > threshold for run in runs]))
    edd = float(delay.mean())
    edd_se = float(delay.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    detected = delay[~censored]
    return MetricReport(
        arl=float(arl),
        edd=edd,
        edd_se=edd_se,
        type1_error=type1,
        failure_rate=failure,
        threshold=float(threshold),
        n_sequences=n,
        horizon=horizon,
        change_point=k,
        censored_count=int(censored.sum()),
        conditional_edd=float(detected.mean()) if detected.size else math.nan,
        pre_increment_mean=float(np.mean(pre_inc)) if pre_inc else math.nan,
        post_increment_mean=float(np.mean(post_inc)) if post_inc else math.nan,
    )


def evaluate(
    factory,
    pre,
    post,
    change_point: int,
    horizon: int,
    threshold: float,
    n_sequences: int,
    seed,
    arl: float = math.nan,
    return_runs: bool = False,
):
    """EDD (censored at ``horizon - k``), Type-I error and failure rate.

    With ``return_runs`` the per-sequence :class:`RunResult` list is returned
    alongside the report.
    """
    if not 0 < change_point < horizon:
        raise ValueError("need 0 < change_point < horizon")
    runs = run_set(factory, pre, post, change_point, horizon, n_sequences, seed)
    report = metrics_from_runs(runs, threshold, horizon, arl)
    return (report, runs) if return_runs else report


def stopping_time(detector: StreamingDetector, source, threshold: float, horizon: int,
                  rng: np.random.Generator, chunk: int = 1000) -> float:
    """First observation index with statistic > threshold, ``inf`` if none by ``horizon``."""
    seen = 0
    while seen < horizon:
        n = min(chunk, horizon - seen)
        values = detector.process(source.sample(n, rng))
        hits = np.flatnonzero(values > threshold)
        if hits.size:
            return float(detector.last_obs_index[hits[0]])
        seen += n
    return math.inf


def pre_change_stopping_times(factory, pre, threshold: float, horizon: int, n_sequences: int,
                              seed, chunk: int = 1000) -> np.ndarray:
    out = np.empty(n_sequences)
    for i in range(n_sequences):
        s = derive_seed(seed, i)
        detector = factory(derive_seed(s, "detector"))
        rng = np.random.default_rng(derive_seed(s, "data"))
        if detector.burn_in:
            detector.warm_up(pre.sample(detector.burn_in, rng))
        out[i] = stopping_time(detector, pre, threshold, horizon, rng, chunk)
    return out


@dataclass(frozen=True)
class ExponentialTailFit:
    rate: float
    ks_distance: float
    n_crossed: int
    n_sequences: int
    horizon: int
    method: str

    @property
    def arl(self) -> float:
        return math.inf if self.rate == 0 else 1.0 / self.rate


def fit_exponential_tail(stopping_times, horizon: int, method: str = "regression") -> ExponentialTailFit:
    """Fit ``P(tau > t) = exp(-rate t)`` to (right-censored) stopping times.

    ``regression`` least-squares fits the curve to the empirical survival
    function at the observed crossing times; ``mle`` is the censored
    exponential maximum-likelihood rate. The KS distance compares crossed
    stopping times with the fitted law conditioned on ``tau <= horizon``.
    """
    taus = np.asarray(stopping_times, dtype=float)
    crossed = np.sort(taus[taus <= horizon])
    n = taus.size
    if crossed.size == 0:
        return ExponentialTailFit(0.0, math.nan, 0, n, horizon, method)
    if method == "mle":
        rate = crossed.size / float(np.minimum(taus, horizon).sum())
    elif method == "regression":
        times = np.unique(crossed)
        survival = 1.0 - np.searchsorted(crossed, times, side="right") / n
        mle = crossed.size / float(np.minimum(taus, horizon).sum())

        def sse(log_rate: float) -> float:
            return float(np.sum((survival - np.exp(-np.exp(log_rate) * times)) ** 2))

        res = optimize.minimize_scalar(sse, bounds=(math.log(mle) - 5, math.log(mle) + 5), method="bounded")
        rate = float(np.exp(res.x))
    else:
        raise ValueError(f"unknown method {method!r}")
    mass = -math.expm1(-rate * horizon)
    ks = stats.kstest(crossed, lambda t: -np.expm1(-rate * np.asarray(t)) / mass).statistic
    return ExponentialTailFit(rate, float(ks), int(crossed.size), n, horizon, method)


@dataclass(frozen=True)
class ArlCurve:
    thresholds: np.ndarray
    fits: list[ArlFit] = field(default_factory=list)

    def usable(self) -> np.ndarray:
        return np.array([not f.out_of_range for f in self.fits])

    def log_linear_fit(self) -> tuple[float, float, float]:
        """Slope, intercept and R^2 of ``log ARL`` on ``b`` over in-range points."""
        mask = self.usable()
        if mask.sum() < 2:
            raise ValueError("fewer than two thresholds with an in-range ARL fit")
        b = self.thresholds[mask]
        y = np.log([f.arl_estimate for f, m in zip(self.fits, mask) if m])
        slope, intercept = np.polyfit(b, y, 1)
        resid = y - (slope * b + intercept)
        total = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - float(np.sum(resid**2) / total) if total > 0 else 1.0
        return float(slope), float(intercept), r2


def arl_curve(maxima, thresholds, horizon: int) -> ArlCurve:
    thresholds = np.asarray(thresholds, dtype=float)
    return ArlCurve(thresholds, [ArlFit.from_maxima(maxima, b, horizon) for b in thresholds])
