"""CUSUM state machine, streaming-detector contract and single-run driver."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np

# Increments outside this range (e.g. infinite log-likelihood ratios at a
# support boundary) are clamped before entering the recursion.
INCREMENT_CLAMP = 1e3


class NumericInputError(ValueError):
    """Raised when a detector receives a non-finite value it cannot use."""


@dataclass(frozen=True)
class CusumState:
    threshold: float = math.inf
    drift: float = 0.0
    statistic: float = 0.0
    step_index: int = 0
    stopped_at: int | None = None


@dataclass(frozen=True)
class DetectorVerdict:
    statistic_value: float
    alarmed: bool
    step_index: int


def cusum_update(state: CusumState, increment: float) -> CusumState:
    """One step of ``S_t = max(S_{t-1} + increment - drift, 0)``.

    ``stopped_at`` is set at the first step whose statistic exceeds the
    threshold and is left alone afterwards; updates keep going past it.
    """
    if not math.isfinite(increment):
        raise NumericInputError(f"non-finite CUSUM increment {increment!r}")
    statistic = max(state.statistic + increment - state.drift, 0.0)
    step = state.step_index + 1
    stopped_at = state.stopped_at
    if stopped_at is None and statistic > state.threshold:
        stopped_at = step
    return replace(state, statistic=statistic, step_index=step, stopped_at=stopped_at)


def clamp_increments(values) -> np.ndarray:
    """Map NaN to 0 and clip everything else to +-INCREMENT_CLAMP."""
    values = np.nan_to_num(np.asarray(values, dtype=float), nan=0.0)
    return np.clip(values, -INCREMENT_CLAMP, INCREMENT_CLAMP)


def cusum_path(increments, drift: float = 0.0, initial: float = 0.0) -> np.ndarray:
    """Vectorized CUSUM trajectory for a block of increments.

    Uses ``S_t = W_t - min(0, min_{n<=t} W_n)`` with ``W`` the partial sums of
    ``increment - drift`` started at ``initial``; equal to iterating
    :func:`cusum_update` when ``initial >= 0``.
    """
    inc = np.asarray(increments, dtype=float) - drift
    if inc.size == 0:
        return inc
    if not np.all(np.isfinite(inc)):
        raise NumericInputError("non-finite CUSUM increment")
    walk = initial + np.cumsum(inc)
    floor = np.minimum(np.minimum.accumulate(walk), 0.0)
    return np.maximum(walk - floor, 0.0)


def running_max_statistic(increments, drift: float = 0.0) -> np.ndarray:
    """Brute-force ``max_{1<=k<=t} (sum_{n=k}^t (eta_n - D))^+`` for every t.

    Quadratic in the length; used as an independent check of the recursion.
    """
    inc = np.asarray(increments, dtype=float) - drift
    out = np.empty(inc.size)
    for t in range(inc.size):
        tail_sums = np.cumsum(inc[t::-1])
        out[t] = max(tail_sums.max(), 0.0)
    return out


class StreamingDetector(ABC):
    """Common interface of every detector in the package.

    A detector consumes observations in arbitrary blocks and emits a
    statistic every ``stride`` observations (after any warm-up). It alarms
    when the statistic exceeds ``threshold``. Detectors that need a pre-change
    warm-up advertise its length through ``burn_in``; the driver feeds such
    data to :meth:`warm_up` before the monitored sequence.

    Subclasses implement :meth:`_consume` and :meth:`_reset_state`; the base
    class keeps the observation clock and the emission bookkeeping.
    """

    threshold: float = math.inf
    stride: int = 1
    burn_in: int = 0
    initial_statistic: float = 0.0

    def reset(self) -> None:
        """Return to the freshly constructed state."""
        self._reset_state()
        self._clock = 0
        self._emitted = 0
        self.last_obs_index = np.empty(0, dtype=np.int64)
        self.last_increments = None

    @abstractmethod
    def _reset_state(self) -> None:
        ...

    @abstractmethod
    def _consume(self, block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return emitted statistics and their 1-based offsets within ``block``."""

    @abstractmethod
    def current_statistic(self) -> float:
        ...

    def _restart_statistic(self) -> None:
        """Zero the alarm statistic while keeping learned state."""

    def process(self, observations) -> np.ndarray:
        """Consume a block of rows and return the statistics emitted for it.

        Observation indices of the emissions (1-based, counted since the last
        reset or warm-up) are left in ``last_obs_index``.
        """
        block = np.asarray(observations, dtype=float)
        if block.ndim == 1:
            block = block[None, :]
        if block.shape[0] == 0:
            self.last_obs_index = np.empty(0, dtype=np.int64)
            return np.empty(0)
        stats, offsets = self._consume(block)
        self.last_obs_index = self._clock + np.asarray(offsets, dtype=np.int64)
        self._clock += block.shape[0]
        self._emitted += len(stats)
        return np.asarray(stats, dtype=float)

    def warm_up(self, observations) -> None:
        """Feed pre-change data, then zero the statistic and the clock."""
        if len(observations):
            self.process(observations)
        self._restart_statistic()
        self._clock = 0
        self._emitted = 0

    def observe_batch(self, observations) -> list[DetectorVerdict]:
        start = self._emitted
        values = self.process(observations)
        return [
            DetectorVerdict(float(v), bool(v > self.threshold), start + i + 1)
            for i, v in enumerate(values)
        ]

    @property
    def emitted(self) -> int:
        return self._emitted


@dataclass
class RunResult:
    """Trajectory of one detector over one sequence.

    ``statistics[j]`` was emitted after observation ``obs_index[j]``
    (1-based). ``stopped_at`` is the 1-based statistic index of the first
    threshold crossing, ``alarm_time`` the matching observation index.
    """

    statistics: np.ndarray
    obs_index: np.ndarray
    threshold: float
    change_point: int | None = None
    stopped_at: int | None = None
    alarm_time: int | None = None
    increments: np.ndarray | None = None

    @property
    def max_before_change(self) -> float:
        k = self.change_point if self.change_point is not None else np.inf
        mask = self.obs_index <= k
        return float(self.statistics[mask].max()) if mask.any() else -math.inf

    @property
    def max_after_change(self) -> float:
        if self.change_point is None:
            return -math.inf
        mask = self.obs_index > self.change_point
        return float(self.statistics[mask].max()) if mask.any() else -math.inf

    @property
    def max_statistic(self) -> float:
        return float(self.statistics.max()) if self.statistics.size else -math.inf

    def first_crossing_after(self, time: int, threshold: float | None = None) -> int | None:
        """Observation index of the first crossing strictly after ``time``."""
        b = self.threshold if threshold is None else threshold
        hits = np.flatnonzero((self.obs_index > time) & (self.statistics > b))
        return int(self.obs_index[hits[0]]) if hits.size else None


def run_to_stop(
    detector: StreamingDetector,
    sequence,
    horizon: int | None = None,
    threshold: float | None = None,
) -> RunResult:
    """Run a (reset, warmed-up) detector over ``sequence`` up to ``horizon``.

    The statistic trajectory is not truncated at the first alarm.
    ``sequence`` is an :class:`~nncusum.datagen.ObservationSequence` or a
    bare ``T x d`` array.
    """
    data = getattr(sequence, "data", sequence)
    change_point = getattr(sequence, "change_point", None)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("sequence must be a non-empty T x d array")
    if horizon is None:
        horizon = data.shape[0]
    if horizon < 1 or horizon > data.shape[0]:
        raise ValueError(f"horizon {horizon} outside 1..{data.shape[0]}")
    b = detector.threshold if threshold is None else threshold

    stats = detector.process(data[:horizon])
    obs_index = detector.last_obs_index.copy()

    stopped_at = alarm_time = None
    crossings = np.flatnonzero(stats > b)
    if crossings.size:
        stopped_at = int(crossings[0]) + 1
        alarm_time = int(obs_index[crossings[0]])
    increments = detector.last_increments
    return RunResult(
        statistics=np.asarray(stats, dtype=float),
        obs_index=obs_index,
        threshold=b,
        change_point=change_point,
        stopped_at=stopped_at,
        alarm_time=alarm_time,
        increments=increments,
    )
