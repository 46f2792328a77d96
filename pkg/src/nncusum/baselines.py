"""Comparison detectors: exact CUSUM, Hotelling CUSUM, MEWMA, window-limited
CUSUM and GLR, and the two online neural-network baselines (ONNC, ONNR).

The Gaussian-moment detectors work on whitened data ``L^{-1}(x - mu)`` with
``L`` the Cholesky factor of the regularized reference covariance, so every
quadratic form below is a plain squared norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import NumericInputError, StreamingDetector, clamp_increments, cusum_path
from .datagen import DistributionSpec, log_likelihood_ratio
from .neural import LossKind, OutputActivation
from .nn_cusum import ReferencePool, TrainingConfig, WindowConfig, WindowedNetworkDetector

LOGIT_CLAMP = 1e-7


@dataclass
class GaussianMoments:
    mean: np.ndarray
    covariance: np.ndarray
    regularizer: float
    count: int

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if not np.allclose(self.covariance, self.covariance.T):
            raise ValueError("covariance must be symmetric")
        if self.regularizer < 0:
            raise ValueError("regularizer must be nonnegative")
        reg = self.covariance + self.regularizer * np.eye(self.dim)
        try:
            self._chol = np.linalg.cholesky(reg)
        except np.linalg.LinAlgError:
            raise NumericInputError("regularized covariance is not positive definite") from None

    @classmethod
    def fit(cls, samples, regularizer: float | None = None) -> GaussianMoments:
        """Sample mean and covariance; default ``nu = 1e-3 * trace / d``."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] < 2:
            raise ValueError("need at least two reference rows")
        mean = samples.mean(axis=0)
        cov = np.atleast_2d(np.cov(samples, rowvar=False))
        if regularizer is None:
            regularizer = 1e-3 * np.trace(cov) / cov.shape[0]
        return cls(mean, cov, float(regularizer), samples.shape[0])

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    def whiten(self, x) -> np.ndarray:
        """``L^{-1}(x - mean)`` row by row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.solve(self._chol, (x - self.mean).T).T


class _BlockDetector(StreamingDetector):
    """Stride-1 detector whose per-block work is vectorized."""

    def _offsets(self, n: int) -> np.ndarray:
        return np.arange(1, n + 1, dtype=np.int64)


class _CusumBlockDetector(_BlockDetector):
    """CUSUM over per-observation increments computed a block at a time."""

    def _reset_state(self) -> None:
        self._statistic = 0.0

    def _increments(self, block: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _consume(self, block):
        inc = self._increments(block)
        path = cusum_path(inc, initial=self._statistic)
        self._statistic = float(path[-1])
        self.last_increments = inc
        return path, self._offsets(block.shape[0])

    def _restart_statistic(self) -> None:
        self._statistic = 0.0

    def current_statistic(self) -> float:
        return self._statistic


class ExactCusum(_CusumBlockDetector):
    """CUSUM on the true log-likelihood ratio ``log f1(x) - log f0(x)``."""

    def __init__(self, pre: DistributionSpec, post: DistributionSpec, threshold: float = math.inf) -> None:
        self.pre = pre
        self.post = post
        self.threshold = float(threshold)
        self._lower = min(pre.support_lower(), post.support_lower())
        self.reset()

    def _increments(self, block):
        if np.any(block < self._lower):
            raise NumericInputError("observation outside both supports")
        return clamp_increments(log_likelihood_ratio(self.pre, self.post, block))


class HotellingCusum(_CusumBlockDetector):
    """CUSUM on ``0.5 |x - mu|^2_{(Sigma + nu I)^{-1}} - offset``."""

    def __init__(self, moments: GaussianMoments, offset: float, threshold: float = math.inf) -> None:
        self.moments = moments
        self.offset = float(offset)
        self.threshold = float(threshold)
        self.reset()

    @classmethod
    def from_reference(
        cls,
        samples,
        regularizer: float | None = None,
        epsilon: float | None = None,
        holdout: float = 0.5,
        threshold: float = math.inf,
    ) -> HotellingCusum:
        """Moments from the first part of ``samples``, offset from the rest.

        The offset is the held-out mean of ``g0`` plus ``epsilon``, which
        defaults to 5% of that mean.
        """
        samples = np.asarray(samples, dtype=float)
        cut = int(round((1 - holdout) * samples.shape[0]))
        if cut < 2 or cut >= samples.shape[0]:
            raise ValueError("reference sample too small for a held-out split")
        moments = GaussianMoments.fit(samples[:cut], regularizer)
        baseline = float(hotelling_g0(moments, samples[cut:]).mean())
        if epsilon is None:
            epsilon = 0.05 * baseline
        return cls(moments, baseline + epsilon, threshold)

    def _increments(self, block):
        return hotelling_g0(self.moments, block) - self.offset


def hotelling_g0(moments: GaussianMoments, x) -> np.ndarray:
    return 0.5 * np.sum(moments.whiten(x) ** 2, axis=1)


def mewma_scale(decay: float, t) -> np.ndarray:
    """``r (1 - (1 - r)^{2t}) / (2 - r)``, the pre-change covariance factor of z_t."""
    t = np.asarray(t, dtype=float)
    return decay * (1.0 - (1.0 - decay) ** (2 * t)) / (2.0 - decay)


@dataclass
class MewmaState:
    decay: float
    z: np.ndarray
    t: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")


class Mewma(_BlockDetector):
    """Shewhart chart on ``z_t^T Sigma_{z_t}^{-1} z_t``.

    ``z`` is the exponentially weighted average of centred observations.
    Centring and the base covariance both come from ``moments``.
    """

    def __init__(self, moments: GaussianMoments, decay: float = 0.1, threshold: float = math.inf) -> None:
        self.moments = moments
        self.decay = float(decay)
        self.threshold = float(threshold)
        self.reset()

    @classmethod
    def from_reference(cls, samples, decay: float = 0.1, regularizer: float | None = None,
                       threshold: float = math.inf) -> Mewma:
        return cls(GaussianMoments.fit(samples, regularizer), decay, threshold)

    def _reset_state(self) -> None:
        # z is kept in whitened coordinates
        self.state = MewmaState(self.decay, np.zeros(self.moments.dim))
        self._value = 0.0

    def _consume(self, block):
        y = self.moments.whiten(block)
        r = self.decay
        z, t = self.state.z.copy(), self.state.t
        out = np.empty(y.shape[0])
        for i, row in enumerate(y):
            z = r * row + (1.0 - r) * z
            t += 1
            out[i] = float(z @ z) / mewma_scale(r, t)
        self.state = MewmaState(r, z, t)
        self._value = float(out[-1])
        return out, self._offsets(block.shape[0])

    def _restart_statistic(self) -> None:
        self.state = MewmaState(self.decay, np.zeros(self.moments.dim))
        self._value = 0.0

    def current_statistic(self) -> float:
        return self._value


class _WindowHistory:
    """Last ``w`` whitened rows, carried across blocks."""

    def __init__(self, window: int, dim: int) -> None:
        self.window = window
        self.rows = np.empty((0, dim))

    def extend(self, y: np.ndarray) -> np.ndarray:
        """History followed by ``y``; history is then trimmed to the window."""
        full = np.concatenate([self.rows, y])
        self.rows = full[-self.window :]
        return full


class WlCusum(_CusumBlockDetector):
    """Window-limited CUSUM with a Gaussian mean estimated over the last ``w`` rows.

    The increment for ``x_t`` is ``log N(x_t; theta, Sigma) - log N(x_t; mu, Sigma)``
    with ``theta`` the mean of ``x_{t-w}, ..., x_{t-1}``; it is 0 until ``w``
    earlier rows exist.
    """

    def __init__(self, moments: GaussianMoments, window: int = 200, threshold: float = math.inf) -> None:
        if window < 1:
            raise ValueError("window must be positive")
        self.moments = moments
        self.window = int(window)
        self.threshold = float(threshold)
        self.reset()

    def _reset_state(self) -> None:
        super()._reset_state()
        self._history = _WindowHistory(self.window, self.moments.dim)

    def _increments(self, block):
        y = self.moments.whiten(block)
        lead = self._history.rows.shape[0]
        full = self._history.extend(y)
        csum = np.vstack([np.zeros((1, full.shape[1])), np.cumsum(full, axis=0)])
        pos = lead + np.arange(y.shape[0])  # index of each new row within full
        ready = pos >= self.window
        inc = np.zeros(y.shape[0])
        p = pos[ready]
        theta = (csum[p] - csum[p - self.window]) / self.window
        inc[ready] = np.sum(theta * y[ready], axis=1) - 0.5 * np.sum(theta**2, axis=1)
        return inc


class WlGlr(_BlockDetector):
    """Shewhart chart on the window-limited Gaussian mean-shift GLR.

    ``S_t = max_{1<=k<=min(t, w)} |sum of the last k whitened rows|^2 / k``.
    """

    def __init__(self, moments: GaussianMoments, window: int = 200, threshold: float = math.inf) -> None:
        if window < 1:
            raise ValueError("window must be positive")
        self.moments = moments
        self.window = int(window)
        self.threshold = float(threshold)
        self.reset()

    def _reset_state(self) -> None:
        self._history = _WindowHistory(self.window, self.moments.dim)
        self._value = 0.0

    def _consume(self, block):
        y = self.moments.whiten(block)
        lead = self._history.rows.shape[0]
        full = self._history.extend(y)
        csum = np.vstack([np.zeros((1, full.shape[1])), np.cumsum(full, axis=0)])
        out = np.empty(y.shape[0])
        for i in range(y.shape[0]):
            end = lead + i + 1
            start = max(end - self.window, 0)
            tails = csum[end] - csum[start:end][::-1]  # k = 1..end-start
            k = np.arange(1, end - start + 1)
            out[i] = float(np.max(np.sum(tails**2, axis=1) / k))
        self._value = float(out[-1])
        return out, self._offsets(block.shape[0])

    def _restart_statistic(self) -> None:
        self._history = _WindowHistory(self.window, self.moments.dim)
        self._value = 0.0

    def current_statistic(self) -> float:
        return self._value


class Onnc(WindowedNetworkDetector):
    """Sigmoid classifier on the NN-CUSUM stacks, Shewhart on summed log-odds.

    The statistic is the mean log-odds over the stream testing stack plus the
    mean log-odds over the reference testing stack.
    """

    def __init__(self, window: WindowConfig, training: TrainingConfig, pool: ReferencePool,
                 seed=0, threshold: float = math.inf) -> None:
        training = replace(training, loss=LossKind.LOGISTIC)
        super().__init__(window, training, pool, seed, threshold)

    def _build_models(self) -> None:
        self.model, self.opt = self._new_model(OutputActivation.SIGMOID)
        self._value = 0.0

    def _train(self):
        if self.training.mode == "scratch":
            self.model, self.opt = self._new_model(OutputActivation.SIGMOID)
        return self._epochs(self.model, self.opt)

    def _statistic(self) -> float:
        stream, ref = self.stacks.test_stream.data, self.stacks.test_ref.data
        g = np.clip(self.model.forward(np.concatenate([stream, ref])), LOGIT_CLAMP, 1 - LOGIT_CLAMP)
        log_odds = np.log(g) - np.log1p(-g)
        m = stream.shape[0]
        self._value = float(log_odds[:m].mean() + log_odds[m:].mean())
        return self._value

    def _restart_statistic(self) -> None:
        self._value = 0.0

    def current_statistic(self) -> float:
        return self._value


class Onnr(WindowedNetworkDetector):
    """Two density-ratio regressors, Shewhart on their summed excess over 1.

    ``model_a`` treats the stream as the numerator sample, ``model_b`` the
    reference; the statistic is ``mean(g_a - 1)`` over the stream testing
    stack plus ``mean(g_b - 1)`` over the reference testing stack.
    """

    def __init__(self, window: WindowConfig, training: TrainingConfig, pool: ReferencePool,
                 seed=0, threshold: float = math.inf) -> None:
        training = replace(training, loss=LossKind.ONNR)
        super().__init__(window, training, pool, seed, threshold)

    @property
    def weight(self) -> float:
        return self.training.onnr_weight

    def _build_models(self) -> None:
        self.model_a, self.opt_a = self._new_model()
        self.model_b, self.opt_b = self._new_model()
        self._value = 0.0

    def _train(self):
        if self.training.mode == "scratch":
            self._build_models()
        loss_a = self._epochs(self.model_a, self.opt_a)
        loss_b = self._epochs(self.model_b, self.opt_b, flip_labels=True)
        if loss_a is None or loss_b is None:
            return None
        return 0.5 * (loss_a + loss_b)

    def _statistic(self) -> float:
        stream, ref = self.stacks.test_stream.data, self.stacks.test_ref.data
        self._value = float((self.model_a.forward(stream) - 1).mean() + (self.model_b.forward(ref) - 1).mean())
        return self._value

    def _restart_statistic(self) -> None:
        self._value = 0.0

    def current_statistic(self) -> float:
        return self._value
