"""NN-CUSUM: sliding train/test stacks, online network training, CUSUM.

Stream observations arrive in strides of ``s`` rows. Each stride is split
between a training stack and a testing stack, and the same numbers of fresh
reference (pre-change) rows are drawn into mirror stacks. The network is
trained to separate stream (label 1) from reference (label 0) on the training
stacks; the increment is the mean test-function gap on the testing stacks,
and it drives ``S_t = max(S_{t-1} + eta_t - D, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import StreamingDetector
from .neural import Adam, LossKind, Mlp, OutputActivation, batch_gradient, test_function_value
from .seeding import child_seeds, derive_seed


@dataclass(frozen=True)
class WindowConfig:
    window_length: int = 200
    split_ratio: float = 0.5
    stride: int = 10
    train_every: int = 1
    burn_in: int = 0

    def __post_init__(self) -> None:
        w, a, s = self.window_length, self.split_ratio, self.stride
        if w < 1 or s < 1:
            raise ValueError("window_length and stride must be positive")
        if not 0.0 < a < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if s > w:
            raise ValueError("stride cannot exceed the window length")
        for label, value in (("split_ratio * window_length", a * w), ("split_ratio * stride", a * s)):
            if abs(value - round(value)) > 1e-9:
                raise ValueError(f"{label} = {value} is not an integer")
        if round(a * w) < 1 or round((1 - a) * w) < 1:
            raise ValueError("both window splits must hold at least one observation")
        if round(a * s) < 1 or round((1 - a) * s) < 1:
            raise ValueError("both stride splits must receive at least one observation")
        if self.train_every < 1:
            raise ValueError("train_every must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    @property
    def train_size(self) -> int:
        return int(round(self.split_ratio * self.window_length))

    @property
    def test_size(self) -> int:
        return self.window_length - self.train_size

    @property
    def train_per_stride(self) -> int:
        return int(round(self.split_ratio * self.stride))

    @property
    def test_per_stride(self) -> int:
        return self.stride - self.train_per_stride


@dataclass(frozen=True)
class TrainingConfig:
    hidden_width: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 100
    loss: LossKind = LossKind.LOGISTIC
    # "continual" keeps one network; "scratch" re-initializes before each pass
    mode: str = "continual"
    epochs: int = 1
    onnr_weight: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.hidden_width < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("hidden_width, batch_size and epochs must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.mode not in ("continual", "scratch"):
            raise ValueError("mode must be 'continual' or 'scratch'")
        if not 0.0 < self.onnr_weight < 1.0:
            raise ValueError("onnr_weight must lie in (0, 1)")


class RingBuffer:
    """Fixed-capacity row buffer that overwrites its oldest rows."""

    def __init__(self, capacity: int, dim: int) -> None:
        self.capacity = int(capacity)
        self._rows = np.zeros((self.capacity, dim))
        self._next = 0
        self.count = 0

    def append(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=float)
        n = rows.shape[0]
        if n >= self.capacity:
            self._rows[:] = rows[n - self.capacity :]
            self._next = 0
            self.count = self.capacity
            return
        end = self._next + n
        if end <= self.capacity:
            self._rows[self._next : end] = rows
        else:
            split = self.capacity - self._next
            self._rows[self._next :] = rows[:split]
            self._rows[: n - split] = rows[split:]
        self._next = end % self.capacity
        self.count = min(self.count + n, self.capacity)

    @property
    def full(self) -> bool:
        return self.count == self.capacity

    @property
    def data(self) -> np.ndarray:
        """Stored rows (storage order, not arrival order)."""
        return self._rows if self.full else self._rows[: self.count]

    def ordered(self) -> np.ndarray:
        """Stored rows from oldest to newest."""
        if not self.full:
            return self._rows[: self.count].copy()
        return np.concatenate([self._rows[self._next :], self._rows[: self._next]])

    def clear(self) -> None:
        self._next = 0
        self.count = 0


class SlidingStacks:
    """Training/testing stacks for stream (label 1) and reference (label 0)."""

    def __init__(self, window: WindowConfig, dim: int) -> None:
        self.window = window
        self.train_stream = RingBuffer(window.train_size, dim)
        self.test_stream = RingBuffer(window.test_size, dim)
        self.train_ref = RingBuffer(window.train_size, dim)
        self.test_ref = RingBuffer(window.test_size, dim)

    @property
    def buffers(self) -> tuple[RingBuffer, ...]:
        return (self.train_stream, self.test_stream, self.train_ref, self.test_ref)

    @property
    def train_full(self) -> bool:
        return self.train_stream.full and self.train_ref.full

    @property
    def test_full(self) -> bool:
        return self.test_stream.full and self.test_ref.full

    @property
    def stream_count(self) -> int:
        return self.train_stream.count + self.test_stream.count

    def clear(self) -> None:
        for buf in self.buffers:
            buf.clear()


class ReferencePool:
    """Pre-change samples used as the label-0 class.

    With ``disjoint=True`` (default) training-stack draws and testing-stack
    draws come from two disjoint parts of the pool, split in the window's
    train/test ratio. A finite pool otherwise recycles rows the network has
    already been trained on into the testing stack, which biases pre-change
    increments upwards.
    """

    def __init__(self, samples: np.ndarray, disjoint: bool = True) -> None:
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] == 0:
            raise ValueError("reference pool must be a non-empty N x d matrix")
        self.samples = samples
        self.disjoint = disjoint

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def draw(self, n: int, rng: np.random.Generator, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """``n`` rows from ``samples[lo:hi]``, distinct within the call."""
        hi = self.size if hi is None else hi
        if n > hi - lo:
            raise ValueError(f"cannot draw {n} distinct rows from {hi - lo} reference rows")
        return self.samples[lo + rng.choice(hi - lo, size=n, replace=False)]

    def draw_split(self, n_train: int, n_test: int, rng: np.random.Generator, ratio: float):
        if not self.disjoint:
            rows = self.draw(n_train + n_test, rng)
            return rows[:n_train], rows[n_train:]
        cut = int(round(ratio * self.size))
        if not 0 < cut < self.size:
            raise ValueError("reference pool too small to split between the stacks")
        return self.draw(n_train, rng, 0, cut), self.draw(n_test, rng, cut)


def ingest_stride(
    stacks: SlidingStacks,
    stream_batch: np.ndarray,
    pool: ReferencePool,
    rng: np.random.Generator,
) -> None:
    """Push one stride of stream rows plus matching reference draws.

    The first ``split_ratio * s`` stream rows go to the training stack, the
    rest to the testing stack.
    """
    window = stacks.window
    stream_batch = np.asarray(stream_batch, dtype=float)
    if stream_batch.shape[0] != window.stride:
        raise ValueError(f"stride batch has {stream_batch.shape[0]} rows, expected {window.stride}")
    n_train = window.train_per_stride
    stacks.train_stream.append(stream_batch[:n_train])
    stacks.test_stream.append(stream_batch[n_train:])
    ref_train, ref_test = pool.draw_split(n_train, window.test_per_stride, rng, window.split_ratio)
    stacks.train_ref.append(ref_train)
    stacks.test_ref.append(ref_test)


def training_set(stacks: SlidingStacks) -> tuple[np.ndarray, np.ndarray]:
    stream, ref = stacks.train_stream.data, stacks.train_ref.data
    x = np.concatenate([stream, ref])
    y = np.concatenate([np.ones(stream.shape[0]), np.zeros(ref.shape[0])])
    return x, y


def train_pass(
    model: Mlp,
    opt: Adam,
    stacks: SlidingStacks,
    kind,
    minibatch: int,
    rng: np.random.Generator,
    onnr_weight: float = 0.5,
    flip_labels: bool = False,
) -> float | None:
    """One shuffled epoch of minibatch Adam over the training stacks.

    Returns the mean per-sample loss over the pass, or ``None`` while the
    training stacks are still filling up (nothing is trained then).
    """
    if not stacks.train_full:
        return None
    x, y = training_set(stacks)
    if flip_labels:
        y = 1.0 - y
    order = rng.permutation(x.shape[0])
    losses = []
    for start in range(0, x.shape[0], minibatch):
        idx = order[start : start + minibatch]
        loss, grad = batch_gradient(model, kind, x[idx], y[idx], onnr_weight)
        opt.step(model, grad)
        # the objective carries a 1/m normalizer over 2m samples
        losses.append(0.5 * loss)
    return float(np.mean(losses))


def window_increment(test_function, stacks: SlidingStacks) -> float:
    """Mean of ``test_function`` on the stream test stack minus the reference one."""
    if not stacks.test_full:
        raise ValueError("testing stacks are not full yet")
    stream, ref = stacks.test_stream.data, stacks.test_ref.data
    values = np.asarray(test_function(np.concatenate([stream, ref])), dtype=float)
    m = stream.shape[0]
    return float(values[:m].mean() - values[m:].mean())


def compute_increment(model: Mlp, kind, stacks: SlidingStacks, learning_rate: float = 1e-3) -> float:
    return window_increment(lambda x: test_function_value(model, kind, x, learning_rate), stacks)


class WindowedNetworkDetector(StreamingDetector):
    """Stride loop shared by the network-based detectors.

    Subclasses provide ``_build_models``, ``_train`` and ``_statistic``.
    Randomness comes from three independent streams spawned from ``seed``:
    network initialization, minibatch shuffling and reference draws.
    """

    def __init__(
        self,
        window: WindowConfig,
        training: TrainingConfig,
        pool: ReferencePool,
        seed=0,
        threshold: float = math.inf,
    ) -> None:
        self.window = window
        self.training = training
        self.pool = pool
        self.dim = pool.dim
        self.threshold = float(threshold)
        self.stride = window.stride
        self.burn_in = window.burn_in
        self.seed = seed
        self.reset()

    def _reset_state(self) -> None:
        # fixed children of the seed, so reset() replays the same streams
        init_ss, shuffle_ss, ref_ss = child_seeds(self.seed, 3)
        self._init_rng = np.random.default_rng(init_ss)
        self._shuffle_rng = np.random.default_rng(shuffle_ss)
        self._ref_rng = np.random.default_rng(ref_ss)
        self.stacks = SlidingStacks(self.window, self.dim)
        self._pending = np.empty((0, self.dim))
        self._strides = 0
        self._since_train = 0
        self.training_losses: list[float] = []
        self._build_models()

    def _new_model(self, activation=OutputActivation.IDENTITY) -> tuple[Mlp, Adam]:
        seed = int(self._init_rng.integers(2**63))
        model = Mlp(self.dim, self.training.hidden_width, activation, seed=seed)
        return model, Adam.for_model(model, learning_rate=self.training.learning_rate)

    def _build_models(self) -> None:
        raise NotImplementedError

    def _train(self) -> float | None:
        raise NotImplementedError

    def _statistic(self) -> float:
        raise NotImplementedError

    def _consume(self, block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.stride
        if self._pending.shape[0]:
            block = np.concatenate([self._pending, block])
            lead = self._pending.shape[0]
        else:
            lead = 0
        n_strides = block.shape[0] // s
        stats, offsets = [], []
        for j in range(n_strides):
            ingest_stride(self.stacks, block[j * s : (j + 1) * s], self.pool, self._ref_rng)
            self._strides += 1
            self._since_train += 1
            if self.stacks.train_full and self._since_train >= self.window.train_every:
                self._since_train = 0
                loss = self._train()
                if loss is not None:
                    self.training_losses.append(loss)
            if self.stacks.test_full:
                stats.append(self._statistic())
                offsets.append((j + 1) * s - lead)
        self._pending = block[n_strides * s :].copy()
        return np.asarray(stats), np.asarray(offsets, dtype=np.int64)

    def _epochs(self, model: Mlp, opt: Adam, flip_labels: bool = False) -> float | None:
        losses = []
        for _ in range(self.training.epochs):
            loss = train_pass(
                model,
                opt,
                self.stacks,
                self.training.loss,
                self.training.batch_size,
                self._shuffle_rng,
                self.training.onnr_weight,
                flip_labels,
            )
            if loss is None:
                return None
            losses.append(loss)
        return float(np.mean(losses))


class NNCusumDetector(WindowedNetworkDetector):
    """CUSUM over network increments ``eta_t`` minus a drift ``D``."""

    def __init__(
        self,
        window: WindowConfig,
        training: TrainingConfig,
        pool: ReferencePool,
        drift: float = 0.0,
        threshold: float = math.inf,
        seed=0,
    ) -> None:
        if not math.isfinite(drift) and drift != math.inf:
            raise ValueError("drift must be a real number")
        self.drift = float(drift)
        super().__init__(window, training, pool, seed, threshold)

    def _build_models(self) -> None:
        self.model, self.opt = self._new_model()
        self._statistic_value = 0.0
        self._increments: list[float] = []

    def _train(self) -> float | None:
        if self.training.mode == "scratch":
            self.model, self.opt = self._new_model()
        return self._epochs(self.model, self.opt)

    def increment(self) -> float:
        return compute_increment(self.model, self.training.loss, self.stacks, self.training.learning_rate)

    def _statistic(self) -> float:
        eta = self.increment()
        self._increments.append(eta)
        if self.drift == math.inf:
            self._statistic_value = 0.0
        else:
            self._statistic_value = max(self._statistic_value + eta - self.drift, 0.0)
        return self._statistic_value

    def _consume(self, block):
        self._increments = []
        stats, offsets = super()._consume(block)
        self.last_increments = np.asarray(self._increments)
        return stats, offsets

    def _restart_statistic(self) -> None:
        self._statistic_value = 0.0

    def current_statistic(self) -> float:
        return self._statistic_value


@dataclass
class DriftEstimate:
    drift: float
    per_sequence_means: list[float] = field(default_factory=list)

    @property
    def n_sequences(self) -> int:
        return len(self.per_sequence_means)


def estimate_drift(
    window: WindowConfig,
    training: TrainingConfig,
    pool: ReferencePool,
    pre_source,
    n_sequences: int,
    length: int,
    seed=0,
) -> DriftEstimate:
    """Average temporal mean of ``eta_t`` over fresh pre-change sequences.

    Each sequence gets its own detector (same pool), optional burn-in and
    data, all seeded from the i-th child of ``seed``.
    """
    if n_sequences < 1:
        raise ValueError("n_sequences must be positive")
    means = []
    for child in child_seeds(seed, n_sequences):
        det_ss, data_ss = derive_seed(child, "detector"), derive_seed(child, "data")
        det = NNCusumDetector(window, training, pool, drift=0.0, seed=det_ss)
        data_rng = np.random.default_rng(data_ss)
        if window.burn_in:
            det.warm_up(pre_source.sample(window.burn_in, data_rng))
        det.process(pre_source.sample(length, data_rng))
        if det.last_increments.size == 0:
            raise ValueError("sequence too short to produce any increment")
        means.append(float(det.last_increments.mean()))
    return DriftEstimate(float(np.mean(means)), means)
