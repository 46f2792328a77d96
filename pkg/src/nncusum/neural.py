"""One-hidden-layer ReLU network, per-sample losses and Adam.

All parameters live in one flat vector so that the optimizer and the
serializer can treat them as a single array; the weight matrices are
views into it.
"""

from __future__ import annotations

import json
from enum import Enum

import numpy as np

SNAPSHOT_VERSION = 1


class LossKind(str, Enum):
    LOGISTIC = "logistic"
    SQUARED = "squared"
    MMD_LINEAR = "mmd_linear"
    # density-ratio regression loss of the ONNR baseline
    ONNR = "onnr"


class OutputActivation(str, Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"


def _softplus(u):
    # log(1 + e^u) without overflow
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def _sigmoid(u):
    out = np.empty_like(u, dtype=np.result_type(u, np.float32))
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def per_sample_loss(kind, u, y, onnr_weight: float = 0.5):
    """Per-sample loss ``l(u, y)`` for network output ``u`` and label ``y``.

    Works elementwise on arrays. Label 1 marks stream samples, 0 reference.
    """
    kind = LossKind(kind)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("loss evaluated at a non-finite network output")
    if kind is LossKind.LOGISTIC:
        return y * _softplus(-u) + (1.0 - y) * _softplus(u)
    if kind is LossKind.SQUARED:
        return 0.5 * (y * (u - 1.0) ** 2 + (1.0 - y) * (u + 1.0) ** 2)
    if kind is LossKind.MMD_LINEAR:
        return -y * u + (1.0 - y) * u
    a = _check_onnr_weight(onnr_weight)
    return y * (0.5 * a * u**2 - u) + (1.0 - y) * 0.5 * (1.0 - a) * u**2


def loss_derivative(kind, u, y, onnr_weight: float = 0.5):
    """d l(u, y) / du, elementwise."""
    kind = LossKind(kind)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind is LossKind.LOGISTIC:
        # y * (-(1 - sigma(u))) + (1 - y) * sigma(u) = sigma(u) - y
        return _sigmoid(u) - y
    if kind is LossKind.SQUARED:
        return y * (u - 1.0) + (1.0 - y) * (u + 1.0)
    if kind is LossKind.MMD_LINEAR:
        return 1.0 - 2.0 * y
    a = _check_onnr_weight(onnr_weight)
    return y * (a * u - 1.0) + (1.0 - y) * (1.0 - a) * u


def _check_onnr_weight(a: float) -> float:
    if not 0.0 < a < 1.0:
        raise ValueError(f"ONNR weight must lie in (0, 1), got {a}")
    return float(a)


class Mlp:
    """``x -> w2 . relu(W1 x + b1) + b2``, optionally followed by a sigmoid.

    Parameters are initialized like a default dense layer: every weight and
    bias uniform on ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` from a seeded
    generator. ``initial_params`` keeps a read-only copy of that draw.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_width: int = 64,
        output_activation: str | OutputActivation = OutputActivation.IDENTITY,
        seed: int | np.random.SeedSequence | None = 0,
        dtype=np.float64,
    ) -> None:
        if input_dim < 1 or hidden_width < 1:
            raise ValueError("input_dim and hidden_width must be positive")
        self.input_dim = int(input_dim)
        self.hidden_width = int(hidden_width)
        self.output_activation = OutputActivation(output_activation)
        self.dtype = np.dtype(dtype)
        d, h = self.input_dim, self.hidden_width
        self._sizes = (h * d, h, h, 1)
        rng = np.random.default_rng(seed)
        bound_in = 1.0 / np.sqrt(d)
        bound_out = 1.0 / np.sqrt(h)
        self.params = np.concatenate(
            [
                rng.uniform(-bound_in, bound_in, h * d),
                rng.uniform(-bound_in, bound_in, h),
                rng.uniform(-bound_out, bound_out, h),
                rng.uniform(-bound_out, bound_out, 1),
            ]
        ).astype(self.dtype)
        self._bind_views()
        self.initial_params = self.params.copy()
        self.initial_params.flags.writeable = False

    def _bind_views(self) -> None:
        d, h = self.input_dim, self.hidden_width
        p = self.params
        o = 0
        self.weights_in = p[o : o + h * d].reshape(h, d)
        o += h * d
        self.bias_in = p[o : o + h]
        o += h
        self.weights_out = p[o : o + h]
        o += h
        self.bias_out = p[o : o + 1]

    @property
    def n_params(self) -> int:
        return self.params.size

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=self.dtype)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[:] = flat

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.__dict__.update(self.__dict__)
        clone.params = self.params.copy()
        clone._bind_views()
        return clone

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"input dimension mismatch: expected (..., {self.input_dim}), got {x.shape}"
            )
        return x, single

    def logits(self, x, params=None) -> np.ndarray | float:
        """Network output before the output activation."""
        x, single = self._as_batch(x)
        if params is None:
            w1, b1, w2, b2 = self.weights_in, self.bias_in, self.weights_out, self.bias_out[0]
        else:
            w1, b1, w2, b2 = self._unpack(params)
        hidden = x @ w1.T
        hidden += b1
        np.maximum(hidden, 0.0, out=hidden)
        u = hidden @ w2 + b2
        return float(u[0]) if single else u

    def forward(self, x, params=None):
        u = self.logits(x, params)
        if self.output_activation is OutputActivation.SIGMOID:
            return float(_sigmoid(np.atleast_1d(u))[0]) if np.ndim(u) == 0 else _sigmoid(u)
        return u

    def _unpack(self, params):
        d, h = self.input_dim, self.hidden_width
        params = np.asarray(params, dtype=self.dtype)
        return (
            params[: h * d].reshape(h, d),
            params[h * d : h * d + h],
            params[h * d + h : h * d + 2 * h],
            params[-1],
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": SNAPSHOT_VERSION,
                "input_dim": self.input_dim,
                "hidden_width": self.hidden_width,
                "output_activation": self.output_activation.value,
                "dtype": self.dtype.name,
                "params": self.params.tolist(),
                "initial_params": self.initial_params.tolist(),
            }
        )

    @classmethod
    def from_json(cls, blob: str) -> "Mlp":
        data = json.loads(blob)
        if data.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {data.get('version')!r}")
        model = cls(
            data["input_dim"],
            data["hidden_width"],
            data["output_activation"],
            seed=0,
            dtype=np.dtype(data["dtype"]),
        )
        model.set_params(data["params"])
        init = np.asarray(data["initial_params"], dtype=model.dtype)
        init.flags.writeable = False
        model.initial_params = init
        return model


def batch_gradient(
    model: Mlp,
    kind,
    x,
    y,
    onnr_weight: float = 0.5,
) -> tuple[float, np.ndarray]:
    """Loss and flat gradient of ``(1/m) sum_i l(phi(x_i), y_i)``.

    ``m`` is half the number of samples: the training set is a balanced
    union of ``m`` stream and ``m`` reference samples. Losses always act on
    the pre-activation output, so for a sigmoid network the logistic loss is
    the usual binary cross-entropy.
    """
    x, _ = model._as_batch(x)
    y = np.asarray(y, dtype=model.dtype).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.shape[0] != n:
        raise ValueError("labels and samples differ in length")
    scale = 2.0 / n
    pre = x @ model.weights_in.T
    pre += model.bias_in
    active = pre > 0
    hidden = np.where(active, pre, 0.0)
    u = hidden @ model.weights_out + model.bias_out[0]
    loss = scale * float(np.sum(per_sample_loss(kind, u, y, onnr_weight)))
    du = scale * loss_derivative(kind, u, y, onnr_weight).astype(model.dtype, copy=False)

    grad = np.empty_like(model.params)
    d, h = model.input_dim, model.hidden_width
    dhidden = np.outer(du, model.weights_out)
    dhidden *= active
    grad[: h * d] = (dhidden.T @ x).ravel()
    grad[h * d : h * d + h] = dhidden.sum(axis=0)
    grad[h * d + h : h * d + 2 * h] = hidden.T @ du
    grad[-1] = du.sum()
    return loss, grad


class Adam:
    """Bias-corrected Adam over a model's flat parameter vector."""

    def __init__(
        self,
        n_params: int,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        dtype=np.float64,
    ) -> None:
        if learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.first_moment = np.zeros(n_params, dtype=dtype)
        self.second_moment = np.zeros(n_params, dtype=dtype)
        self.timestep = 0

    @classmethod
    def for_model(cls, model: Mlp, **kwargs) -> "Adam":
        return cls(model.n_params, dtype=model.dtype, **kwargs)

    def step(self, model: Mlp, grad: np.ndarray) -> None:
        """Apply one update to ``model.params`` in place."""
        if grad.shape != self.first_moment.shape:
            raise ValueError(
                f"gradient shape {grad.shape} does not match optimizer state "
                f"{self.first_moment.shape}"
            )
        self.timestep += 1
        t = self.timestep
        m, v = self.first_moment, self.second_moment
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        if self.learning_rate == 0.0:
            return
        step_size = self.learning_rate / (1.0 - self.beta1**t)
        denom = np.sqrt(v / (1.0 - self.beta2**t))
        denom += self.epsilon
        model.params -= step_size * m / denom

    def state_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "timestep": self.timestep,
            "first_moment": self.first_moment.tolist(),
            "second_moment": self.second_moment.tolist(),
        }

    def load_state_dict(self, state: dict) -> None:
        self.learning_rate = state["learning_rate"]
        self.beta1 = state["beta1"]
        self.beta2 = state["beta2"]
        self.epsilon = state["epsilon"]
        self.timestep = state["timestep"]
        self.first_moment[:] = state["first_moment"]
        self.second_moment[:] = state["second_moment"]


def test_function_value(model: Mlp, kind, x, learning_rate: float = 1e-3):
    """Test function ``g`` used in the increment.

    Logistic, squared and ONNR losses use the trained network directly. The
    linear MMD loss uses the scaled displacement from the initial network,
    ``(phi(x; theta) - phi(x; theta_0)) / learning_rate``.
    """
    kind = LossKind(kind)
    if kind is LossKind.MMD_LINEAR:
        if learning_rate <= 0:
            raise ValueError("MMD test function needs a positive learning rate")
        return (model.forward(x) - model.forward(x, model.initial_params)) / learning_rate
    return model.forward(x)


test_function_value.__test__ = False  # keep pytest from collecting it
