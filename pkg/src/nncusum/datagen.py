"""Pre/post-change distribution pairs, sequence assembly and CSV I/O.

Every simulated example is a :class:`DistributionSpec` with a ``sample``
method and an exact ``log_density``. Coordinate-wise families (chi-square,
Pareto and the four shifted families) draw i.i.d. coordinates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

KINDS = (
    "gaussian_mean",
    "gaussian_cov",
    "log_gaussian",
    "gmm",
    "noncentral_chisq",
    "pareto",
    "exponential_shift",
    "gamma_shift",
    "weibull_shift",
    "gompertz_shift",
)

_LOG_2PI = math.log(2.0 * math.pi)
_EULER_GAMMA = 0.57721566490153286061


class InvalidParameterError(ValueError):
    pass


class CsvSchemaError(ValueError):
    pass


# --- special functions -------------------------------------------------------


def exp1(z: float, tol: float = 1e-15) -> float:
    """Exponential integral ``E1(z) = int_z^inf e^-t / t dt`` for ``z > 0``.

    Power series for ``z <= 1``, modified Lentz continued fraction above.
    """
    if z <= 0:
        raise ValueError("E1 is only defined here for z > 0")
    if z <= 1.0:
        total = 0.0
        term = 1.0
        k = 1
        while True:
            term *= -z / k
            contrib = term / k
            total += contrib
            if abs(contrib) < tol * abs(total):
                break
            k += 1
        return -_EULER_GAMMA - math.log(z) - total
    tiny = 1e-300
    b = z + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    i = 1
    while True:
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < tol:
            break
        i += 1
    return h * math.exp(-z)


def chi2_logpdf(x, df: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            -0.5 * df * math.log(2.0)
            - gammaln(0.5 * df)
            + (0.5 * df - 1.0) * np.log(x)
            - 0.5 * x
        )
    at_zero = math.inf if df < 2 else (-math.log(2.0) if df == 2 else -math.inf)
    return np.where(x > 0, out, np.where(x == 0, at_zero, -np.inf))


def ncx2_logpdf(x, df: float, nonc: float, rtol: float = 1e-10) -> np.ndarray:
    """Noncentral chi-square log-density as a Poisson mixture of central terms.

    ``f(x) = sum_j Pois(j; nonc/2) chi2_{df+2j}(x)``; summation stops once the
    terms are decreasing and the next one is below ``rtol * 1e-6`` of the
    running total for every entry.
    """
    x = np.asarray(x, dtype=float)
    if nonc == 0:
        return chi2_logpdf(x, df)
    flat = x.ravel()
    out = np.full(flat.shape, -np.inf)
    pos = flat > 0
    xs = flat[pos]
    if xs.size:
        half = 0.5 * nonc
        log_half = math.log(half)
        acc = np.full(xs.shape, -np.inf)
        prev = np.full(xs.shape, -np.inf)
        cutoff = math.log(rtol) - 6.0 * math.log(10.0)
        j = 0
        while True:
            term = -half + j * log_half - math.lgamma(j + 1.0) + chi2_logpdf(xs, df + 2.0 * j)
            acc = np.logaddexp(acc, term)
            decreasing = term <= prev
            if j > 0 and np.all(decreasing & (term - acc < cutoff)):
                break
            prev = term
            j += 1
            if j > 100000:
                raise RuntimeError("noncentral chi-square series failed to converge")
        out[pos] = acc
    if df < 2:
        out[flat == 0] = np.inf
    return out.reshape(x.shape)


# --- distribution specs --------------------------------------------------------


def _gaussian_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray | None) -> np.ndarray:
    diff = x - mean
    d = x.shape[1]
    if chol is None:
        return -0.5 * np.einsum("ij,ij->i", diff, diff) - 0.5 * d * _LOG_2PI
    from scipy.linalg import solve_triangular

    z = solve_triangular(chol, diff.T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * np.einsum("ij,ij->j", z, z) - 0.5 * logdet - 0.5 * d * _LOG_2PI


def equicorrelated(dim: int, diag: float = 0.8, off: float = 0.2) -> np.ndarray:
    """``diag * I + off * E`` with ``E`` the all-ones matrix."""
    return diag * np.eye(dim) + off * np.ones((dim, dim))


def sparse_cov_shift(dim: int, rho: float, active: Sequence[int]) -> np.ndarray:
    """``I - D^2 + D E D`` with ``D = sqrt(rho) * diag(1_active)``."""
    dvec = np.zeros(dim)
    dvec[list(active)] = math.sqrt(rho)
    return np.eye(dim) - np.diag(dvec**2) + np.outer(dvec, dvec)


def shift_for_equal_mean(kind: str, params: dict) -> float:
    """Location shift making the post-change coordinate mean match pre-change."""
    b0, b1 = params["scale_pre"], params["scale_post"]
    if kind == "exponential_shift":
        return b0 - b1
    if kind == "gamma_shift":
        return (b0 - b1) * params["shape"]
    if kind == "weibull_shift":
        return (b0 - b1) * math.gamma(1.0 + 1.0 / params["shape"])
    if kind == "gompertz_shift":
        k = params["shape"]
        return (b0 - b1) * math.exp(k) * exp1(k)
    raise ValueError(kind)


DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "gaussian_mean": {"delta": 0.1},
    "gaussian_cov": {"rho": 0.1, "active": "every5"},
    "log_gaussian": {"diag": 0.8, "off": 0.2},
    "gmm": {
        "pre_weights": [0.5, 0.5],
        "post_weights": [1 / 3, 1 / 3, 1 / 3],
        "component_mean": 2.0,
        "third_mean": 0.0,
        "third_diag": 0.8,
        "third_off": 0.2,
    },
    "noncentral_chisq": {"df": 0.5, "nonc_pre": 1.0, "nonc_post": 0.6, "active": "every25"},
    "pareto": {"x_m": 1.0, "shape_pre": 2.0, "shape_post": 2.5},
    "exponential_shift": {"scale_pre": 1.0, "scale_post": 0.8},
    "gamma_shift": {"shape": 1.5, "scale_pre": 0.5, "scale_post": 0.4},
    "weibull_shift": {"shape": 1.5, "scale_pre": 1.0, "scale_post": 0.6},
    "gompertz_shift": {"shape": 1.0, "scale_pre": 1.5, "scale_post": 1.0},
}

# Named presets: Table-style rows plus the study variants.
PRESETS: dict[str, tuple[str, dict[str, Any]]] = {
    **{kind: (kind, {}) for kind in KINDS},
    "gaussian_mean_strong": ("gaussian_mean", {"delta": 0.8}),
    "gmm_window": ("gmm", {"third_mean": 13 / 5}),
}


def _active_indices(spec: str | Sequence[int], dim: int) -> list[int]:
    if isinstance(spec, str):
        step = {"every5": 5, "every25": 25}.get(spec)
        if step is None:
            raise InvalidParameterError(f"unknown index pattern {spec!r}")
        return list(range(0, dim, step))
    idx = [int(i) for i in spec]
    if any(i < 0 or i >= dim for i in idx):
        raise InvalidParameterError("active index out of range")
    return idx


@dataclass
class DistributionSpec:
    """One side (``pre`` or ``post``) of a simulated change.

    ``params`` overrides the family defaults in :data:`DEFAULT_PARAMS`.
    """

    kind: str
    phase: str = "pre"
    dim: int = 100
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown distribution kind {self.kind!r}")
        if self.phase not in ("pre", "post"):
            raise InvalidParameterError("phase must be 'pre' or 'post'")
        if self.dim < 1:
            raise InvalidParameterError("dim must be positive")
        merged = dict(DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise InvalidParameterError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update(self.params)
        self._p = merged
        self._setup()

    @property
    def resolved_params(self) -> dict[str, Any]:
        return dict(self._p)

    @property
    def is_post(self) -> bool:
        return self.phase == "post"

    def _setup(self) -> None:
        p, d, post = self._p, self.dim, self.is_post
        k = self.kind
        self._mean = np.zeros(d)
        self._chol = None
        if k == "gaussian_mean":
            if post:
                delta = float(p["delta"])
                self._mean[: min(3, d)] = [delta, delta / 2, delta / 3][: min(3, d)]
        elif k == "gaussian_cov":
            if not 0 <= p["rho"] < 1:
                raise InvalidParameterError("rho must lie in [0, 1)")
            if post:
                cov = sparse_cov_shift(d, p["rho"], _active_indices(p["active"], d))
                self._chol = np.linalg.cholesky(cov)
        elif k == "log_gaussian":
            if post:
                self._chol = np.linalg.cholesky(equicorrelated(d, p["diag"], p["off"]))
        elif k == "gmm":
            c = float(p["component_mean"])
            self._components = [(np.full(d, c), None), (np.full(d, -c), None)]
            weights = list(p["pre_weights"])
            if post:
                third = np.full(d, float(p["third_mean"]))
                chol = np.linalg.cholesky(equicorrelated(d, p["third_diag"], p["third_off"]))
                self._components.append((third, chol))
                weights = list(p["post_weights"])
            w = np.asarray(weights, dtype=float)
            if w.size != len(self._components) or np.any(w <= 0):
                raise InvalidParameterError("mixture weights do not match components")
            self._weights = w / w.sum()
        elif k == "noncentral_chisq":
            if p["df"] <= 0 or p["nonc_pre"] < 0 or p["nonc_post"] < 0:
                raise InvalidParameterError("chi-square needs df > 0 and nonnegative noncentrality")
            nonc = np.full(d, float(p["nonc_pre"]))
            if post:
                nonc[_active_indices(p["active"], d)] = p["nonc_post"]
            self._nonc = nonc
        elif k == "pareto":
            if p["x_m"] <= 0 or p["shape_pre"] <= 0 or p["shape_post"] <= 0:
                raise InvalidParameterError("Pareto needs x_m > 0 and positive shapes")
            self._shape = float(p["shape_post" if post else "shape_pre"])
        else:
            if p["scale_pre"] <= 0 or p["scale_post"] <= 0 or p.get("shape", 1.0) <= 0:
                raise InvalidParameterError(f"{k} needs positive scale and shape")
            self._scale = float(p["scale_post" if post else "scale_pre"])
            self._shift = shift_for_equal_mean(k, p) if post else 0.0

    # -- sampling --

    def sample(self, n: int, rng=None) -> np.ndarray:
        """``n`` i.i.d. draws as an ``n x dim`` matrix."""
        rng = np.random.default_rng(rng)
        n, d, p, k = int(n), self.dim, self._p, self.kind
        if n < 0:
            raise ValueError("n must be nonnegative")
        if k in ("gaussian_mean", "gaussian_cov", "log_gaussian"):
            z = rng.standard_normal((n, d))
            if self._chol is not None:
                z = z @ self._chol.T
            z += self._mean
            return np.exp(z) if k == "log_gaussian" else z
        if k == "gmm":
            labels = rng.choice(len(self._weights), size=n, p=self._weights)
            out = rng.standard_normal((n, d))
            for j, (mean, chol) in enumerate(self._components):
                rows = labels == j
                if chol is not None:
                    out[rows] = out[rows] @ chol.T
                out[rows] += mean
            return out
        if k == "noncentral_chisq":
            counts = rng.poisson(0.5 * self._nonc, size=(n, d))
            return rng.gamma(0.5 * p["df"] + counts, 2.0)
        if k == "pareto":
            return p["x_m"] * np.exp(rng.standard_exponential((n, d)) / self._shape)
        u = rng.standard_exponential((n, d))
        s = self._scale
        if k == "exponential_shift":
            x = s * u
        elif k == "gamma_shift":
            x = rng.gamma(p["shape"], s, size=(n, d))
        elif k == "weibull_shift":
            x = s * u ** (1.0 / p["shape"])
        else:
            # inverse CDF: F(x) = 1 - exp(-kappa (e^{x/s} - 1))
            x = s * np.log1p(u / p["shape"])
        return x + self._shift

    # -- densities --

    def coordinate_logpdf(self, x) -> np.ndarray:
        """Per-coordinate log-density for the coordinate-wise families."""
        x = np.asarray(x, dtype=float)
        p, k = self._p, self.kind
        with np.errstate(divide="ignore", invalid="ignore"):
            if k == "noncentral_chisq":
                cols = np.broadcast_to(self._nonc, x.shape)
                out = np.empty(x.shape)
                for val in np.unique(self._nonc):
                    sel = cols == val
                    out[sel] = ncx2_logpdf(x[sel], p["df"], val)
                return out
            if k == "pareto":
                b, xm = self._shape, p["x_m"]
                val = math.log(b) + b * math.log(xm) - (b + 1.0) * np.log(x)
                return np.where(x >= xm, val, -np.inf)
            if k not in ("exponential_shift", "gamma_shift", "weibull_shift", "gompertz_shift"):
                raise TypeError(f"{k} is not coordinate-wise")
            s = self._scale
            y = x - self._shift
            if k == "exponential_shift":
                val = -math.log(s) - y / s
                return np.where(y >= 0, val, -np.inf)
            if k == "gamma_shift":
                a = p["shape"]
                val = (a - 1.0) * np.log(y) - y / s - a * math.log(s) - math.lgamma(a)
                return np.where(y > 0, val, -np.inf)
            kappa = p["shape"]
            if k == "weibull_shift":
                val = (
                    math.log(kappa / s)
                    + (kappa - 1.0) * np.log(y / s)
                    - (y / s) ** kappa
                )
                return np.where(y > 0, val, np.where(y == 0, _weibull_at_zero(kappa, s), -np.inf))
            val = math.log(kappa / s) + kappa + y / s - kappa * np.exp(y / s)
            return np.where(y >= 0, val, -np.inf)

    def log_density(self, x) -> np.ndarray | float:
        """Exact joint log-density; ``-inf`` outside the support.

        Accepts one observation (returns a float) or an ``n x dim`` matrix.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} columns, got {x.shape[1]}")
        k = self.kind
        if k in ("gaussian_mean", "gaussian_cov"):
            out = _gaussian_logpdf(x, self._mean, self._chol)
        elif k == "log_gaussian":
            with np.errstate(divide="ignore", invalid="ignore"):
                logs = np.log(x)
            inside = np.all(x > 0, axis=1)
            safe = np.where(inside[:, None], logs, 0.0)
            out = _gaussian_logpdf(safe, self._mean, self._chol) - safe.sum(axis=1)
            out = np.where(inside, out, -np.inf)
        elif k == "gmm":
            parts = [
                math.log(w) + _gaussian_logpdf(x, mean, chol)
                for w, (mean, chol) in zip(self._weights, self._components)
            ]
            out = logsumexp(np.stack(parts), axis=0)
        else:
            out = self.coordinate_logpdf(x).sum(axis=1)
        return float(out[0]) if single else out

    def support_lower(self) -> float:
        """Lower bound of each coordinate's support (``-inf`` if unbounded)."""
        if self.kind == "pareto":
            return float(self._p["x_m"])
        if self.kind in ("log_gaussian", "noncentral_chisq"):
            return 0.0
        if self.kind.endswith("_shift"):
            return float(self._shift)
        return -math.inf

    def coordinate_mean(self) -> np.ndarray:
        """Exact per-coordinate means (used by moment checks)."""
        p, k, d = self._p, self.kind, self.dim
        if k in ("gaussian_mean", "gaussian_cov"):
            return self._mean.copy()
        if k == "log_gaussian":
            var = np.ones(d) if self._chol is None else np.sum(self._chol**2, axis=1)
            return np.exp(0.5 * var)
        if k == "gmm":
            return sum(w * m for w, (m, _) in zip(self._weights, self._components))
        if k == "noncentral_chisq":
            return p["df"] + self._nonc
        if k == "pareto":
            b = self._shape
            return np.full(d, b * p["x_m"] / (b - 1.0) if b > 1 else np.inf)
        s = self._scale
        if k == "exponential_shift":
            m = s
        elif k == "gamma_shift":
            m = p["shape"] * s
        elif k == "weibull_shift":
            m = s * math.gamma(1.0 + 1.0 / p["shape"])
        else:
            m = s * math.exp(p["shape"]) * exp1(p["shape"])
        return np.full(d, m + self._shift)


def _weibull_at_zero(kappa: float, scale: float) -> float:
    if kappa < 1:
        return math.inf
    if kappa == 1:
        return -math.log(scale)
    return -math.inf


def log_likelihood_ratio(pre: DistributionSpec, post: DistributionSpec, x) -> np.ndarray:
    """``log f1(x) - log f0(x)`` per row; NaN where both densities vanish.

    For coordinate-wise families only coordinates whose parameters differ
    between the two sides are evaluated.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    coordinatewise = pre.kind == post.kind and pre.kind not in (
        "gaussian_mean", "gaussian_cov", "log_gaussian", "gmm",
    )
    with np.errstate(invalid="ignore"):
        if not coordinatewise:
            return post.log_density(x) - pre.log_density(x)
        if pre.kind == "noncentral_chisq":
            cols = np.flatnonzero(pre._nonc != post._nonc)
            sub_pre, sub_post = _restrict(pre, cols), _restrict(post, cols)
            diff = sub_post.coordinate_logpdf(x[:, cols]) - sub_pre.coordinate_logpdf(x[:, cols])
        else:
            diff = post.coordinate_logpdf(x) - pre.coordinate_logpdf(x)
    # coordinates where both sides are infinite alike carry no information
    diff = np.where(np.isnan(diff), 0.0, diff)
    return diff.sum(axis=1)


def _restrict(spec: DistributionSpec, cols: np.ndarray) -> DistributionSpec:
    clone = DistributionSpec.__new__(DistributionSpec)
    clone.__dict__.update(spec.__dict__)
    clone._nonc = spec._nonc[cols]
    return clone


def preset(name: str, phase: str, dim: int = 100, **overrides) -> DistributionSpec:
    """Build the ``pre`` or ``post`` side of a named example."""
    if name not in PRESETS:
        raise InvalidParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kind, base = PRESETS[name]
    return DistributionSpec(kind, phase, dim, {**base, **overrides})


def preset_pair(name: str, dim: int = 100, **overrides) -> tuple[DistributionSpec, DistributionSpec]:
    return preset(name, "pre", dim, **overrides), preset(name, "post", dim, **overrides)


class EmpiricalSource:
    """Observation source backed by rows of a data matrix (e.g. a CSV)."""

    def __init__(self, rows: np.ndarray, name: str = "empirical") -> None:
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise ValueError("empirical source needs a non-empty 2-d matrix")
        self.rows = rows
        self.name = name
        self.dim = rows.shape[1]

    def sample(self, n: int, rng=None) -> np.ndarray:
        """Rows drawn without replacement when possible, else with."""
        rng = np.random.default_rng(rng)
        replace = n > self.rows.shape[0]
        return self.rows[rng.choice(self.rows.shape[0], size=int(n), replace=replace)]

    def log_density(self, x):
        raise TypeError("empirical sources have no density")


# --- sequences ---------------------------------------------------------------


@dataclass
class ObservationSequence:
    data: np.ndarray
    change_point: int | None = None
    seed: int | None = None

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def labels(self) -> np.ndarray:
        """0 for pre-change rows, 1 for post-change rows."""
        k = len(self) if self.change_point is None else self.change_point
        return (np.arange(len(self)) >= k).astype(int)


def build_sequence(pre, post, pre_length: int, total_length: int, seed=None) -> ObservationSequence:
    """``pre_length`` rows from ``pre`` followed by the rest from ``post``."""
    if pre_length < 0 or total_length < 1:
        raise ValueError("lengths must be nonnegative and total_length positive")
    if pre_length > total_length:
        raise ValueError(f"change point {pre_length} beyond sequence length {total_length}")
    rng = np.random.default_rng(seed)
    head = pre.sample(pre_length, rng)
    tail = post.sample(total_length - pre_length, rng) if total_length > pre_length else None
    data = head if tail is None else np.vstack([head, tail])
    return ObservationSequence(data, pre_length, seed if isinstance(seed, int) else None)


def real_data_sequences(
    background: np.ndarray,
    target: np.ndarray,
    pre_length: int,
    post_length: int,
    n_sequences: int,
    reference_length: int,
    seed=None,
) -> tuple[list[ObservationSequence], list[np.ndarray]]:
    """Online sequences (background then target rows) and reference sequences.

    Rows are drawn without replacement within each sequence.
    """
    rng = np.random.default_rng(seed)
    bg, tg = EmpiricalSource(background, "background"), EmpiricalSource(target, "target")
    online, reference = [], []
    for _ in range(n_sequences):
        data = np.vstack([bg.sample(pre_length, rng), tg.sample(post_length, rng)])
        online.append(ObservationSequence(data, pre_length))
        reference.append(bg.sample(reference_length, rng))
    return online, reference


# --- CSV ---------------------------------------------------------------------


def write_csv(path, data: np.ndarray, labels=None, columns: Sequence[str] | None = None,
              label_column: str = "label") -> None:
    """Write rows with 17 significant digits so floats round-trip exactly."""
    data = np.asarray(data, dtype=float)
    if columns is None:
        columns = [f"x{j}" for j in range(data.shape[1])]
    header = list(columns) + ([label_column] if labels is not None else [])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(data):
            cells = [format(v, ".17g") for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            writer.writerow(cells)
    tmp.replace(path)


def read_csv_table(
    path,
    feature_columns: Sequence[str] | None = None,
    label_column: str | None = None,
    allowed_labels: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Numeric feature matrix and (optional) integer labels, in file order.

    Errors name the offending column or the 1-based data row.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvSchemaError(f"{path}: empty file") from None
        if feature_columns is None:
            feature_columns = [h for h in header if h != label_column]
        missing = [c for c in list(feature_columns) + ([label_column] if label_column else [])
                   if c not in header]
        if missing:
            raise CsvSchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        if not feature_columns:
            raise CsvSchemaError(f"{path}: no feature columns")
        feat_idx = [header.index(c) for c in feature_columns]
        label_idx = header.index(label_column) if label_column else None
        rows, labels = [], []
        for lineno, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != len(header):
                raise CsvSchemaError(
                    f"{path}: row {lineno} has {len(record)} fields, header has {len(header)}"
                )
            try:
                rows.append([float(record[j]) for j in feat_idx])
            except ValueError:
                bad = next(c for c, j in zip(feature_columns, feat_idx) if not _is_float(record[j]))
                raise CsvSchemaError(
                    f"{path}: row {lineno}, column {bad}: non-numeric value {record[header.index(bad)]!r}"
                ) from None
            if label_idx is not None:
                raw = record[label_idx].strip()
                try:
                    lab = int(float(raw))
                except ValueError:
                    lab = None
                if lab is None or (allowed_labels is not None and lab not in allowed_labels):
                    raise CsvSchemaError(
                        f"{path}: row {lineno}, column {label_column}: unknown label {raw!r}"
                    )
                labels.append(lab)
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(feature_columns))
    if not np.all(np.isfinite(data)):
        row = int(np.flatnonzero(~np.isfinite(data).all(axis=1))[0]) + 1
        raise CsvSchemaError(f"{path}: row {row}: non-finite value")
    return data, (np.asarray(labels, dtype=int) if label_idx is not None else None)


def ingest_csv(
    path,
    feature_columns: Sequence[str] | None = None,
    label_column: str | None = None,
    background_label: int = 0,
    target_label: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Read a numeric CSV and split rows by label into background/target.

    Without a label column every row is background and target is empty.
    """
    data, labels = read_csv_table(path, feature_columns, label_column, (background_label, target_label))
    if labels is None:
        return data, np.empty((0, data.shape[1]))
    return data[labels == background_label], data[labels == target_label]


def read_sequence_csv(path, label_column: str = "label") -> ObservationSequence:
    """An ordered sequence; a 0/1 label column (if present) sets the change point."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    has_label = label_column in header
    data, labels = read_csv_table(path, None, label_column if has_label else None, (0, 1))
    if data.shape[0] == 0:
        raise CsvSchemaError(f"{path}: no data rows")
    change_point = None
    if labels is not None and labels.any():
        change_point = int(np.argmax(labels == 1))
        if not np.all(labels[change_point:] == 1):
            raise CsvSchemaError(f"{path}: labels must switch from 0 to 1 exactly once")
    return ObservationSequence(data, change_point)


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False
