"""Synthetic structural causal models with an invertible feature equation.

Every model here has the graph A -> X <- U, (X, U, A) -> Y with

    X = w_a * A + w_u * U                    (coordinatewise)
    Y = sum_j w_x[j] * f(X_j) + w_u'[j] * U_j + w_y * eps_Y

where ``f`` is the identity (linear form) or the cube (cubic form).  For
classification Y ~ Bernoulli(sigmoid(.)) of the same link.  U, eps_Y are
standard normal and A ~ Bernoulli(p_a).

Datasets carry the hidden exogenous draw ``u`` and the ground-truth
counterfactual ``x_cf`` so that fairness can be evaluated exactly.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

ArrayLike = Union[float, Sequence[float], np.ndarray]

DEFAULT_QUAD_NODES = 64


class Form(str, enum.Enum):
    LINEAR = "linear"
    CUBIC = "cubic"


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class BayesMode(str, enum.Enum):
    NOISE_FREE = "noise-free"
    EXACT_QUADRATURE = "exact"


def _as_weights(value, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape == (1,):
        arr = np.repeat(arr, dim)
    if arr.shape != (dim,):
        raise ValueError(f"{name} must be a scalar or have length {dim}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ScmSpec:
    """Parameters of one synthetic SCM.

    Weight fields accept a scalar (broadcast over ``x_dim`` coordinates) or
    one value per coordinate.  ``w_y`` is always a scalar.
    """

    form: Form = Form.LINEAR
    task: Task = Task.REGRESSION
    w_a: ArrayLike = 1.0
    w_u: ArrayLike = 1.0
    w_x: ArrayLike = 1.0
    w_u_prime: ArrayLike = 1.0
    w_y: float = 1.0
    p_a: float = 0.5
    x_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "form", Form(self.form))
        object.__setattr__(self, "task", Task(self.task))
        if int(self.x_dim) < 1:
            raise ValueError("x_dim must be a positive integer")
        object.__setattr__(self, "x_dim", int(self.x_dim))
        for name in ("w_a", "w_u", "w_x", "w_u_prime"):
            arr = _as_weights(getattr(self, name), self.x_dim, name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "w_y", float(self.w_y))
        object.__setattr__(self, "p_a", float(self.p_a))
        if np.any(self.w_u == 0):
            raise ValueError("w_u must be nonzero in every coordinate (X must be invertible in U)")
        if not 0.0 < self.p_a < 1.0:
            raise ValueError("p_a must lie strictly between 0 and 1")

    # frozen dataclass with array fields: compare by value
    def __eq__(self, other):
        if not isinstance(other, ScmSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(sorted(self.to_dict().items())))

    @property
    def sigma2_a(self) -> float:
        """Variance of the Bernoulli sensitive attribute."""
        return self.p_a * (1.0 - self.p_a)

    def replace(self, **changes) -> "ScmSpec":
        d = self.to_dict()
        d.update(changes)
        return ScmSpec.from_dict(d)

    def to_dict(self) -> dict:
        def pack(arr):
            return float(arr[0]) if self.x_dim == 1 else [float(v) for v in arr]

        return {
            "form": self.form.value,
            "task": self.task.value,
            "w_a": pack(self.w_a),
            "w_u": pack(self.w_u),
            "w_x": pack(self.w_x),
            "w_u_prime": pack(self.w_u_prime),
            "w_y": self.w_y,
            "p_a": self.p_a,
            "x_dim": self.x_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScmSpec":
        return cls(**d)


def preset(name: str, p_a: float = 0.5) -> ScmSpec:
    """The four synthetic benchmarks.

    Regression presets use all-unit weights; classification presets use
    ``w_a = 2`` with the remaining weights at 1.
    """
    key = name.lower().replace("_", "-")
    table = {
        "linear-reg": (Form.LINEAR, Task.REGRESSION, 1.0),
        "cubic-reg": (Form.CUBIC, Task.REGRESSION, 1.0),
        "linear-cls": (Form.LINEAR, Task.CLASSIFICATION, 2.0),
        "cubic-cls": (Form.CUBIC, Task.CLASSIFICATION, 2.0),
    }
    if key not in table:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(table)}")
    form, task, w_a = table[key]
    return ScmSpec(form=form, task=task, w_a=w_a, w_u=1.0, w_x=1.0, w_u_prime=1.0, w_y=1.0, p_a=p_a)


PRESETS = ("linear-reg", "cubic-reg", "linear-cls", "cubic-cls")


@dataclass(frozen=True)
class Record:
    x: np.ndarray
    a: int
    y: float
    u: Optional[np.ndarray] = None
    x_cf: Optional[np.ndarray] = None


@dataclass
class Dataset:
    """Columnar sample. ``u`` and ``x_cf`` are evaluation-only ground truth.

    Rows produced by augmentation carry NaN in the hidden columns.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    u: Optional[np.ndarray] = None
    x_cf: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.a = np.asarray(self.a, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        n = len(self.x)
        if self.a.shape != (n,) or self.y.shape != (n,):
            raise ValueError("x, a, y must share the leading dimension")
        if not np.all((self.a == 0) | (self.a == 1)):
            raise ValueError("a must be binary")
        for name in ("u", "x_cf"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.ndim == 1:
                    val = val[:, None]
                if val.shape != self.x.shape:
                    raise ValueError(f"{name} must have the same shape as x")
                setattr(self, name, val)

    def __len__(self):
        return len(self.x)

    @property
    def x_dim(self) -> int:
        return self.x.shape[1]

    def records(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield Record(
                x=self.x[i],
                a=int(self.a[i]),
                y=float(self.y[i]),
                u=None if self.u is None else self.u[i],
                x_cf=None if self.x_cf is None else self.x_cf[i],
            )

    def group_frequency(self) -> float:
        """Empirical P(A = 1)."""
        return float(np.mean(self.a))

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.x[idx],
            self.a[idx],
            self.y[idx],
            None if self.u is None else self.u[idx],
            None if self.x_cf is None else self.x_cf[idx],
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(p, q):
            if p is None or q is None:
                return p is None and q is None
            return np.array_equal(p, q, equal_nan=True)

        return all(same(getattr(self, k), getattr(other, k)) for k in ("x", "a", "y", "u", "x_cf"))

    def to_csv(self, path) -> None:
        d = self.x_dim
        header = [f"x{j}" for j in range(d)] + ["a", "y"]
        header += [f"u{j}" for j in range(d)] + [f"xcf{j}" for j in range(d)]
        nan_block = np.full_like(self.x, np.nan)
        u = self.u if self.u is not None else nan_block
        x_cf = self.x_cf if self.x_cf is not None else nan_block
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self)):
                row = [_fmt(v) for v in self.x[i]] + [str(int(self.a[i])), _fmt(self.y[i])]
                row += [_fmt(v) for v in u[i]] + [_fmt(v) for v in x_cf[i]]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = sum(1 for h in header if h.startswith("x") and not h.startswith("xcf"))
        arr = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        x = arr[:, :d]
        a = arr[:, d].astype(np.int64)
        y = arr[:, d + 1]
        u = arr[:, d + 2 : 2 * d + 2]
        x_cf = arr[:, 2 * d + 2 : 3 * d + 2]
        return cls(x, a, y, None if np.all(np.isnan(u)) else u, None if np.all(np.isnan(x_cf)) else x_cf)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _feature(spec: ScmSpec, x: np.ndarray) -> np.ndarray:
    return x if spec.form is Form.LINEAR else x**3


def _as_rows(v, dim: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a flat vector is a batch of scalars when dim == 1, else one point
        arr = arr[:, None] if dim == 1 else arr[None, :]
    if arr.shape[1] != dim:
        raise ValueError(f"expected {dim} feature columns, got {arr.shape[1]}")
    return arr


def features_from_u(spec: ScmSpec, u, a) -> np.ndarray:
    """Structural feature equation X = w_a * a + w_u * u, row-wise."""
    u = _as_rows(u, spec.x_dim)
    a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1), (len(u),))
    return spec.w_a[None, :] * a[:, None] + spec.w_u[None, :] * u


def u_from_features(spec: ScmSpec, x, a) -> np.ndarray:
    """Inverse of the feature equation given the attribute."""
    x = _as_rows(x, spec.x_dim)
    a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1), (len(x),))
    return (x - spec.w_a[None, :] * a[:, None]) / spec.w_u[None, :]


def link(spec: ScmSpec, u, a) -> np.ndarray:
    """Noise-free part of the Y equation as a function of (u, a)."""
    u = _as_rows(u, spec.x_dim)
    x = features_from_u(spec, u, a)
    return _feature(spec, x) @ spec.w_x + u @ spec.w_u_prime


def realize(spec: ScmSpec, u, a, eps_y=None, y_uniform=None) -> Dataset:
    """Push given exogenous draws through the structural equations.

    ``y_uniform`` supplies the uniforms used for the Bernoulli label in
    classification; it is required for that task.
    """
    u = _as_rows(u, spec.x_dim)
    n = len(u)
    a = np.broadcast_to(np.asarray(a, dtype=np.int64).reshape(-1), (n,)).copy()
    eps_y = np.zeros(n) if eps_y is None else np.broadcast_to(np.asarray(eps_y, float), (n,))
    x = features_from_u(spec, u, a)
    x_cf = features_from_u(spec, u, 1 - a)
    score = link(spec, u, a) + spec.w_y * eps_y
    if spec.task is Task.REGRESSION:
        y = score
    else:
        if y_uniform is None:
            raise ValueError("classification needs y_uniform for the Bernoulli draw")
        y = (np.asarray(y_uniform, float) < expit(score)).astype(float)
    return Dataset(x=x, a=a, y=y, u=u, x_cf=x_cf)


def sample(spec: ScmSpec, n: int, seed) -> Dataset:
    """Draw ``n`` i.i.d. records; identical (spec, n, seed) give identical data."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < spec.p_a).astype(np.int64)
    u = rng.standard_normal((n, spec.x_dim))
    eps_y = rng.standard_normal(n)
    y_uniform = rng.random(n) if spec.task is Task.CLASSIFICATION else None
    return realize(spec, u, a, eps_y=eps_y, y_uniform=y_uniform)


def gaussian_logistic_mean(m, scale: float, nodes: int = DEFAULT_QUAD_NODES) -> np.ndarray:
    """E[sigmoid(m + scale * Z)] for Z ~ N(0, 1) by Gauss-Hermite quadrature."""
    m = np.asarray(m, dtype=float)
    if scale == 0:
        return expit(m)
    t, w = hermgauss(nodes)
    vals = expit(m[..., None] + scale * np.sqrt(2.0) * t)
    return vals @ w / np.sqrt(np.pi)


def structural_y_mean(spec: ScmSpec, u, a, quad_nodes: int = DEFAULT_QUAD_NODES):
    """E[Y | U = u, A = a].

    Accepts a single point or a batch; returns a float for a single point.
    """
    single = np.ndim(u) == 0 or (np.ndim(u) == 1 and spec.x_dim > 1)
    m = link(spec, u, a)
    if spec.task is Task.CLASSIFICATION:
        m = gaussian_logistic_mean(m, spec.w_y, quad_nodes)
    return float(m[0]) if single else m


def true_counterfactual(spec: ScmSpec, x, a, a_prime):
    """F_X(F_X^{-1}(x, a), a'), which for this affine equation is x + w_a (a' - a)."""
    rows = _as_rows(x, spec.x_dim)
    shift = np.asarray(a_prime, dtype=float).reshape(-1) - np.asarray(a, dtype=float).reshape(-1)
    out = (rows + spec.w_a[None, :] * shift[:, None]).reshape(np.shape(x))
    return float(out) if out.ndim == 0 else out


class AnalyticBayes:
    """Closed-form E[Y | X = x, A = a] for a known SCM.

    ``NOISE_FREE`` plugs the inverted U into the noise-free link (and a
    sigmoid for classification).  ``EXACT_QUADRATURE`` additionally integrates
    the label noise, which is the true conditional mean for classification.
    """

    def __init__(self, spec: ScmSpec, mode: BayesMode = BayesMode.NOISE_FREE, quad_nodes: int = DEFAULT_QUAD_NODES):
        mode = BayesMode(mode)
        if mode is BayesMode.EXACT_QUADRATURE and spec.task is Task.REGRESSION:
            raise ValueError("ExactQuadrature only applies to classification; use the noise-free form")
        self.spec = spec
        self.mode = mode
        self.quad_nodes = quad_nodes

    def __call__(self, x, a):
        spec = self.spec
        x = _as_rows(x, spec.x_dim)
        a = np.broadcast_to(np.asarray(a, dtype=float).reshape(-1), (len(x),))
        u = u_from_features(spec, x, a)
        score = _feature(spec, x) @ spec.w_x + u @ spec.w_u_prime
        if spec.task is Task.REGRESSION:
            return score
        if self.mode is BayesMode.NOISE_FREE:
            return expit(score)
        return gaussian_logistic_mean(score, spec.w_y, self.quad_nodes)

    def lipschitz_constant(self) -> float:
        """Exact (regression) or sup-slope (classification) Lipschitz constant in x.

        Only linear forms are globally Lipschitz.
        """
        spec = self.spec
        if spec.form is not Form.LINEAR:
            raise ValueError("cubic forms are not globally Lipschitz in x")
        slope = float(np.linalg.norm(spec.w_x + spec.w_u_prime / spec.w_u))
        return slope if spec.task is Task.REGRESSION else slope / 4.0

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "mode": self.mode.value, "quad_nodes": self.quad_nodes}


def analytic_bayes(spec: ScmSpec, mode: BayesMode = BayesMode.NOISE_FREE) -> AnalyticBayes:
    return AnalyticBayes(spec, mode)


@dataclass(frozen=True)
class DiscreteScm:
    """SCM whose scalar U is restricted to a finite weighted grid."""

    u_grid: np.ndarray
    weights: np.ndarray
    spec: ScmSpec

    def __post_init__(self):
        if self.spec.x_dim != 1:
            raise ValueError("discretization is defined for x_dim == 1")
        if np.any(np.diff(self.u_grid) <= 0):
            raise ValueError("grid must be strictly ascending")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("grid weights must sum to one")


def discretize(spec: ScmSpec, grid_size: int, support_radius: float) -> DiscreteScm:
    if grid_size < 3:
        raise ValueError("grid_size must be at least 3")
    if support_radius <= 0:
        raise ValueError("support_radius must be positive")
    grid = np.linspace(-support_radius, support_radius, grid_size)
    grid = 0.5 * (grid - grid[::-1])  # exact mirror symmetry about zero
    dens = np.exp(-0.5 * grid**2)
    weights = dens / dens.sum()
    return DiscreteScm(grid, weights, spec)
