"""Counterfactual generating mechanisms and exogenous-variable estimators.

A CGM is a deterministic map ``g(x, a, a_prime) -> x_prime``.  Stochastic
kinds derive their perturbation from a hash of ``(seed, x, a, a_prime)`` so
that repeated queries of the same point always agree, and identity
interventions (``a_prime == a``) are never perturbed.
"""
from __future__ import annotations

import enum
import json
from typing import Optional

import numpy as np

from .scm import Dataset, ScmSpec, _as_rows


class CgmKind(str, enum.Enum):
    ORACLE = "oracle"
    NOISY_ORACLE = "noisy"
    BOUNDED_NOISY_ORACLE = "bounded"
    MEAN_SHIFT = "meanshift"
    RANK_PRESERVING = "rank"


class UKind(str, enum.Enum):
    ORACLE_U = "oracle"
    NOISY_U = "noisy"
    MEAN_SHIFT_RESIDUAL = "meanshift"


# ---------------------------------------------------------------------------
# hash-derived noise streams

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _point_keys(seed: int, x: np.ndarray, a: np.ndarray, a_prime: np.ndarray, salt: int = 0) -> np.ndarray:
    x = np.ascontiguousarray(x + 0.0, dtype=np.float64)  # folds -0.0 into 0.0
    bits = x.view(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(np.full(len(x), np.uint64(seed % 2**64)) + _GOLDEN * np.uint64(salt + 1))
        for j in range(x.shape[1]):
            h = _mix(h ^ bits[:, j]) + _GOLDEN
        tag = (a.astype(np.uint64) << np.uint64(1)) | a_prime.astype(np.uint64)
        return _mix(h ^ tag)


def _uniform(keys: np.ndarray, stream: int) -> np.ndarray:
    """Uniform [0, 1) variates, one per key, for a given stream index."""
    with np.errstate(over="ignore"):
        z = _mix(keys + _GOLDEN * np.uint64(stream + 1))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _normal(keys: np.ndarray, stream: int) -> np.ndarray:
    u1 = 1.0 - _uniform(keys, 2 * stream)
    u2 = _uniform(keys, 2 * stream + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def hashed_normal(seed: int, x, a, a_prime, dim: int, salt: int = 0) -> np.ndarray:
    """Standard normal draws of shape (n, dim), fixed by the query point."""
    x = np.asarray(x, dtype=float)
    x = x.reshape(-1, 1) if x.ndim < 2 else x
    n = len(x)
    a = np.broadcast_to(np.asarray(a, dtype=np.int64).reshape(-1), (n,))
    a_prime = np.broadcast_to(np.asarray(a_prime, dtype=np.int64).reshape(-1), (n,))
    keys = _point_keys(seed, x, a, a_prime, salt)
    return np.column_stack([_normal(keys, j) for j in range(dim)])


# ---------------------------------------------------------------------------
# CGMs


def _query_arrays(x, a, a_prime, dim):
    rows = _as_rows(x, dim)
    n = len(rows)
    a = np.broadcast_to(np.asarray(a, dtype=np.int64).reshape(-1), (n,))
    a_prime = np.broadcast_to(np.asarray(a_prime, dtype=np.int64).reshape(-1), (n,))
    return rows, a, a_prime


class Cgm:
    """Base class; subclasses implement ``_apply`` on row arrays."""

    kind: CgmKind

    def __init__(self, x_dim: int):
        self.x_dim = x_dim

    def __call__(self, x, a, a_prime):
        rows, a_arr, ap_arr = _query_arrays(x, a, a_prime, self.x_dim)
        out = self._apply(rows, a_arr, ap_arr).reshape(np.shape(x))
        return float(out) if out.ndim == 0 else out

    def _apply(self, x, a, a_prime):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "Cgm":
        kind = CgmKind(d["kind"])
        if kind is CgmKind.ORACLE:
            return OracleCgm(ScmSpec.from_dict(d["spec"]))
        if kind is CgmKind.NOISY_ORACLE:
            return NoisyCgm(OracleCgm(ScmSpec.from_dict(d["spec"])), d["beta"], d["alpha"], d["seed"])
        if kind is CgmKind.BOUNDED_NOISY_ORACLE:
            return BoundedNoisyCgm(
                OracleCgm(ScmSpec.from_dict(d["spec"])), d["eps0"], d["seed"], d.get("mode", "ball")
            )
        if kind is CgmKind.MEAN_SHIFT:
            return MeanShiftCgm(d["delta"])
        return RankCgm(d["quantiles"][0], d["quantiles"][1])

    @staticmethod
    def from_json(text: str) -> "Cgm":
        return Cgm.from_dict(json.loads(text))


class OracleCgm(Cgm):
    kind = CgmKind.ORACLE

    def __init__(self, spec: ScmSpec):
        super().__init__(spec.x_dim)
        self.spec = spec

    def _apply(self, x, a, a_prime):
        shift = (a_prime - a).astype(float)
        return x + self.spec.w_a[None, :] * shift[:, None]

    def to_dict(self):
        return {"kind": self.kind.value, "spec": self.spec.to_dict()}


def _require_oracle(base: Cgm):
    if not isinstance(base, OracleCgm):
        raise TypeError("noise models wrap the oracle CGM")


class NoisyCgm(Cgm):
    """Oracle output plus N(beta, alpha^2) noise per coordinate."""

    kind = CgmKind.NOISY_ORACLE

    def __init__(self, base: OracleCgm, beta: float, alpha: float, seed: int):
        _require_oracle(base)
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        super().__init__(base.x_dim)
        self.base, self.beta, self.alpha, self.seed = base, float(beta), float(alpha), int(seed)

    def _apply(self, x, a, a_prime):
        out = self.base._apply(x, a, a_prime)
        z = hashed_normal(self.seed, x, a, a_prime, self.x_dim)
        noise = self.beta + self.alpha * z
        noise[a_prime == a] = 0.0
        return out + noise

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "spec": self.base.spec.to_dict(),
            "beta": self.beta,
            "alpha": self.alpha,
            "seed": self.seed,
        }


class BoundedNoisyCgm(Cgm):
    """Oracle output perturbed by at most ``eps0`` in Euclidean norm.

    ``mode="ball"`` draws the perturbation uniformly from the ball.
    ``mode="extremal"`` uses a fixed perturbation of norm exactly ``eps0``
    whose sign flips with the direction of the intervention; for an affine
    predictor this attains the TE bound with equality.
    """

    kind = CgmKind.BOUNDED_NOISY_ORACLE

    def __init__(self, base: OracleCgm, eps0: float, seed: int, mode: str = "ball"):
        _require_oracle(base)
        if eps0 < 0:
            raise ValueError("eps0 must be non-negative")
        if mode not in ("ball", "extremal"):
            raise ValueError("mode must be 'ball' or 'extremal'")
        super().__init__(base.x_dim)
        self.base, self.eps0, self.seed, self.mode = base, float(eps0), int(seed), mode

    def _perturbation(self, x, a, a_prime):
        d = self.x_dim
        if self.mode == "extremal":
            sign = (a_prime - a).astype(float)
            return self.eps0 * sign[:, None] * np.full((len(x), d), 1.0 / np.sqrt(d))
        keys = _point_keys(self.seed, x, a, a_prime, salt=1)
        direction = np.column_stack([_normal(keys, j) for j in range(d)])
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radius = self.eps0 * _uniform(keys, 2 * d) ** (1.0 / d)
        return direction / norms * radius[:, None]

    def _apply(self, x, a, a_prime):
        exact = self.base._apply(x, a, a_prime)
        delta = self._perturbation(x, a, a_prime)
        delta[a_prime == a] = 0.0
        out = exact + delta
        # round-off in the addition may push the error a few ulps past eps0
        for _ in range(64):
            bad = np.linalg.norm(out - exact, axis=1) > self.eps0
            if not bad.any():
                break
            out[bad] = np.nextafter(out[bad], exact[bad])
        return out

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "spec": self.base.spec.to_dict(),
            "eps0": self.eps0,
            "seed": self.seed,
            "mode": self.mode,
        }


def _group_split(data: Dataset):
    groups = [data.x[data.a == g] for g in (0, 1)]
    if any(len(g) == 0 for g in groups):
        raise ValueError("both groups of A must be present")
    return groups


class MeanShiftCgm(Cgm):
    """g(x, a, a') = x + delta * (a' - a) with delta the group mean difference."""

    kind = CgmKind.MEAN_SHIFT

    def __init__(self, delta):
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        super().__init__(len(delta))
        self.delta = delta

    def _apply(self, x, a, a_prime):
        return x + self.delta[None, :] * (a_prime - a).astype(float)[:, None]

    def to_dict(self):
        return {"kind": self.kind.value, "delta": [float(v) for v in self.delta]}


class RankCgm(Cgm):
    """Monotone transport: empirical CDF of group a, then quantile of group a'."""

    kind = CgmKind.RANK_PRESERVING

    def __init__(self, sorted0, sorted1):
        super().__init__(1)
        self.tables = [np.asarray(sorted0, dtype=float), np.asarray(sorted1, dtype=float)]
        self.levels = [np.linspace(0.0, 1.0, len(t)) for t in self.tables]

    def _apply(self, x, a, a_prime):
        out = x[:, 0].copy()
        for src in (0, 1):
            for dst in (0, 1):
                m = (a == src) & (a_prime == dst)
                if not m.any():
                    continue
                q = np.interp(out[m], self.tables[src], self.levels[src])
                out[m] = np.interp(q, self.levels[dst], self.tables[dst])
        same = a == a_prime
        out[same] = x[same, 0]
        return out[:, None]

    def to_dict(self):
        return {"kind": self.kind.value, "quantiles": [t.tolist() for t in self.tables]}


def oracle_cgm(spec: ScmSpec) -> OracleCgm:
    return OracleCgm(spec)


def noisy_cgm(base: Cgm, beta: float, alpha: float, seed: int) -> NoisyCgm:
    return NoisyCgm(base, beta, alpha, seed)


def bounded_noisy_cgm(base: Cgm, eps0: float, seed: int, mode: str = "ball") -> BoundedNoisyCgm:
    return BoundedNoisyCgm(base, eps0, seed, mode)


def fit_meanshift_cgm(data: Dataset) -> MeanShiftCgm:
    """Estimate the shift from observed (x, a) only."""
    g0, g1 = _group_split(data)
    return MeanShiftCgm(g1.mean(axis=0) - g0.mean(axis=0))


def fit_rank_cgm(data: Dataset) -> RankCgm:
    if data.x_dim != 1:
        raise ValueError("rank transport is one-dimensional")
    g0, g1 = _group_split(data)
    return RankCgm(np.sort(g0[:, 0]), np.sort(g1[:, 0]))


# ---------------------------------------------------------------------------
# U estimators


class UEstimator:
    """Estimate the exogenous variable of a (possibly counterfactual) record.

    ``u`` is the hidden ground truth, consumed only by the oracle and noisy
    kinds (the simulation stand-in for a learned abduction step).
    """

    def __init__(self, kind: UKind = UKind.ORACLE_U, beta: float = 0.0, alpha: float = 0.0,
                 seed: int = 0, group_means: Optional[np.ndarray] = None):
        self.kind = UKind(kind)
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.kind is UKind.MEAN_SHIFT_RESIDUAL and group_means is None:
            raise ValueError("MeanShiftResidual needs group means; use UEstimator.fit")
        self.beta, self.alpha, self.seed = float(beta), float(alpha), int(seed)
        self.group_means = None if group_means is None else np.asarray(group_means, dtype=float)

    @classmethod
    def fit(cls, data: Dataset) -> "UEstimator":
        g0, g1 = _group_split(data)
        return cls(UKind.MEAN_SHIFT_RESIDUAL, group_means=np.vstack([g0.mean(axis=0), g1.mean(axis=0)]))

    def __call__(self, x, a, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x.reshape(-1, 1) if x.ndim < 2 else x
        a = np.broadcast_to(np.asarray(a, dtype=np.int64).reshape(-1), (len(x),))
        if self.kind is UKind.MEAN_SHIFT_RESIDUAL:
            # scale of U is not identified; unit scale assumed
            return x - self.group_means[a]
        if u is None:
            raise ValueError(f"{self.kind.value} U estimator needs the hidden u")
        u = np.asarray(u, dtype=float)
        u = u.reshape(-1, 1) if u.ndim < 2 else u
        if self.kind is UKind.ORACLE_U:
            return u.copy()
        # separate salt keeps these streams apart from CGM queries
        z = hashed_normal(self.seed, x, a, a, u.shape[1], salt=7)
        return u + self.beta + self.alpha * z

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "beta": self.beta, "alpha": self.alpha, "seed": self.seed}
        if self.group_means is not None:
            d["group_means"] = self.group_means.tolist()
        return d


def estimate_u(estimator: UEstimator, x, a, u=None) -> np.ndarray:
    return estimator(x, a, u)
