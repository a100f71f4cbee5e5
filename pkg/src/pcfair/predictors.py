"""Pretrained predictors: k-nearest neighbours, a small tanh MLP, and the
analytic Bayes wrapper, plus counterfactual data augmentation for CRM.

All predictors return a conditional-mean estimate: a real value for
regression and P(Y = 1 | .) for classification.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from .scm import AnalyticBayes, BayesMode, Dataset, ScmSpec, Task
from .cgm import Cgm


class PredictorKind(str, enum.Enum):
    KNN = "knn"
    MLP = "mlp"
    ANALYTIC = "analytic"


class FeatureMap(str, enum.Enum):
    XA = "xa"
    U_ONLY = "u"
    SYM_XU = "symxu"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    knn_k: int = 5
    mlp_hidden: Sequence[int] = (20, 20)
    learning_rate: float = 1e-3
    batch_size: int = 200
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        if self.knn_k < 1 or self.batch_size < 1 or self.epochs < 1 or any(h < 1 for h in self.mlp_hidden):
            raise ValueError("all counts in TrainConfig must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def build_features(feature_map: FeatureMap, x, a=None, u_hat=None, x_cf_hat=None) -> np.ndarray:
    """Design matrix consumed by a predictor with the given feature map."""
    feature_map = FeatureMap(feature_map)

    def rows(v, name):
        if v is None:
            raise ValueError(f"feature map {feature_map.value!r} needs {name}")
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            return v.reshape(1, 1)
        return v[:, None] if v.ndim == 1 else v

    if feature_map is FeatureMap.XA:
        x = rows(x, "x")
        a = np.broadcast_to(np.asarray(rows(a, "a"), dtype=float).reshape(-1), (len(x),))
        return np.column_stack([x, a])
    if feature_map is FeatureMap.U_ONLY:
        return rows(u_hat, "u_hat").copy()
    x, x_cf_hat, u_hat = rows(x, "x"), rows(x_cf_hat, "x_cf_hat"), rows(u_hat, "u_hat")
    return np.column_stack([(x + x_cf_hat) / 2.0, u_hat])


class Predictor:
    kind: PredictorKind

    def __init__(self, feature_map: FeatureMap, task: Task):
        self.feature_map = FeatureMap(feature_map)
        self.task = Task(task)

    def __call__(self, x, a=None, u_hat=None, x_cf_hat=None) -> np.ndarray:
        return self.predict_features(build_features(self.feature_map, x, a, u_hat, x_cf_hat))

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "Predictor":
        kind = PredictorKind(d["kind"])
        if kind is PredictorKind.KNN:
            return KnnPredictor(np.array(d["points"]), np.array(d["targets"]), d["k"], d["feature_map"], d["task"])
        if kind is PredictorKind.MLP:
            return MlpPredictor(
                [np.array(w) for w in d["weights"]],
                [np.array(b) for b in d["biases"]],
                np.array(d["x_shift"]), np.array(d["x_scale"]),
                d["y_shift"], d["y_scale"], d["feature_map"], d["task"],
            )
        return AnalyticPredictor(AnalyticBayes(ScmSpec.from_dict(d["spec"]), d["mode"], d["quad_nodes"]))

    @staticmethod
    def from_json(text: str) -> "Predictor":
        return Predictor.from_dict(json.loads(text))


def predict(p: Predictor, x, a=None, u_hat=None, x_cf_hat=None) -> np.ndarray:
    return p(x, a, u_hat=u_hat, x_cf_hat=x_cf_hat)


# ---------------------------------------------------------------------------
# analytic


class AnalyticPredictor(Predictor):
    kind = PredictorKind.ANALYTIC

    def __init__(self, bayes: AnalyticBayes):
        super().__init__(FeatureMap.XA, bayes.spec.task)
        self.bayes = bayes

    def __call__(self, x, a=None, u_hat=None, x_cf_hat=None):
        return self.bayes(x, a)

    def predict_features(self, features):
        d = self.bayes.spec.x_dim
        return self.bayes(features[:, :d], features[:, d])

    def to_dict(self):
        return {"kind": self.kind.value, **self.bayes.to_dict()}


def analytic_predictor(spec: ScmSpec, mode: BayesMode = BayesMode.NOISE_FREE) -> AnalyticPredictor:
    return AnalyticPredictor(AnalyticBayes(spec, mode))


# ---------------------------------------------------------------------------
# k-nearest neighbours


class KnnPredictor(Predictor):
    """Uniform-weight KNN under Euclidean distance.

    Distance ties are broken by the lower training index.  For
    classification the neighbour label mean is returned as a probability.
    """

    kind = PredictorKind.KNN

    def __init__(self, points, targets, k, feature_map, task):
        super().__init__(feature_map, task)
        self.points = np.asarray(points, dtype=float)
        self.targets = np.asarray(targets, dtype=float)
        self.k = int(k)
        self._tree = cKDTree(self.points)

    def neighbours(self, features: np.ndarray) -> np.ndarray:
        n = len(self.points)
        k = self.k
        m = len(features)
        if k >= n:
            return np.broadcast_to(np.arange(n), (m, n))
        out = np.empty((m, k), dtype=np.int64)
        todo = np.arange(m)
        width = min(n, 2 * k)
        while len(todo):
            dist, idx = self._tree.query(features[todo], k=width)
            dist = dist.reshape(len(todo), width)
            idx = idx.reshape(len(todo), width)
            # the tree sorts by distance; only rows with exact ties need reordering
            tied = np.any(dist[:, 1:] == dist[:, :-1], axis=1)
            if tied.any():
                order = np.lexsort((idx[tied], dist[tied]), axis=1)
                dist[tied] = np.take_along_axis(dist[tied], order, axis=1)
                idx[tied] = np.take_along_axis(idx[tied], order, axis=1)
            # a tie at the k-th distance may continue past the retrieved window
            unsure = (dist[:, k - 1] == dist[:, -1]) & (width < n)
            out[todo[~unsure]] = idx[~unsure, :k]
            todo = todo[unsure]
            width = min(n, 2 * width)
        return out

    def predict_features(self, features):
        features = np.asarray(features, dtype=float)
        if self.k >= len(self.points):
            return np.full(len(features), self.targets.mean())
        return self.targets[self.neighbours(features)].mean(axis=1)

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "feature_map": self.feature_map.value,
            "task": self.task.value,
            "k": self.k,
            "points": self.points.tolist(),
            "targets": self.targets.tolist(),
        }


def fit_knn(data: Dataset, feature_map: FeatureMap, task: Task, cfg: TrainConfig = TrainConfig(),
            u_hat=None, x_cf_hat=None) -> KnnPredictor:
    if len(data) < cfg.knn_k:
        raise ValueError(f"need at least k={cfg.knn_k} training points, got {len(data)}")
    feats = build_features(feature_map, data.x, data.a, u_hat, x_cf_hat)
    return KnnPredictor(feats, data.y, cfg.knn_k, feature_map, task)


# ---------------------------------------------------------------------------
# multilayer perceptron


def mlp_forward(weights, biases, X):
    """Return the output pre-activation and the hidden activations."""
    acts = [X]
    h = X
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    return (h @ weights[-1] + biases[-1])[:, 0], acts


def mlp_loss_and_grad(weights, biases, X, y, task: Task):
    """Mean squared error (regression) or mean binary cross-entropy on the
    logit (classification), with its gradient by backpropagation."""
    out, acts = mlp_forward(weights, biases, X)
    n = len(y)
    if Task(task) is Task.REGRESSION:
        resid = out - y
        loss = float(np.mean(resid**2))
        delta = (2.0 / n) * resid
    else:
        # log(1 + e^z) - y z, stable form
        loss = float(np.mean(np.logaddexp(0.0, out) - y * out))
        delta = (expit(out) - y) / n
    delta = delta[:, None]
    gW = [None] * len(weights)
    gb = [None] * len(biases)
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, gW, gb


def init_mlp(sizes: Sequence[int], rng: np.random.Generator):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


class MlpPredictor(Predictor):
    kind = PredictorKind.MLP

    def __init__(self, weights, biases, x_shift, x_scale, y_shift, y_scale, feature_map, task):
        super().__init__(feature_map, task)
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.x_shift, self.x_scale = np.asarray(x_shift, float), np.asarray(x_scale, float)
        self.y_shift, self.y_scale = float(y_shift), float(y_scale)

    def predict_features(self, features):
        X = (np.asarray(features, dtype=float) - self.x_shift) / self.x_scale
        out, _ = mlp_forward(self.weights, self.biases, X)
        if self.task is Task.CLASSIFICATION:
            return expit(out)
        return out * self.y_scale + self.y_shift

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "feature_map": self.feature_map.value,
            "task": self.task.value,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_shift": self.x_shift.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_shift": self.y_shift,
            "y_scale": self.y_scale,
        }


def _scale(v):
    s = v.std(axis=0)
    return np.where(s > 0, s, 1.0)


def fit_mlp(data: Dataset, feature_map: FeatureMap, task: Task, cfg: TrainConfig = TrainConfig(),
            u_hat=None, x_cf_hat=None) -> MlpPredictor:
    """Mini-batch Adam on standardized inputs (and targets, for regression)."""
    task = Task(task)
    n = len(data)
    batch = min(cfg.batch_size, n)
    feats = build_features(feature_map, data.x, data.a, u_hat, x_cf_hat)
    with np.errstate(over="ignore", invalid="ignore"):
        x_shift, x_scale = feats.mean(axis=0), _scale(feats)
    X = (feats - x_shift) / x_scale
    if task is Task.REGRESSION:
        with np.errstate(over="ignore", invalid="ignore"):
            y_shift, y_scale = float(data.y.mean()), float(_scale(data.y))
    else:
        y_shift, y_scale = 0.0, 1.0
    if not (np.isfinite(y_shift) and np.isfinite(y_scale) and np.all(np.isfinite(x_scale))):
        raise TrainingError("non-finite standardization; inputs or targets overflow")
    y = (data.y - y_shift) / y_scale

    rng = np.random.default_rng(cfg.seed)
    weights, biases = init_mlp([X.shape[1], *cfg.mlp_hidden, 1], rng)
    # start from the (standardized) mean prediction
    weights[-1][:] = 0.0
    biases[-1][:] = 0.0
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, cfg.learning_rate
    step = 0
    nw = len(weights)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gW, gb = mlp_loss_and_grad(params[:nw], params[nw:], X[idx], y[idx], task)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at step {step}")
            step += 1
            for i, g in enumerate(gW + gb):
                m[i] = b1 * m[i] + (1 - b1) * g
                v[i] = b2 * v[i] + (1 - b2) * g * g
                mhat = m[i] / (1 - b1**step)
                vhat = v[i] / (1 - b2**step)
                params[i] = params[i] - lr * mhat / (np.sqrt(vhat) + eps)
    return MlpPredictor(params[:nw], params[nw:], x_shift, x_scale, y_shift, y_scale, feature_map, task)


# ---------------------------------------------------------------------------
# counterfactual risk minimization


def crm_augment(data: Dataset, g: Cgm) -> Dataset:
    """Append one generated counterfactual per record, keeping its label.

    Hidden columns of the generated rows are NaN.
    """
    x_gen = np.asarray(g(data.x, data.a, 1 - data.a), dtype=float).reshape(data.x.shape)
    nan = np.full_like(data.x, np.nan)
    return Dataset(
        x=np.vstack([data.x, x_gen]),
        a=np.concatenate([data.a, 1 - data.a]),
        y=np.concatenate([data.y, data.y]),
        u=None if data.u is None else np.vstack([data.u, nan]),
        x_cf=None if data.x_cf is None else np.vstack([data.x_cf, nan]),
    )
