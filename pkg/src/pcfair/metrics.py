"""Evaluation metrics and numerical checks of the fairness/accuracy theory.

Predictions are scored through a callable ``pred_fn(x, a, u)``; ``u`` is
the hidden exogenous column, forwarded so that simulated U estimators can
use it.  Total effect always compares a record with its ground-truth
counterfactual, whatever mechanism the method used internally.
"""
from __future__ import annotations

import enum
import inspect
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cgm import bounded_noisy_cgm, oracle_cgm
from .methods import FairMethod, MethodKind
from .optimize import golden_section
from .predictors import analytic_predictor
from .scm import BayesMode, Dataset, DiscreteScm, ScmSpec, Task, sample, structural_y_mean

PredFn = Callable[..., np.ndarray]

PROB_CLIP = 1e-12
TE_TOL = 1e-9


class Loss(str, enum.Enum):
    MSE = "mse"
    CROSS_ENTROPY = "ce"
    ZERO_ONE = "01"


def default_loss(task: Task) -> Loss:
    return Loss.MSE if Task(task) is Task.REGRESSION else Loss.CROSS_ENTROPY


def pointwise_loss(pred, y, loss: Loss) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    loss = Loss(loss)
    if loss is Loss.MSE:
        return (pred - y) ** 2
    if loss is Loss.CROSS_ENTROPY:
        p = np.clip(pred, PROB_CLIP, 1.0 - PROB_CLIP)
        return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return ((pred >= 0.5).astype(float) != y).astype(float)


def _accepts_u(pred_fn) -> bool:
    try:
        params = inspect.signature(pred_fn).parameters.values()
    except (TypeError, ValueError):
        return True
    positional = [p for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    return len(positional) >= 3 or any(p.kind is p.VAR_POSITIONAL for p in params)


def _call(pred_fn: PredFn, x, a, u):
    if _accepts_u(pred_fn):
        return np.asarray(pred_fn(x, a, u), dtype=float)
    return np.asarray(pred_fn(x, a), dtype=float)


def error(pred_fn: PredFn, test: Dataset, task: Task = Task.REGRESSION, loss: Optional[Loss] = None) -> float:
    if len(test) == 0:
        raise ValueError("empty test set")
    loss = default_loss(task) if loss is None else Loss(loss)
    return float(np.mean(pointwise_loss(_call(pred_fn, test.x, test.a, test.u), test.y, loss)))


def _require_cf(test: Dataset):
    if test.x_cf is None or np.isnan(test.x_cf).any():
        raise ValueError("total effect needs ground-truth counterfactuals for every record")


def counterfactual_gaps(pred_fn: PredFn, test: Dataset, factual=None) -> np.ndarray:
    """|y_hat(x, a) - y_hat(x_cf, 1 - a)| per record.

    ``factual`` may carry precomputed predictions on the factual inputs.
    """
    _require_cf(test)
    if factual is None:
        factual = _call(pred_fn, test.x, test.a, test.u)
    counter = _call(pred_fn, test.x_cf, 1 - test.a, test.u)
    return np.abs(factual - counter)


def _te_from_gaps(gaps: np.ndarray, a: np.ndarray):
    te = float(np.mean(gaps))
    per_group = []
    for g in (0, 1):
        m = a == g
        per_group.append(float(np.mean(gaps[m])) if m.any() else 0.0)
    return te, per_group[0], per_group[1]


def total_effect(pred_fn: PredFn, test: Dataset):
    """Return (te, te0, te1); an empty group contributes 0."""
    return _te_from_gaps(counterfactual_gaps(pred_fn, test), test.a)


@dataclass
class EvalReport:
    error: float
    te: float
    te0: float
    te1: float
    n_test: int
    task: str
    error_zero_one: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate(pred_fn: PredFn, test: Dataset, task: Task, loss: Optional[Loss] = None) -> EvalReport:
    task = Task(task)
    if len(test) == 0:
        raise ValueError("empty test set")
    _require_cf(test)
    loss = default_loss(task) if loss is None else Loss(loss)
    factual = _call(pred_fn, test.x, test.a, test.u)
    te, te0, te1 = _te_from_gaps(counterfactual_gaps(pred_fn, test, factual), test.a)
    err = float(np.mean(pointwise_loss(factual, test.y, loss)))
    zo = None
    if task is Task.CLASSIFICATION:
        zo = float(np.mean(pointwise_loss(factual, test.y, Loss.ZERO_ONE)))
    return EvalReport(err, te, te0, te1, len(test), task.value, zo)


# ---------------------------------------------------------------------------
# inherent excess risk


def _mean_se(values: np.ndarray):
    values = np.asarray(values, dtype=float)
    n = len(values)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values)), se


def _draw_u(spec: ScmSpec, mc_n: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((mc_n, spec.x_dim))


def excess_risk_regression(spec: ScmSpec, mc_n: int = 100_000, seed=0, return_se: bool = False):
    """Squared-loss price of perfect counterfactual fairness:
    Var(A) * E_U[(E[Y|U,A=1] - E[Y|U,A=0])^2], by Monte Carlo over U."""
    if spec.task is not Task.REGRESSION:
        raise ValueError("excess_risk_regression needs a regression SCM")
    u = _draw_u(spec, mc_n, seed)
    diff = structural_y_mean(spec, u, 1) - structural_y_mean(spec, u, 0)
    mean, se = _mean_se(spec.sigma2_a * diff**2)
    return (mean, se) if return_se else mean


def _bernoulli_kl(p, q):
    p = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    q = np.clip(q, PROB_CLIP, 1 - PROB_CLIP)
    return p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))


def cond_mutual_info(spec: ScmSpec, mc_n: int = 100_000, quad_nodes: int = 64, seed=0, return_se: bool = False):
    """I(A; Y | U) in nats: Monte Carlo over U, quadrature over label noise."""
    if spec.task is not Task.CLASSIFICATION:
        raise ValueError("cond_mutual_info needs a classification SCM")
    u = _draw_u(spec, mc_n, seed)
    q1 = structural_y_mean(spec, u, 1, quad_nodes)
    q0 = structural_y_mean(spec, u, 0, quad_nodes)
    p1 = spec.p_a
    qbar = p1 * q1 + (1 - p1) * q0
    vals = p1 * _bernoulli_kl(q1, qbar) + (1 - p1) * _bernoulli_kl(q0, qbar)
    mean, se = _mean_se(vals)
    return (mean, se) if return_se else mean


def mean_abs_effect(spec: ScmSpec, mc_n: int = 100_000, seed=0) -> float:
    """E_U |E[Y|U,A=1] - E[Y|U,A=0]|."""
    u = _draw_u(spec, mc_n, seed)
    return float(np.mean(np.abs(structural_y_mean(spec, u, 1) - structural_y_mean(spec, u, 0))))


def predicted_excess(spec: ScmSpec, mc_n: int = 100_000, seed=0, return_se: bool = False):
    if spec.task is Task.REGRESSION:
        return excess_risk_regression(spec, mc_n, seed, return_se)
    return cond_mutual_info(spec, mc_n, seed=seed, return_se=return_se)


def paired_loss_gap(pred_a: PredFn, pred_b: PredFn, test: Dataset, loss: Loss):
    """Mean and standard error of loss(pred_a) - loss(pred_b) on one test set."""
    la = pointwise_loss(_call(pred_a, test.x, test.a, test.u), test.y, loss)
    lb = pointwise_loss(_call(pred_b, test.x, test.a, test.u), test.y, loss)
    return _mean_se(la - lb)


# ---------------------------------------------------------------------------
# bounded counterfactual error


@dataclass
class TheoryReport:
    predicted_excess: float
    empirical_excess: float
    relative_gap: float
    bound_L: float
    bound_eps: float
    observed_te_max: float
    te_bound: float = 0.0
    fair_excess: float = 0.0
    fair_excess_se: float = 0.0
    risk_bound: float = 0.0
    risk_bound_asserted: bool = True
    passed: bool = True
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def analytic_mode(spec: ScmSpec) -> BayesMode:
    """Bayes predictor mode that equals the true conditional mean."""
    return BayesMode.NOISE_FREE if spec.task is Task.REGRESSION else BayesMode.EXACT_QUADRATURE


def check_lipschitz_bound(spec: ScmSpec, eps0: float, seed=0, n_test: int = 100_000, mc_n: int = 100_000,
                          L: Optional[float] = None, mode: str = "ball") -> TheoryReport:
    """Run plug-in fairness with the analytic Bayes predictor and a CGM whose
    error is at most ``eps0``, and compare against the TE bound ``L * eps0``
    and the squared-loss risk bound relative to the fair optimum.

    ``L`` defaults to the exact Lipschitz constant; passing a smaller value
    is a negative control.  Violations are listed in the report, not raised.
    """
    if eps0 < 0:
        raise ValueError("eps0 must be non-negative")
    phi = analytic_predictor(spec, analytic_mode(spec))
    L_true = phi.bayes.lipschitz_constant()
    L = L_true if L is None else float(L)
    test = sample(spec, n_test, seed)
    loss = default_loss(spec.task)

    g_star = oracle_cgm(spec)
    g_hat = bounded_noisy_cgm(g_star, eps0, seed, mode)
    pcf_star = FairMethod(MethodKind.PCF_ANA, phi, spec.p_a, g_star)
    pcf_hat = FairMethod(MethodKind.PCF_ANA, phi, spec.p_a, g_hat)

    te = total_effect(pcf_hat, test)[0]
    te_bound = L * eps0
    pred, _ = predicted_excess(spec, mc_n, seed + 1, return_se=True)
    emp, _ = paired_loss_gap(pcf_star, phi, test, loss)
    fair_excess, fair_se = paired_loss_gap(pcf_hat, pcf_star, test, loss)
    sig2 = spec.sigma2_a
    if spec.task is Task.REGRESSION:
        risk_bound = sig2 * L**2 * eps0**2 + 2 * sig2 * L * eps0 * mean_abs_effect(spec, mc_n, seed + 2)
        asserted = True
    else:
        # assumes Lipschitz logits; reported as a diagnostic only
        risk_bound = L * eps0
        asserted = False

    violations = []
    if te > te_bound + TE_TOL:
        violations.append(f"te {te!r} exceeds L*eps0 = {te_bound!r}")
    if asserted and fair_excess > risk_bound + 3 * fair_se:
        violations.append(f"excess risk {fair_excess!r} exceeds bound {risk_bound!r}")
    gap = abs(emp - pred) / abs(pred) if pred != 0 else abs(emp)
    return TheoryReport(
        predicted_excess=pred, empirical_excess=emp, relative_gap=gap, bound_L=L, bound_eps=eps0,
        observed_te_max=te, te_bound=te_bound, fair_excess=fair_excess, fair_excess_se=fair_se,
        risk_bound=risk_bound, risk_bound_asserted=asserted, passed=not violations, violations=violations,
    )


# ---------------------------------------------------------------------------
# decomposed fair-optimal oracle


def _expected_loss(phi0: float, mean: float, loss: Loss, noise_var: float) -> float:
    if loss is Loss.MSE:
        return (phi0 - mean) ** 2 + noise_var
    return -(mean * math.log(phi0) + (1.0 - mean) * math.log1p(-phi0))


def _node_setup(d: DiscreteScm, loss, weights):
    spec = d.spec
    loss = default_loss(spec.task) if loss is None else Loss(loss)
    if loss is Loss.ZERO_ONE:
        raise ValueError("oracle supports squared loss and cross-entropy")
    p1 = spec.p_a if weights is None else weights[1]
    p0 = 1.0 - spec.p_a if weights is None else weights[0]
    m0 = structural_y_mean(spec, d.u_grid, 0)
    m1 = structural_y_mean(spec, d.u_grid, 1)
    if spec.task is Task.REGRESSION:
        var0 = var1 = np.full(len(d.u_grid), spec.w_y**2)
    else:
        var0, var1 = m0 * (1 - m0), m1 * (1 - m1)
    if loss is Loss.MSE:
        # widened when a steep structural mean leaves the usual range
        means = np.concatenate([np.ravel(m0), np.ravel(m1)])
        bracket = (min(-50.0, float(means.min()) - 1.0), max(50.0, float(means.max()) + 1.0))
    else:
        bracket = (1e-6, 1.0 - 1e-6)
    return loss, p0, p1, m0, m1, var0, var1, bracket


def fair_oracle_discrete(d: DiscreteScm, loss: Optional[Loss] = None, weights: Optional[Sequence[float]] = None,
                         bracket: Optional[Sequence[float]] = None, tol: float = 1e-10) -> np.ndarray:
    """Per grid node u, minimize p0 E[l(c, Y)|u, 0] + p1 E[l(c, Y)|u, 1] over
    the single value c shared by the counterfactual pair.

    Returns an array aligned with ``d.u_grid``.  ``weights`` overrides
    (p0, p1), e.g. to probe the degenerate single-group limit.
    """
    loss, p0, p1, m0, m1, var0, var1, default_bracket = _node_setup(d, loss, weights)
    lo, hi = default_bracket if bracket is None else bracket
    out = np.empty(len(d.u_grid))
    for i in range(len(d.u_grid)):
        def objective(c, i=i):
            return p0 * _expected_loss(c, m0[i], loss, var0[i]) + p1 * _expected_loss(c, m1[i], loss, var1[i])

        out[i] = golden_section(objective, lo, hi, tol)
    return out


def crm_oracle_discrete(d: DiscreteScm, loss: Optional[Loss] = None, bracket: Optional[Sequence[float]] = None,
                        tol: float = 1e-10) -> np.ndarray:
    """Per-node minimizer of the counterfactual-risk objective under the
    fairness constraint.

    Each factual draw (u, a) contributes its loss at the factual point and
    at the generated counterfactual, both scored against the factual Y.
    With the pair constrained to one value c both terms use c.
    """
    loss, p0, p1, m0, m1, var0, var1, default_bracket = _node_setup(d, loss, None)
    lo, hi = default_bracket if bracket is None else bracket
    out = np.empty(len(d.u_grid))
    for i in range(len(d.u_grid)):
        def objective(c, i=i):
            phi_at = {0: c, 1: c}  # phi(x_0, 0) and phi(x_1, 1)
            total = 0.0
            for a, p, m, v in ((0, p0, m0[i], var0[i]), (1, p1, m1[i], var1[i])):
                total += p * _expected_loss(phi_at[a], m, loss, v)
                total += p * _expected_loss(phi_at[1 - a], m, loss, v)
            return total

        out[i] = golden_section(objective, lo, hi, tol)
    return out
