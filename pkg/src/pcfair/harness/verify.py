"""Theory-verification suite.

Each check returns a ``CheckResult``; ``run_verify`` writes one JSON report
per check plus ``failures.json`` and reports overall success.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..cgm import oracle_cgm
from ..methods import FairMethod, MethodKind
from ..metrics import (
    TE_TOL,
    Loss,
    analytic_mode,
    check_lipschitz_bound,
    counterfactual_gaps,
    crm_oracle_discrete,
    default_loss,
    fair_oracle_discrete,
    paired_loss_gap,
    predicted_excess,
    total_effect,
)
from ..predictors import FeatureMap, TrainConfig, analytic_predictor, fit_knn, fit_mlp
from ..scm import DiscreteScm, Form, analytic_bayes, discretize, sample, structural_y_mean
from .config import ConfigError, DatasetEntry, parse_dataset

CHECKS = ("perfect_cf", "excess_risk", "lipschitz", "optimality", "cf_equivalence")


@dataclass
class VerifyConfig:
    datasets: list
    checks: tuple = CHECKS
    seeds: tuple = (0, 1, 2, 3, 4)
    n_train: int = 2_000
    n_test: int = 100_000
    mc_n: int = 100_000
    eps0: tuple = (0.05, 0.1, 0.2)
    bounded_modes: tuple = ("ball", "extremal")
    lipschitz_scale: float = 1.0
    lipschitz: Optional[float] = None
    predictors: tuple = ("analytic", "knn")
    grid_size: int = 51
    support_radius: float = 4.0
    tol: float = 1e-6
    rel_tol: float = 0.05
    out_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "VerifyConfig":
        raw = dict(raw)
        ds = raw.pop("datasets", None)
        if ds is None:
            ds = [raw.pop("dataset", "linear-reg")]
        unknown = set(raw.get("checks", ())) - set(CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {CHECKS}")
        tuples = ("checks", "seeds", "eps0", "bounded_modes", "predictors")
        raw = {k: tuple(v) if k in tuples else v for k, v in raw.items()}
        try:
            return cls(datasets=[parse_dataset(d) for d in ds], **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class CheckResult:
    check: str
    dataset: str
    passed: bool
    applicable: bool = True
    details: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _fit(kind: str, spec, data):
    if kind == "analytic":
        return analytic_predictor(spec, analytic_mode(spec))
    fit = fit_knn if kind == "knn" else fit_mlp
    return fit(data, FeatureMap.XA, spec.task, TrainConfig())


def check_perfect_cf(ds: DatasetEntry, cfg: VerifyConfig) -> CheckResult:
    """PCF with the oracle CGM has zero total effect for any base predictor."""
    spec = ds.spec
    res = CheckResult("perfect_cf", ds.name, True)
    g = oracle_cgm(spec)
    for seed in cfg.seeds:
        train = sample(spec, cfg.n_train, [seed, 0])
        test = sample(spec, cfg.n_test, [seed, 1])
        for kind in cfg.predictors:
            phi = _fit(kind, spec, train)
            te = total_effect(FairMethod(MethodKind.PCF, phi, train.group_frequency(), g), test)[0]
            res.details[f"{kind}/seed{seed}"] = te
            if not te <= TE_TOL:
                res.violations.append(f"{kind} seed {seed}: te {te} > {TE_TOL}")
    res.passed = not res.violations
    return res


def check_excess_risk(ds: DatasetEntry, cfg: VerifyConfig) -> CheckResult:
    """Empirical PCF-Ana minus ERM-Ana loss against the closed-form excess risk.

    Passes when the seed-averaged gap is within ``rel_tol`` relative or three
    combined standard errors of the prediction, whichever is wider.
    """
    spec = ds.spec
    res = CheckResult("excess_risk", ds.name, True)
    pred, pred_se = predicted_excess(spec, cfg.mc_n, seed=[12345], return_se=True)
    mode = analytic_mode(spec)
    erm = analytic_predictor(spec, mode)
    pcf = FairMethod(MethodKind.PCF, erm, spec.p_a, oracle_cgm(spec))
    loss = default_loss(spec.task)
    gaps, ses = [], []
    for seed in cfg.seeds:
        test = sample(spec, cfg.n_test, [seed, 1])
        gap, se = paired_loss_gap(pcf, erm, test, loss)
        gaps.append(gap)
        ses.append(se)
    emp = float(np.mean(gaps))
    emp_se = float(math.sqrt(np.sum(np.square(ses))) / len(ses))
    slack = max(cfg.rel_tol * abs(pred), 3.0 * math.hypot(emp_se, pred_se))
    res.details = {"predicted_excess": pred, "predicted_se": pred_se, "empirical_excess": emp,
                   "empirical_se": emp_se, "per_seed": gaps,
                   "relative_gap": abs(emp - pred) / abs(pred) if pred else float("nan")}
    if abs(emp - pred) > slack:
        res.violations.append(f"empirical excess {emp} differs from predicted {pred} by more than {slack}")
    res.passed = not res.violations
    return res


def check_lipschitz(ds: DatasetEntry, cfg: VerifyConfig) -> CheckResult:
    spec = ds.spec
    res = CheckResult("lipschitz", ds.name, True)
    if spec.form is not Form.LINEAR:
        res.applicable = False
        res.details["note"] = "Lipschitz constant is only available for the linear form"
        return res
    L = cfg.lipschitz
    if L is None:
        L = cfg.lipschitz_scale * analytic_bayes(spec, analytic_mode(spec)).lipschitz_constant()
    reports = []
    for mode in cfg.bounded_modes:
        for eps0 in cfg.eps0:
            for seed in cfg.seeds:
                rep = check_lipschitz_bound(spec, eps0, seed=seed, n_test=cfg.n_test, mc_n=cfg.mc_n, L=L, mode=mode)
                d = rep.to_dict()
                d.update(mode=mode, eps0=eps0, seed=seed)
                reports.append(d)
                res.violations.extend(f"{mode} eps0={eps0} seed={seed}: {v}" for v in rep.violations)
    res.details = {"L": L, "reports": reports}
    res.passed = not res.violations
    return res


def check_optimality(ds: DatasetEntry, cfg: VerifyConfig) -> CheckResult:
    """PCF mixture of the structural mean vs the brute-force per-pair minimizer,
    for both the fair objective and the counterfactual-augmented one."""
    spec = ds.spec
    res = CheckResult("optimality", ds.name, True)
    if spec.x_dim != 1:
        res.applicable = False
        res.details["note"] = "discretization needs a one-dimensional U"
        return res
    d = discretize(spec, cfg.grid_size, cfg.support_radius)
    loss = default_loss(spec.task)
    m0 = structural_y_mean(spec, d.u_grid, 0)
    m1 = structural_y_mean(spec, d.u_grid, 1)
    mixture = (1.0 - spec.p_a) * m0 + spec.p_a * m1
    saturated = 0
    if loss is Loss.CROSS_ENTROPY:
        # probabilities rounded onto 0 or 1 leave no interior minimizer
        keep = (mixture > 1e-6) & (mixture < 1.0 - 1e-6)
        saturated = int((~keep).sum())
        if not keep.any():
            res.applicable = False
            res.details["note"] = "every node is saturated"
            return res
        w = d.weights[keep]
        d = DiscreteScm(d.u_grid[keep], w / w.sum(), spec)
        mixture = mixture[keep]
    fair = fair_oracle_discrete(d, loss)
    crm = crm_oracle_discrete(d, loss)
    fair_err = float(np.max(np.abs(fair - mixture)))
    crm_err = float(np.max(np.abs(crm - mixture)))
    res.details = {"loss": loss.value, "nodes": cfg.grid_size, "saturated_nodes": saturated,
                   "max_abs_err_fair": fair_err,
                   "max_abs_err_crm": crm_err}
    if fair_err > cfg.tol:
        res.violations.append(f"fair minimizer differs from the mixture by {fair_err}")
    if crm_err > cfg.tol:
        res.violations.append(f"CRM minimizer differs from the mixture by {crm_err}")
    res.passed = not res.violations
    return res


def check_cf_equivalence(ds: DatasetEntry, cfg: VerifyConfig) -> CheckResult:
    """Zero total effect exactly when every counterfactual gap vanishes.

    Exercised on the oracle PCF (both hold) and on ERM (neither holds when A
    has an effect on X).
    """
    spec = ds.spec
    res = CheckResult("cf_equivalence", ds.name, True)
    phi = analytic_predictor(spec, analytic_mode(spec))
    g = oracle_cgm(spec)
    cases = {"pcf": FairMethod(MethodKind.PCF, phi, spec.p_a, g), "erm": FairMethod(MethodKind.ERM, phi, spec.p_a)}
    test = sample(spec, min(cfg.n_test, 10_000), [cfg.seeds[0], 1])
    for name, fn in cases.items():
        gaps = counterfactual_gaps(fn, test)
        te_zero = float(gaps.mean()) <= TE_TOL
        all_zero = float(gaps.max()) <= TE_TOL
        res.details[name] = {"te": float(gaps.mean()), "max_gap": float(gaps.max())}
        if te_zero != all_zero:
            res.violations.append(f"{name}: te zero is {te_zero} but all gaps zero is {all_zero}")
    if res.details["pcf"]["te"] > TE_TOL:
        res.violations.append("oracle PCF is not counterfactually fair")
    res.passed = not res.violations
    return res


CHECK_FUNCS = {
    "perfect_cf": check_perfect_cf,
    "excess_risk": check_excess_risk,
    "lipschitz": check_lipschitz,
    "optimality": check_optimality,
    "cf_equivalence": check_cf_equivalence,
}


def run_checks(cfg: VerifyConfig) -> list:
    """Run every configured check; a crashing check is recorded as a failure."""
    results = []
    for ds in cfg.datasets:
        for c in cfg.checks:
            try:
                results.append(CHECK_FUNCS[c](ds, cfg))
            except Exception as exc:  # noqa: BLE001
                results.append(CheckResult(c, ds.name, False, violations=[f"{type(exc).__name__}: {exc}"]))
    return results


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_reports(results: list, out_dir) -> list:
    """One JSON report per check and ``failures.json``; returns the failure list."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    for r in results:
        (out / f"{r.dataset}_{r.check}.json").write_text(
            json.dumps(_jsonable(r.to_dict()), indent=1, sort_keys=True) + "\n")
        if not r.passed:
            failures.append({"check": r.check, "dataset": r.dataset, "violations": r.violations})
    (out / "failures.json").write_text(json.dumps(failures, indent=1) + "\n")
    return failures
