"""Run benchmark grids and aggregate the results."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .. import cgm as cgm_mod
from ..cgm import UEstimator, UKind
from ..methods import FEATURE_MAP, FairMethod, MethodKind
from ..metrics import Loss, analytic_mode, evaluate
from ..predictors import (
    FeatureMap,
    PredictorKind,
    analytic_predictor,
    crm_augment,
    fit_knn,
    fit_mlp,
)
from ..scm import BayesMode, sample
from .config import CgmEntry, ExperimentConfig, MethodEntry

RESULT_COLUMNS = (
    "dataset", "method", "predictor", "cgm", "alpha", "beta", "eps0", "lambda",
    "seed", "error", "te", "te0", "te1",
)
CELL_COLUMNS = RESULT_COLUMNS[:8]
METRIC_COLUMNS = ("error", "te", "te0", "te1")


@dataclass
class ResultRow:
    dataset: str
    method: str
    predictor: str
    cgm: str
    alpha: float
    beta: float
    eps0: float
    lam: float
    seed: int
    error: float
    te: float
    te0: float
    te1: float

    def values(self) -> list:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return [d[c] for c in RESULT_COLUMNS]

    def to_dict(self) -> dict:
        return dict(zip(RESULT_COLUMNS, self.values()))


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def rows_to_csv(rows, columns=RESULT_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        vals = r.values() if isinstance(r, ResultRow) else [r[c] for c in columns]
        w.writerow([_fmt(v) for v in vals])
    return buf.getvalue()


def read_results_csv(path) -> list:
    """Rows as dicts, numeric columns parsed to float."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            try:
                r[k] = float(v)
            except (TypeError, ValueError):
                pass
    return rows


# ---------------------------------------------------------------------------
# one (dataset, seed) unit


def _build_cgm(entry: CgmEntry, spec, train, seed: int):
    base = cgm_mod.oracle_cgm(spec)
    if entry.kind == "oracle":
        return base
    if entry.kind == "noisy":
        return cgm_mod.noisy_cgm(base, entry.beta, entry.alpha, seed)
    if entry.kind == "bounded":
        return cgm_mod.bounded_noisy_cgm(base, entry.eps0, seed, entry.mode)
    if entry.kind == "meanshift":
        return cgm_mod.fit_meanshift_cgm(train)
    return cgm_mod.fit_rank_cgm(train)


def _build_u_estimator(entry: CgmEntry, train, seed: int) -> UEstimator:
    kind = entry.resolved_u_estimator()
    if kind == "oracle":
        return UEstimator(UKind.ORACLE_U)
    if kind == "noisy":
        return UEstimator(UKind.NOISY_U, entry.beta, entry.alpha, seed)
    return UEstimator.fit(train)


class _Unit:
    """Lazily fitted predictors shared by every cell of one (dataset, seed)."""

    def __init__(self, cfg: ExperimentConfig, ds, seed: int):
        self.cfg, self.ds, self.seed = cfg, ds, seed
        self.spec = ds.spec
        self.train = sample(self.spec, cfg.n_train, [seed, 0])
        self.test = sample(self.spec, cfg.n_test, [seed, 1])
        self.p_emp = self.train.group_frequency()
        self._cache = {}

    def _fit(self, pkind: PredictorKind, data, fmap: FeatureMap, u_hat=None, x_cf_hat=None):
        train_cfg = self.cfg.train
        if pkind is PredictorKind.KNN:
            return fit_knn(data, fmap, self.spec.task, train_cfg, u_hat, x_cf_hat)
        if pkind is PredictorKind.MLP:
            return fit_mlp(data, fmap, self.spec.task, train_cfg, u_hat, x_cf_hat)
        if fmap is not FeatureMap.XA:
            raise ValueError("the analytic predictor only consumes (x, a)")
        mode = self.cfg.analytic_mode
        return analytic_predictor(self.spec, analytic_mode(self.spec) if mode is None else BayesMode(mode))

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def erm(self, pkind):
        return self.cached(("xa", pkind), lambda: self._fit(pkind, self.train, FeatureMap.XA))

    def method(self, m: MethodEntry, c: CgmEntry, g, u_est) -> FairMethod:
        kind, pk = m.kind, m.predictor
        train = self.train
        p_a = self.spec.p_a if pk is PredictorKind.ANALYTIC else self.p_emp
        erm = None if pk is PredictorKind.ANALYTIC and kind in FEATURE_MAP else self.erm(pk)
        if kind in FEATURE_MAP:
            u_hat = u_est(train.x, train.a, train.u)
            if kind is MethodKind.CFU:
                phi = self.cached(("u", pk, c), lambda: self._fit(pk, train, FeatureMap.U_ONLY, u_hat=u_hat))
            else:
                x_cf_hat = g(train.x, train.a, 1 - train.a)
                phi = self.cached(("sym", pk, c), lambda: self._fit(
                    pk, train, FeatureMap.SYM_XU, u_hat=u_hat, x_cf_hat=x_cf_hat))
        elif kind is MethodKind.PCF_CRM:
            phi = self.cached(("crm", pk, c), lambda: self._fit(pk, crm_augment(train, g), FeatureMap.XA))
        else:
            phi = erm
        return FairMethod(kind, phi, p_a, g, u_est, erm)


def _run_unit(args) -> tuple:
    cfg, ds, seed = args
    rows, errors = [], []
    try:
        unit = _Unit(cfg, ds, seed)
    except Exception as exc:  # noqa: BLE001
        return rows, [f"dataset={ds.name} seed={seed}: {type(exc).__name__}: {exc}"]
    loss = None if cfg.loss is None else Loss(cfg.loss)
    for c in cfg.cgms:
        try:
            g = _build_cgm(c, unit.spec, unit.train, seed)
            u_est = _build_u_estimator(c, unit.train, seed)
        except Exception as exc:  # noqa: BLE001
            errors.append(f"dataset={ds.name} seed={seed} cgm={c.label}: {type(exc).__name__}: {exc}")
            continue
        for m in cfg.methods:
            lambdas = [1.0] if m.kind is MethodKind.ERM else cfg.lambdas
            try:
                method = unit.method(m, c, g, u_est)
                for lam in lambdas:
                    rep = evaluate(method.with_lambda(float(lam)), unit.test, unit.spec.task, loss)
                    rows.append(ResultRow(ds.name, m.label, m.predictor.value, c.label, c.alpha, c.beta,
                                          c.eps0, float(lam), seed, rep.error, rep.te, rep.te0, rep.te1))
            except Exception as exc:  # noqa: BLE001
                errors.append(f"dataset={ds.name} seed={seed} cgm={c.label} alpha={c.alpha} beta={c.beta} "
                              f"eps0={c.eps0} method={m.label} predictor={m.predictor.value}: "
                              f"{type(exc).__name__}: {exc}")
    return rows, errors


@dataclass
class RunResult:
    rows: list
    errors: list

    def summary(self) -> list:
        return summarize(self.rows)


def run_experiment(cfg: ExperimentConfig, seed_offset: int = 0, jobs: int = 1) -> RunResult:
    """Every (dataset, seed, cgm, method, lambda) cell, in config order.

    Units run in parallel with ``jobs > 1``; output order does not depend on it.
    """
    units = [(cfg, ds, int(s) + seed_offset) for ds in cfg.datasets for s in cfg.seeds]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_run_unit, units))
    else:
        outs = [_run_unit(u) for u in units]
    rows, errors = [], []
    for r, e in outs:
        rows.extend(r)
        errors.extend(e)
    return RunResult(rows, errors)


def _cell_key(row) -> tuple:
    d = row.to_dict() if isinstance(row, ResultRow) else row
    return tuple(d[c] for c in CELL_COLUMNS)


def summarize(rows) -> list:
    """Mean and sample std (ddof=1) of each metric across seeds, per cell."""
    groups = {}
    for r in rows:
        d = r.to_dict() if isinstance(r, ResultRow) else r
        groups.setdefault(_cell_key(d), []).append(d)
    out = []
    for key, members in groups.items():
        rec = dict(zip(CELL_COLUMNS, key))
        rec["n_seeds"] = len(members)
        for m in METRIC_COLUMNS:
            vals = np.array([float(d[m]) for d in members])
            rec[f"{m}_mean"] = float(vals.mean())
            rec[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(rec)
    return out


SUMMARY_COLUMNS = CELL_COLUMNS + ("n_seeds",) + tuple(
    f"{m}_{s}" for m in METRIC_COLUMNS for s in ("mean", "std"))


def write_outputs(result: RunResult, out_dir, fmt: str = "csv", config: Optional[dict] = None) -> dict:
    """Write results, summary and errors.log; return the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if fmt == "json":
        paths["results"] = out / "results.json"
        paths["results"].write_text(json.dumps([r.to_dict() for r in result.rows], indent=1) + "\n")
    elif fmt == "csv":
        paths["results"] = out / "results.csv"
        paths["results"].write_text(rows_to_csv(result.rows))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    paths["summary"] = out / "summary.csv"
    paths["summary"].write_text(rows_to_csv(result.summary(), SUMMARY_COLUMNS))
    paths["errors"] = out / "errors.log"
    paths["errors"].write_text("".join(e + "\n" for e in result.errors))
    if config is not None:
        paths["config"] = out / "config.json"
        paths["config"].write_text(json.dumps(config, indent=1, sort_keys=True) + "\n")
    return paths
