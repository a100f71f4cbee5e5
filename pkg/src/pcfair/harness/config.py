"""Experiment and verification configuration (JSON)."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..methods import MethodKind
from ..predictors import PredictorKind, TrainConfig
from ..scm import ScmSpec, preset

OUT_DIR_ENV = "PCFAIR_OUT_DIR"

DEFAULT_N_TRAIN = 10_000
DEFAULT_N_TEST = 5_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    spec: ScmSpec


def parse_dataset(entry) -> DatasetEntry:
    """A preset name, or an inline spec dict with an optional ``name`` key."""
    if isinstance(entry, str):
        return DatasetEntry(entry.lower(), preset(entry))
    if isinstance(entry, dict):
        d = dict(entry)
        name = d.pop("name", "custom")
        if "preset" in d:
            base = preset(d.pop("preset"))
            return DatasetEntry(name if name != "custom" else entry["preset"], base.replace(**d))
        return DatasetEntry(name, ScmSpec.from_dict(d))
    raise ConfigError(f"cannot parse dataset entry {entry!r}")


@dataclass(frozen=True)
class MethodEntry:
    kind: MethodKind
    predictor: PredictorKind

    @property
    def label(self) -> str:
        return self.kind.value


def parse_method(entry) -> MethodEntry:
    if isinstance(entry, str):
        entry = {"kind": entry}
    kind = MethodKind(entry["kind"])
    default = PredictorKind.ANALYTIC if kind is MethodKind.PCF_ANA else PredictorKind.KNN
    pred = PredictorKind(entry.get("predictor", default.value))
    if kind is MethodKind.PCF_ANA and pred is not PredictorKind.ANALYTIC:
        raise ConfigError("pcf-ana always uses the analytic predictor")
    return MethodEntry(kind, pred)


CGM_KINDS = ("oracle", "noisy", "bounded", "meanshift", "rank")


@dataclass(frozen=True)
class CgmEntry:
    kind: str = "oracle"
    beta: float = 0.0
    alpha: float = 0.0
    eps0: float = 0.0
    mode: str = "ball"
    u_estimator: Optional[str] = None

    @property
    def label(self) -> str:
        return f"bounded-{self.mode}" if self.kind == "bounded" else self.kind

    def resolved_u_estimator(self) -> str:
        if self.u_estimator:
            return self.u_estimator
        return {"oracle": "oracle", "noisy": "noisy", "bounded": "oracle"}.get(self.kind, "meanshift")


def parse_cgm(entry) -> CgmEntry:
    if isinstance(entry, str):
        entry = {"kind": entry}
    if entry.get("kind") not in CGM_KINDS:
        raise ConfigError(f"cgm kind must be one of {CGM_KINDS}")
    c = CgmEntry(**entry)
    if c.alpha < 0 or c.eps0 < 0:
        raise ConfigError("alpha and eps0 must be non-negative")
    return c


@dataclass
class ExperimentConfig:
    datasets: list
    methods: list
    seeds: list
    n_train: int = DEFAULT_N_TRAIN
    n_test: int = DEFAULT_N_TEST
    cgms: list = field(default_factory=lambda: [CgmEntry()])
    lambdas: list = field(default_factory=lambda: [1.0])
    loss: Optional[str] = None
    analytic_mode: Optional[str] = None  # None: per task
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: Optional[str] = None
    name: str = "experiment"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if not self.datasets:
            raise ConfigError("datasets must be non-empty")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be at least 1")
        if any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            raise ConfigError("lambdas must lie in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        datasets = raw.pop("datasets", None)
        if datasets is None and "dataset" in raw:
            datasets = [raw.pop("dataset")]
        cgms = [parse_cgm(c) for c in raw.pop("cgms", [])]
        grid = raw.pop("noise_grid", None)
        if grid:
            for beta in grid.get("beta", [0.0]):
                for alpha in grid.get("alpha", [0.0]):
                    cgms.append(CgmEntry("noisy", beta=float(beta), alpha=float(alpha)))
        for eps0 in raw.pop("eps0", []):
            cgms.append(CgmEntry("bounded", eps0=float(eps0), mode=raw.get("bounded_mode", "ball")))
        raw.pop("bounded_mode", None)
        if not cgms:
            cgms = [CgmEntry()]
        train = TrainConfig(**raw.pop("train", {}))
        try:
            return cls(
                datasets=[parse_dataset(d) for d in (datasets or [])],
                methods=[parse_method(m) for m in raw.pop("methods", [])],
                seeds=[int(s) for s in raw.pop("seeds", [])],
                cgms=cgms,
                train=train,
                **raw,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def resolve_out_dir(flag: Optional[str], configured: Optional[str], default: str = "results") -> Path:
    """Flag beats environment beats config file."""
    return Path(flag or os.environ.get(OUT_DIR_ENV) or configured or default)
