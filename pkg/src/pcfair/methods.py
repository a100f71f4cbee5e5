"""Prediction strategies compared in the benchmarks.

``p_a`` is always P(A = 1); the weight of the observed group is derived
from it per record.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cgm import Cgm, UEstimator
from .predictors import FeatureMap, Predictor


class MethodKind(str, enum.Enum):
    ERM = "erm"
    CFU = "cfu"
    CFR = "cfr"
    ECOCF = "ecocf"
    PCF = "pcf"
    PCF_ANA = "pcf-ana"
    PCF_CRM = "pcf-crm"


NEEDS_CGM = {MethodKind.CFR, MethodKind.ECOCF, MethodKind.PCF, MethodKind.PCF_ANA, MethodKind.PCF_CRM}
FEATURE_MAP = {MethodKind.CFU: FeatureMap.U_ONLY, MethodKind.CFR: FeatureMap.SYM_XU}


def _group_weight(p_a: float, a) -> np.ndarray:
    a = np.asarray(a)
    return np.where(a == 1, p_a, 1.0 - p_a)


def _require_map(phi: Predictor, fmap: FeatureMap):
    if phi.feature_map is not fmap:
        raise ValueError(f"predictor consumes {phi.feature_map.value!r}, expected {fmap.value!r}")


def pcf_predict(phi: Predictor, g: Cgm, p_a: float, x, a) -> np.ndarray:
    """Plug-in counterfactual fairness: mix the factual prediction with the
    prediction at the generated counterfactual, weighted by the group prior."""
    _require_map(phi, FeatureMap.XA)
    a = np.asarray(a)
    x_hat = g(x, a, 1 - a)
    w = _group_weight(p_a, a)
    return w * phi(x, a) + (1.0 - w) * phi(x_hat, 1 - a)


def ecocf_predict(phi: Predictor, g: Cgm, p_a: float, x, a) -> np.ndarray:
    """Equal-counterfactual-opportunity adjustment, transcribed term by term."""
    _require_map(phi, FeatureMap.XA)
    a = np.asarray(a)
    x_hat = g(x, a, 1 - a)
    p = _group_weight(p_a, a)
    factual = p * phi(x, a) + (1.0 - p) * phi(x, 1 - a)
    counter = (1.0 - p) * phi(x_hat, 1 - a) + p * phi(x_hat, a)
    return p * factual + (1.0 - p) * counter


def cfu_predict(phi_u: Predictor, u_hat) -> np.ndarray:
    _require_map(phi_u, FeatureMap.U_ONLY)
    if u_hat is None:
        raise ValueError("CFU needs an estimate of U")
    return phi_u(None, u_hat=u_hat)


def cfr_predict(phi_s: Predictor, x, x_cf_hat, u_hat) -> np.ndarray:
    _require_map(phi_s, FeatureMap.SYM_XU)
    if x_cf_hat is None or u_hat is None:
        raise ValueError("CFR needs the estimated counterfactual and U")
    return phi_s(x, u_hat=u_hat, x_cf_hat=x_cf_hat)


def mix_with_erm(fair_pred, erm_pred, lam: float):
    """lam * fair + (1 - lam) * erm."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return lam * np.asarray(fair_pred) + (1.0 - lam) * np.asarray(erm_pred)


@dataclass
class FairMethod:
    """A fitted strategy ready to score (x, a) pairs.

    ``phi`` is the predictor the strategy consumes (feature map XA for ERM
    and the PCF/ECOCF family, U-only for CFU, symmetric for CFR).  ``erm`` is
    the unconstrained predictor used when ``lam < 1``.
    """

    kind: MethodKind
    phi: Predictor
    p_a: float
    cgm: Optional[Cgm] = None
    u_estimator: Optional[UEstimator] = None
    erm: Optional[Predictor] = None
    lam: float = 1.0

    def __post_init__(self):
        self.kind = MethodKind(self.kind)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not 0.0 < self.p_a < 1.0:
            raise ValueError("p_a must lie strictly between 0 and 1")
        if self.kind in NEEDS_CGM and self.cgm is None:
            raise ValueError(f"{self.kind.value} needs a CGM")
        if self.kind in (MethodKind.CFU, MethodKind.CFR) and self.u_estimator is None:
            raise ValueError(f"{self.kind.value} needs a U estimator")
        if self.lam < 1.0 and self.erm is None:
            raise ValueError("mixing with ERM needs an ERM predictor")

    def with_lambda(self, lam: float) -> "FairMethod":
        return FairMethod(self.kind, self.phi, self.p_a, self.cgm, self.u_estimator, self.erm, lam)

    def _raw(self, x, a, u=None):
        k = self.kind
        if k is MethodKind.ERM:
            return self.phi(x, a)
        if k is MethodKind.CFU:
            return cfu_predict(self.phi, self.u_estimator(x, a, u))
        if k is MethodKind.CFR:
            a = np.asarray(a)
            return cfr_predict(self.phi, x, self.cgm(x, a, 1 - a), self.u_estimator(x, a, u))
        if k is MethodKind.ECOCF:
            return ecocf_predict(self.phi, self.cgm, self.p_a, x, a)
        return pcf_predict(self.phi, self.cgm, self.p_a, x, a)

    def __call__(self, x, a, u=None) -> np.ndarray:
        out = self._raw(x, a, u)
        if self.lam < 1.0:
            out = mix_with_erm(out, self.erm(x, a), self.lam)
        return out
