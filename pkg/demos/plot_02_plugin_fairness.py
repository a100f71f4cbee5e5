"""
Making a pretrained predictor counterfactually fair
===================================================

The plug-in rule mixes a predictor's output at the observed record with its
output at the generated counterfactual, weighting each side by how common
the corresponding group is.  The result agrees on every counterfactual pair.
"""

import numpy as np

from pcfair.cgm import UEstimator, oracle_cgm
from pcfair.methods import FairMethod, MethodKind
from pcfair.metrics import evaluate
from pcfair.predictors import FeatureMap, analytic_predictor, fit_knn, fit_mlp
from pcfair.scm import preset, sample

spec = preset("linear-cls")
train, test = sample(spec, 10_000, seed=0), sample(spec, 5_000, seed=1)
g = oracle_cgm(spec)
p_a = train.group_frequency()

# %%
# Any pretrained predictor of Y from (X, A) can be plugged in.
knn = fit_knn(train, FeatureMap.XA, spec.task)
mlp = fit_mlp(train, FeatureMap.XA, spec.task)
bayes = analytic_predictor(spec, "exact")

methods = {
    "ERM (knn)": FairMethod(MethodKind.ERM, knn, p_a),
    "plug-in (knn)": FairMethod(MethodKind.PCF, knn, p_a, g),
    "plug-in (mlp)": FairMethod(MethodKind.PCF, mlp, p_a, g),
    "plug-in (Bayes)": FairMethod(MethodKind.PCF_ANA, bayes, spec.p_a, g),
}

# %%
# Baselines that only look at U, or at a representation symmetric in the
# two counterfactual worlds, are also fair but throw information away.
phi_u = fit_knn(train, FeatureMap.U_ONLY, spec.task, u_hat=train.u)
methods["U only (knn)"] = FairMethod(MethodKind.CFU, phi_u, p_a, u_estimator=UEstimator())

# KNN probabilities are multiples of 1/k, so a neighbourhood with no
# positives scores log(1e-12) under cross-entropy; the 0-1 error is the
# gentler view of those rows.
for name, m in methods.items():
    rep = evaluate(m, test, spec.task)
    print(f"{name:>16}: cross-entropy {rep.error:.4f}  0-1 error {rep.error_zero_one:.4f}  TE {rep.te:.2e}")

# %%
# Blending with the unconstrained predictor trades fairness for accuracy
# along a straight line in TE.
pcf = FairMethod(MethodKind.PCF, knn, p_a, g, erm=knn)
for lam in np.linspace(0, 1, 5):
    rep = evaluate(pcf.with_lambda(lam), test, spec.task)
    print(f"lambda={lam:.2f}: TE {rep.te:.4f}  cross-entropy {rep.error:.4f}")
