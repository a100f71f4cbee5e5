import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcfair.cgm import oracle_cgm
from pcfair.methods import FairMethod, MethodKind
from pcfair.metrics import (
    EvalReport,
    Loss,
    TheoryReport,
    analytic_mode,
    check_lipschitz_bound,
    cond_mutual_info,
    counterfactual_gaps,
    crm_oracle_discrete,
    error,
    evaluate,
    excess_risk_regression,
    fair_oracle_discrete,
    mean_abs_effect,
    paired_loss_gap,
    pointwise_loss,
    total_effect,
)
from pcfair.optimize import BracketError, golden_section
from pcfair.predictors import analytic_predictor
from pcfair.scm import Dataset, Task, discretize, features_from_u, preset, sample, structural_y_mean

LR = preset("linear-reg")
LC = preset("linear-cls")
PHI = analytic_predictor(LR)


# ---------------------------------------------------------------- error


def test_error_examples():
    d = sample(LR, 200, 0)
    assert error(lambda x, a: d.y, d) == 0.0
    c = sample(LC, 200, 0)
    assert error(lambda x, a: np.full(len(x), 0.5), c, Task.CLASSIFICATION) == pytest.approx(math.log(2), abs=1e-12)
    big = sample(LR, 100_000, 1)
    assert abs(error(PHI, big) - 1.0) <= 0.03


def test_error_rejects_empty():
    empty = Dataset(x=np.zeros((0, 1)), a=np.zeros(0, dtype=int), y=np.zeros(0))
    with pytest.raises(ValueError):
        error(PHI, empty)


def test_cross_entropy_clamps():
    out = pointwise_loss([0.0, 1.0], [1.0, 0.0], Loss.CROSS_ENTROPY)
    np.testing.assert_allclose(out, -math.log(1e-12), rtol=1e-6)
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(pointwise_loss([0.2, 0.7, 0.5], [0, 0, 1], Loss.ZERO_ONE), [0, 1, 0])


# ---------------------------------------------------------------- total effect


def test_te_examples():
    d = sample(LR, 3000, 2)
    assert total_effect(lambda x, a: np.full(len(x), 7.0), d) == (0.0, 0.0, 0.0)
    assert total_effect(lambda x, a: np.asarray(a, dtype=float), d) == (1.0, 1.0, 1.0)
    te, te0, te1 = total_effect(PHI, d)
    assert te == pytest.approx(1.0, abs=1e-12) and te0 == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_te_decomposition(seed):
    d = sample(preset("cubic-reg"), 257, seed)
    te, te0, te1 = total_effect(lambda x, a: np.sin(3 * np.ravel(x)) + a, d)
    p1 = d.a.mean()
    assert te == pytest.approx((1 - p1) * te0 + p1 * te1, rel=1e-12, abs=1e-15)
    assert te >= 0


def test_te_needs_counterfactuals():
    d = sample(LR, 10, 0)
    with pytest.raises(ValueError):
        total_effect(PHI, Dataset(x=d.x, a=d.a, y=d.y))


def test_te_zero_iff_every_gap_zero():
    d = sample(LC, 4000, 0)
    phi = analytic_predictor(LC, analytic_mode(LC))
    pcf = FairMethod(MethodKind.PCF, phi, 0.5, oracle_cgm(LC))
    for fn, fair in ((pcf, True), (phi, False)):
        gaps = counterfactual_gaps(fn, d)
        assert (gaps.mean() <= 1e-9) == (gaps.max() <= 1e-9) == fair


def test_evaluate_report():
    d = sample(LC, 2000, 0)
    phi = analytic_predictor(LC, analytic_mode(LC))
    rep = evaluate(phi, d, Task.CLASSIFICATION)
    assert rep.error == pytest.approx(error(phi, d, Task.CLASSIFICATION))
    assert (rep.te, rep.te0, rep.te1) == total_effect(phi, d)
    assert 0 <= rep.error_zero_one <= 1 and rep.n_test == 2000
    assert json.loads(rep.to_json())["task"] == "classification"
    assert isinstance(rep, EvalReport)
    assert evaluate(PHI, sample(LR, 50, 0), Task.REGRESSION).error_zero_one is None


# ---------------------------------------------------------------- excess risk


def test_excess_risk_examples():
    assert excess_risk_regression(LR, 10_000) == pytest.approx(0.25, abs=1e-12)
    assert excess_risk_regression(LR.replace(w_a=0.0), 10_000) == 0.0
    val, se = excess_risk_regression(preset("cubic-reg"), 100_000, seed=0, return_se=True)
    assert abs(val - 10.75) <= 0.05 * 10.75
    assert abs(val - 10.75) <= 4 * se
    with pytest.raises(ValueError):
        excess_risk_regression(LC)


def test_mean_abs_effect_linear():
    assert mean_abs_effect(LR, 1000) == pytest.approx(1.0, abs=1e-12)


def test_mutual_info_bounds():
    assert cond_mutual_info(LC.replace(w_a=0.0), 10_000) == pytest.approx(0.0, abs=1e-15)
    for spec in (LC, preset("cubic-cls"), LC.replace(w_a=20.0)):
        mi = cond_mutual_info(spec, 20_000)
        assert 0.0 <= mi <= math.log(2)
    with pytest.raises(ValueError):
        cond_mutual_info(LR)


def _nested_mc_mi(spec, n_outer, n_inner, seed):
    """Independent brute-force estimate: inner Monte Carlo for P(Y=1|u,a),
    then I(A;Y|U) = H(Y|U) - H(Y|U,A) averaged over outer draws of U."""
    rng = np.random.default_rng(seed)
    p1 = spec.p_a

    def h(q):
        q = np.clip(q, 1e-300, 1 - 1e-16)
        return -(q * np.log(q) + (1 - q) * np.log1p(-q))

    total = 0.0
    chunk = 2_000
    for start in range(0, n_outer, chunk):
        u = rng.standard_normal(min(chunk, n_outer - start))
        eps = rng.standard_normal((len(u), n_inner))
        q = {}
        for a in (0, 1):
            x = spec.w_a[0] * a + spec.w_u[0] * u
            logit = spec.w_x[0] * x + spec.w_u_prime[0] * u
            q[a] = np.mean(1 / (1 + np.exp(-(logit[:, None] + spec.w_y * eps))), axis=1)
        qbar = p1 * q[1] + (1 - p1) * q[0]
        total += np.sum(h(qbar) - p1 * h(q[1]) - (1 - p1) * h(q[0]))
    return total / n_outer


def test_mutual_info_against_nested_monte_carlo():
    oracle = _nested_mc_mi(LC, 100_000, 1_000, seed=99)
    mi = cond_mutual_info(LC, 100_000, seed=0)
    assert abs(mi - oracle) <= 0.02 * oracle


def test_paired_loss_gap_zero_for_same():
    d = sample(LR, 100, 0)
    assert paired_loss_gap(PHI, PHI, d, Loss.MSE) == (0.0, 0.0)


# ---------------------------------------------------------------- lipschitz bound


def test_lipschitz_eps_zero():
    rep = check_lipschitz_bound(LR, 0.0, seed=0, n_test=100_000)
    assert rep.passed and rep.observed_te_max <= 1e-9
    assert abs(rep.empirical_excess - rep.predicted_excess) <= 0.02
    assert rep.fair_excess == 0.0


def test_lipschitz_example_and_risk_rhs():
    rep = check_lipschitz_bound(LR, 0.1, seed=1, n_test=50_000)
    assert rep.bound_L == 2.0
    assert rep.observed_te_max <= 0.2
    assert rep.risk_bound == pytest.approx(0.11, abs=1e-12)
    assert rep.passed and not rep.violations
    assert isinstance(rep, TheoryReport) and json.loads(rep.to_json())["bound_eps"] == 0.1


def test_lipschitz_extremal_attains_bound():
    rep = check_lipschitz_bound(LR, 0.1, seed=2, n_test=20_000, mode="extremal")
    assert rep.observed_te_max == pytest.approx(0.2, abs=1e-9)
    bad = check_lipschitz_bound(LR, 0.1, seed=2, n_test=20_000, mode="extremal", L=1.0)
    assert not bad.passed and bad.violations


def test_lipschitz_classification_risk_not_asserted():
    rep = check_lipschitz_bound(LC, 0.1, seed=0, n_test=20_000)
    assert not rep.risk_bound_asserted
    assert rep.observed_te_max <= rep.bound_L * 0.1 + 1e-9
    with pytest.raises(ValueError):
        check_lipschitz_bound(LR, -0.1)


# ---------------------------------------------------------------- fair oracle


@pytest.mark.parametrize("spec, loss", [(LR, Loss.MSE), (LC, Loss.CROSS_ENTROPY)])
def test_fair_oracle_is_mixture(spec, loss):
    d = discretize(spec, 51, 4.0)
    m0, m1 = structural_y_mean(spec, d.u_grid, 0), structural_y_mean(spec, d.u_grid, 1)
    mix = 0.5 * m0 + 0.5 * m1
    np.testing.assert_allclose(fair_oracle_discrete(d, loss), mix, rtol=0, atol=1e-6)
    np.testing.assert_allclose(crm_oracle_discrete(d, loss), mix, rtol=0, atol=1e-6)


@pytest.mark.parametrize("spec", [LR, LC])
def test_pcf_ana_matches_oracle_nodes(spec):
    d = discretize(spec, 51, 4.0)
    phi = analytic_predictor(spec, analytic_mode(spec))
    pcf = FairMethod(MethodKind.PCF_ANA, phi, spec.p_a, oracle_cgm(spec))
    oracle = fair_oracle_discrete(d)
    for a in (0, 1):
        x = features_from_u(spec, d.u_grid, a)
        np.testing.assert_allclose(pcf(x, np.full(51, a)), oracle, rtol=0, atol=1e-6)


def test_fair_oracle_single_group_limit():
    d = discretize(LR, 21, 3.0)
    np.testing.assert_allclose(fair_oracle_discrete(d, weights=(0.0, 1.0)), structural_y_mean(LR, d.u_grid, 1),
                               atol=1e-6)
    c = discretize(LC, 21, 3.0)
    np.testing.assert_allclose(fair_oracle_discrete(c, weights=(1.0, 0.0)), structural_y_mean(LC, c.u_grid, 0),
                               atol=1e-6)


def test_fair_oracle_steep_regression_and_errors():
    d = discretize(preset("cubic-reg"), 51, 4.0)
    mix = 0.5 * (structural_y_mean(d.spec, d.u_grid, 0) + structural_y_mean(d.spec, d.u_grid, 1))
    assert np.abs(mix).max() > 50
    np.testing.assert_allclose(fair_oracle_discrete(d), mix, atol=1e-6)
    with pytest.raises(BracketError):
        fair_oracle_discrete(d, bracket=(-50.0, 50.0))
    with pytest.raises(ValueError):
        fair_oracle_discrete(d, Loss.ZERO_ONE)


# ---------------------------------------------------------------- golden section


def test_golden_section():
    assert golden_section(lambda c: (c - 0.3) ** 2, -5, 5) == pytest.approx(0.3, abs=1e-9)
    assert golden_section(lambda c: abs(c + 2.0), -50, 50) == pytest.approx(-2.0, abs=1e-9)
    with pytest.raises(BracketError):
        golden_section(lambda c: (c - 10) ** 2, -1, 1)
    with pytest.raises(ValueError):
        golden_section(lambda c: c, 1, 1)


@given(st.floats(-40, 40), st.floats(0.1, 10))
@settings(max_examples=40, deadline=None)
def test_golden_section_quadratics(m, s):
    assert abs(golden_section(lambda c: s * (c - m) ** 2, -50, 50) - m) <= 1e-8
