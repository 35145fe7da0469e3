import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from suelogit.equilibrium import Coefficients, EquilibriumOptions, solve_sue_logit
from suelogit.estimation import EstimationOptions, ObservedCounts, bilevel_optimization
from suelogit.inference import (
    DegreesOfFreedomError,
    IdentifiabilityError,
    coefficient_covariance,
    confidence_interval,
    estimate_sigma2,
    f_survival,
    f_test,
    fit_indicators,
    infer,
    significance_stars,
    t_quantile,
    t_test,
    t_two_sided_pvalue,
)
from suelogit.synthetic import DGPConfig, builtin_network, generate_counts


def test_t_tail_matches_high_precision_oracle(oracle):
    for t, dof, expected in oracle["distributions"]["t_two_sided"]:
        assert t_two_sided_pvalue(t, dof) == pytest.approx(expected, rel=1e-10)


def test_t_quantile_matches_high_precision_oracle(oracle):
    for prob, dof, expected in oracle["distributions"]["t_quantile"]:
        assert t_quantile(prob, dof) == pytest.approx(expected, rel=1e-9)


def test_f_survival_matches_high_precision_oracle(oracle):
    for f, d1, d2, expected in oracle["distributions"]["f_survival"]:
        assert f_survival(f, d1, d2) == pytest.approx(expected, rel=1e-9)


def test_infinite_dof_is_normal():
    assert t_two_sided_pvalue(1.959963984540054, math.inf) == pytest.approx(0.05, rel=1e-12)
    assert t_quantile(0.975, math.inf) == pytest.approx(1.959963984540054, rel=1e-12)


@given(st.floats(0.001, 0.999), st.integers(1, 200))
def test_quantile_inverts_tail(prob, dof):
    q = t_quantile(prob, dof)
    tail = t_two_sided_pvalue(q, dof)
    assert tail == pytest.approx(2 * min(prob, 1 - prob), rel=1e-7, abs=1e-12)


def test_covariance_is_sigma2_times_inverse_information(rng):
    J = rng.normal(size=(30, 3))
    cov = coefficient_covariance(J, 2.5)
    np.testing.assert_allclose(cov @ (J.T @ J), 2.5 * np.eye(3), atol=1e-10)
    np.testing.assert_array_equal(cov, cov.T)


def test_linear_regression_standard_errors(rng):
    # for a linear model the Jacobian is the design matrix, so the familiar
    # OLS quantities must come out
    X = np.column_stack([np.ones(40), rng.normal(size=40)])
    y = X @ [1.0, 2.0] + rng.normal(scale=0.3, size=40)
    beta, rss, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    s2 = estimate_sigma2(resid, 2)
    assert s2 == pytest.approx(rss[0] / 38)
    cov = coefficient_covariance(X, s2)
    Q, R = np.linalg.qr(X)
    Rinv = np.linalg.inv(R)
    np.testing.assert_allclose(cov, s2 * Rinv @ Rinv.T, rtol=1e-10)


def test_collinear_information_is_flagged():
    J = np.column_stack([np.arange(5.0), 2 * np.arange(5.0), np.ones(5)])
    with pytest.raises(IdentifiabilityError) as err:
        coefficient_covariance(J, 1.0, ["a", "b", "c"])
    assert set(err.value.flagged) == {"a", "b"}


def test_degrees_of_freedom():
    with pytest.raises(DegreesOfFreedomError):
        estimate_sigma2(np.ones(3), 3)
    with pytest.raises(DegreesOfFreedomError):
        t_two_sided_pvalue(1.0, 0)
    with pytest.raises(DegreesOfFreedomError):
        f_test(10.0, 5.0, 0, 4, 4)


def test_t_test_and_interval():
    t, p, reject = t_test(-2.0, 0.0, 0.25, 20, alpha=0.05)
    assert t == -4.0 and reject
    assert p == pytest.approx(t_two_sided_pvalue(4.0, 20))
    lo, hi = confidence_interval(-2.0, 0.25, 0.05, 20)
    half = t_quantile(0.975, 20) * 0.5
    assert (lo, hi) == pytest.approx((-2.0 - half, -2.0 + half))
    assert confidence_interval(1.0, 4.0, 1.0, 5) == (1.0, 1.0)
    with pytest.raises(ValueError):
        t_test(1.0, 0.0, 0.0, 5)


def test_f_test_and_fit_indicators():
    f, p = f_test(100.0, 40.0, 0, 2, 22)
    assert f == pytest.approx((60.0 / 2) / (40.0 / 20))
    assert p == pytest.approx(f_survival(f, 2, 20))
    rmse, nrmse, adj = fit_indicators([3.0, -4.0], [10.0, 30.0], 1, 50.0)
    assert rmse == pytest.approx(math.sqrt(12.5))
    assert nrmse == pytest.approx(math.sqrt(12.5) / 20.0)
    assert adj == pytest.approx(1 - (25.0 - 1) / 50.0)


def test_significance_stars():
    assert [significance_stars(p) for p in (0.001, 0.03, 0.07, 0.5, math.nan)] == ["***", "**", "*", "", ""]


def test_report_on_noisy_wang():
    wang = builtin_network("wang")
    counts, _ = generate_counts(wang.network, wang.od, wang.paths, wang.theta_true, DGPConfig(seed=1))
    r = bilevel_optimization(wang.network, wang.od, wang.paths, counts, EstimationOptions(), theta0=[-14.0])
    rep = infer(r, alpha=0.05)
    assert rep.n == 8 and rep.k == 1
    assert rep.rss == pytest.approx(r.objective)
    assert rep.sigma2 == pytest.approx(r.objective / 7)
    assert rep.ci_low[0] < rep.estimates[0] < rep.ci_high[0]
    assert rep.p_values[0] < 0.01 and rep.rejects("tt")
    assert rep.f_stat > 0 and rep.f_p_value < 0.01
    assert 0 < rep.adjusted_pseudo_r2 <= 1
    d = rep.to_dict()
    assert d["coefficients"][0]["coefficient"] == "tt"
    assert d["coefficients"][0]["significance"] == "***"
    assert "tt" in rep.table()
    with pytest.raises(ValueError):
        infer(r, alpha=1.5)


def test_report_marks_unidentified_and_fixed_coefficients():
    toy = builtin_network("toy")
    net = toy.network.with_attributes([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]], ["u", "c"])
    state = solve_sue_logit(net, toy.od, toy.paths, Coefficients(-1.0, [0.0, -0.5]),
                            EquilibriumOptions(tol=1e-10))
    counts = ObservedCounts.from_flows(net, state.x * [1, 1, 1.05, 0.97])
    with pytest.warns(UserWarning):
        r = bilevel_optimization(net, toy.od, toy.paths, counts, EstimationOptions(free=["tt", "u"]),
                                 theta0=[-1.0, 0.0, -0.5])
    rep = infer(r)
    assert rep.k == 1
    assert rep.estimated.tolist() == [True, False, False]
    assert np.isnan(rep.p_values[1:]).all()
