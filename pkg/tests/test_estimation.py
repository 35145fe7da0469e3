import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from suelogit.equilibrium import Coefficients, EquilibriumOptions, solve_sue_logit
from suelogit.estimation import (
    ColumnGenerationOptions,
    EstimationOptions,
    FrozenTimesModel,
    NonIdentifiabilityWarning,
    ObservedCounts,
    bilevel_optimization,
    flow_jacobian,
    lm_step,
    ngd_step,
    outer_gradient,
    outer_level_optimization,
    probability_jacobian,
    probability_jacobian_column,
    scan_objective,
    second_derivative_diag,
)
from suelogit.network import NetworkError, PathSet
from suelogit.synthetic import builtin_network, two_link_network

SMALL = ["toy", "wang", "lochan", "yang"]


def _model(name, theta, Z=None, scale=None, rng=None):
    b = builtin_network(name)
    net = b.network if Z is None else b.network.with_attributes(Z, [f"z{k}" for k in range(np.shape(Z)[1])])
    state = solve_sue_logit(net, b.od, b.paths, Coefficients.from_vector(theta), EquilibriumOptions(tol=1e-10))
    x = state.x if scale is None else state.x * scale
    return FrozenTimesModel.from_state(net, state, ObservedCounts.from_flows(net, x))


@pytest.mark.parametrize("case", [0, 1])
def test_gradient_matches_complex_step_oracle(oracle, case):
    g = oracle["gradients"][case]
    b = builtin_network(g["name"])
    net = b.network if g["Z"] is None else b.network.with_attributes(g["Z"], ["c", "s"])
    state = solve_sue_logit(net, b.od, b.paths, Coefficients.from_vector(g["theta"]), EquilibriumOptions(tol=1e-12))
    np.testing.assert_allclose(state.t, g["t"], rtol=1e-9)
    model = FrozenTimesModel(net, b.od, state.incidence, state.ps_log, g["t"],
                             ObservedCounts.from_flows(net, g["counts"]))
    assert model.objective(g["theta"]) == pytest.approx(g["objective"], rel=1e-7)
    np.testing.assert_allclose(outer_gradient(model, g["theta"]), g["gradient"], rtol=1e-7)


@st.composite
def instances(draw):
    name = draw(st.sampled_from(SMALL))
    k = draw(st.integers(0, 2))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    n_links = builtin_network(name).network.n_links
    Z = rng.normal(size=(n_links, k)) if k else None
    theta = np.concatenate([[draw(st.floats(-2.0, -0.2))], rng.normal(scale=0.5, size=k)])
    scale = rng.uniform(0.7, 1.3, n_links)
    return _model(name, theta, Z, scale), theta


def _fd(f, theta, h):
    cols = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        cols.append((np.asarray(f(theta + e)) - np.asarray(f(theta - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@given(instances())
def test_analytic_derivatives_match_central_differences(inst):
    model, theta = inst
    d = model.derivatives(theta, second=True)
    J_fd = _fd(lambda th: model.flows(th)[model.counts.index], theta, 1e-6)
    scale = np.abs(d.jacobian).max() + 1e-12
    assert np.abs(d.jacobian - J_fd).max() / scale < 1e-5
    g_fd = _fd(model.objective, theta, 1e-6)
    assert np.abs(d.gradient - g_fd).max() / (np.abs(d.gradient).max() + 1e-9) < 1e-5
    h_fd = np.diag(_fd(lambda th: model.derivatives(th).gradient, theta, 1e-5))
    assert np.abs(d.second_diag - h_fd).max() / (np.abs(d.second_diag).max() + 1e-9) < 1e-4


def test_jacobian_helpers_agree():
    model = _model("lochan", [-1.0, 0.3], Z=np.arange(14.0)[:, None] % 3)
    x, f, p = model.load([-1.0, 0.3])
    dp = probability_jacobian(p, model.incidence, model.Z_path)
    for k in range(2):
        np.testing.assert_allclose(probability_jacobian_column(p, model.incidence, model.Z_path[:, k]), dp[:, k])
    np.testing.assert_allclose(model.incidence.od_sum(dp), 0.0, atol=1e-12)
    J = flow_jacobian(model.incidence, model.od, p, model.t, model.network.Z, model.counts.index)
    np.testing.assert_allclose(J, model.derivatives([-1.0, 0.3]).jacobian)
    with pytest.raises(ValueError):
        probability_jacobian_column(p, model.incidence, model.Z_path[:-1, 0])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=4), st.floats(0.01, 10), st.floats(1e-3, 1e3))
def test_ngd_step_length_and_scale_invariance(g, eta, c):
    g = np.array(g)
    theta = np.zeros(g.size)
    new, stationary = ngd_step(theta, g, eta)
    if np.linalg.norm(g) == 0:
        assert stationary and np.array_equal(new, theta)
        return
    assert np.linalg.norm(new - theta) == pytest.approx(eta)
    np.testing.assert_allclose(ngd_step(theta, c * g, eta)[0], new, atol=1e-12)
    with pytest.raises(ValueError):
        ngd_step(theta, g, 0.0)


def test_lm_without_damping_is_gauss_newton(rng):
    J = rng.normal(size=(12, 3))
    r = rng.normal(size=12)
    theta = rng.normal(size=3)
    gn = theta + np.linalg.lstsq(J, r, rcond=None)[0]
    np.testing.assert_allclose(lm_step(theta, J, r, 0.0), gn, atol=1e-10)


def test_heavy_damping_turns_lm_into_gradient_direction(rng):
    J = rng.normal(size=(12, 3))
    r = rng.normal(size=12)
    step = lm_step(np.zeros(3), J, r, 1e9)
    grad_dir = J.T @ r
    cos = step @ grad_dir / (np.linalg.norm(step) * np.linalg.norm(grad_dir))
    assert cos == pytest.approx(1.0, abs=1e-8)


def test_singular_gauss_newton_falls_back_with_warning():
    J = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.warns(NonIdentifiabilityWarning):
        step = lm_step(np.zeros(2), J, np.array([1.0, 2.0, 3.0]), 0.0)
    np.testing.assert_allclose(step, [0.5, 0.5])
    with pytest.raises(ValueError):
        lm_step(np.zeros(2), J, np.ones(3), -1.0)


@pytest.mark.parametrize("ratio", [0.5, 0.7313])
def test_two_link_closed_form(ratio):
    tl = two_link_network(100.0)
    counts = ObservedCounts.from_mapping(tl.network, {1: ratio * 100.0})
    r = bilevel_optimization(tl.network, tl.od, tl.paths, counts, EstimationOptions(free=["c"]), theta0=[0.0, 0.0])
    assert r.theta[1] == pytest.approx(np.log(1 / ratio - 1), abs=1e-3)
    assert r.theta[0] == 0.0
    assert r.free.tolist() == [False, True]


def test_trace_layout_and_best_iterate():
    toy = builtin_network("toy")
    state = solve_sue_logit(toy.network, toy.od, toy.paths, toy.theta_true, EquilibriumOptions(tol=1e-10))
    counts = ObservedCounts.from_flows(toy.network, state.x)
    opts = EstimationOptions(first_iterations=3, second_iterations=2)
    r = bilevel_optimization(toy.network, toy.od, toy.paths, counts, opts, theta0=[-4.0])
    assert len(r.trace) == 6
    assert [rec.stage for rec in r.trace] == ["non-refined"] * 3 + ["refined"] * 2 + ["final"]
    assert r.objective == r.trace.objectives.min()
    assert r.trace.header == ["iteration", "stage", "theta_tt", "objective"]
    assert r.trace.best.theta == tuple(r.theta)
    np.testing.assert_allclose(r.state.theta.as_vector(), r.theta)


def test_nested_mode_runs_the_outer_schedule_between_inner_solves():
    wang = builtin_network("wang")
    state = solve_sue_logit(wang.network, wang.od, wang.paths, wang.theta_true, EquilibriumOptions(tol=1e-10))
    counts = ObservedCounts.from_flows(wang.network, state.x)
    opts = EstimationOptions(bilevel_iterations=4, first_iterations=5, second_iterations=5)
    r = bilevel_optimization(wang.network, wang.od, wang.paths, counts, opts, theta0=[-5.0])
    assert len(r.trace) == 4
    assert {rec.stage for rec in r.trace} == {"bilevel"}
    assert r.theta[0] == pytest.approx(-1.0, abs=1e-3)


def test_exogenous_mode_keeps_times():
    yang = builtin_network("yang")
    state = solve_sue_logit(yang.network, yang.od, yang.paths, yang.theta_true, EquilibriumOptions(tol=1e-10))
    counts = ObservedCounts.from_flows(yang.network, state.x)
    r = bilevel_optimization(yang.network, yang.od, yang.paths, counts, EstimationOptions(),
                             theta0=[-3.0], exogenous_travel_times=state.t)
    np.testing.assert_array_equal(r.state.t, state.t)
    assert r.theta[0] == pytest.approx(-1.0, abs=1e-6)


def test_sign_constraints_project_to_zero():
    toy = builtin_network("toy")
    state = solve_sue_logit(toy.network, toy.od, toy.paths, Coefficients(-1.0), EquilibriumOptions(tol=1e-10))
    counts = ObservedCounts.from_flows(toy.network, state.x)
    opts = EstimationOptions(first_iterations=3, second_iterations=0, sign_constraints={"tt": 1})
    r = bilevel_optimization(toy.network, toy.od, toy.paths, counts, opts, theta0=[0.5])
    assert all(rec.theta[0] >= 0 for rec in r.trace)
    with pytest.raises(ValueError):
        EstimationOptions(sign_constraints={"tt": 2})


def test_structurally_fixed_coefficient_is_held_and_flagged():
    toy = builtin_network("toy")
    # the attribute sits on a link every path of its OD uses
    net = toy.network.with_attributes([[1.0], [0.0], [0.0], [0.0]], ["u"])
    state = solve_sue_logit(net, toy.od, toy.paths, Coefficients(-1.0, [0.0]), EquilibriumOptions(tol=1e-10))
    counts = ObservedCounts.from_flows(net, state.x)
    with pytest.warns(NonIdentifiabilityWarning):
        r = bilevel_optimization(net, toy.od, toy.paths, counts, EstimationOptions(), theta0=[-3.0, 0.7])
    assert r.non_identifiable == ["u"]
    assert r.theta[1] == 0.7


def test_outer_level_returns_the_best_iterate():
    model = _model("wang", [-1.0])
    theta, ell, records = outer_level_optimization(model, [-6.0], EstimationOptions(first_iterations=4,
                                                                                   second_iterations=3))
    assert len(records) == 7
    assert ell == min(r[3] for r in records)
    assert ell == pytest.approx(model.objective(theta))
    _, ell0, none = outer_level_optimization(model, [-6.0], EstimationOptions(first_iterations=0,
                                                                              second_iterations=0))
    assert none == [] and ell0 == model.objective([-6.0])


def test_column_generation_inside_the_bilevel_loop():
    lochan = builtin_network("lochan")
    state = solve_sue_logit(lochan.network, lochan.od, lochan.paths, lochan.theta_true, EquilibriumOptions(tol=1e-10))
    counts = ObservedCounts.from_flows(lochan.network, state.x)
    start = PathSet({w: lochan.paths[w][:1] for w in lochan.od.pairs})
    cg = ColumnGenerationOptions(k_new=2, max_paths=3, od_coverage=1.0, od_per_iteration=0.25)
    opts = EstimationOptions(first_iterations=4, second_iterations=4, column_generation=cg)
    r = bilevel_optimization(lochan.network, lochan.od, start, counts, opts, theta0=[-2.0])
    assert sum(rec.paths_added for rec in r.trace) > 0
    assert max(r.state.paths.n_paths(w) for w in lochan.od.pairs) <= 3


def test_scan_is_flat_when_counts_ignore_the_coefficient():
    toy = builtin_network("toy")
    state = solve_sue_logit(toy.network, toy.od, toy.paths, toy.theta_true, EquilibriumOptions(tol=1e-10))
    # link 1 carries its OD's whole demand whatever the coefficient
    model = FrozenTimesModel.from_state(toy.network, state, ObservedCounts.from_mapping(toy.network, {1: 45.0}))
    rows = scan_objective(model, [-1.0], 0, np.linspace(-15, 15, 31))
    assert rows.shape == (31, 4)
    np.testing.assert_allclose(rows[:, 1], 25.0)
    np.testing.assert_allclose(rows[:, 2:], 0.0, atol=1e-9)
    np.testing.assert_allclose(second_derivative_diag(model, [-1.0]), 0.0, atol=1e-9)


def test_observed_counts_validation():
    toy = builtin_network("toy")
    with pytest.raises(NetworkError):
        ObservedCounts.from_mapping(toy.network, {99: 1.0})
    with pytest.raises(ValueError):
        ObservedCounts.from_mapping(toy.network, {})
    with pytest.raises(ValueError):
        ObservedCounts([0, 0], [1.0, 2.0], (1, 1))
    c = ObservedCounts.from_mapping(toy.network, {3: 5.0, 1: -2.0})
    assert c.link_ids == (1, 3) and c.index.tolist() == [0, 2]
    assert c.as_dict() == {1: -2.0, 3: 5.0}


@pytest.mark.parametrize("kwargs", [dict(first_iterations=-1), dict(learning_rate=0.0), dict(lm_damping=-1.0),
                                    dict(first_method="bfgs"), dict(bilevel_iterations=0)])
def test_invalid_estimation_options(kwargs):
    with pytest.raises(ValueError):
        EstimationOptions(**kwargs)


def test_wrong_theta0_length_and_unknown_free_name():
    toy = builtin_network("toy")
    counts = ObservedCounts.from_mapping(toy.network, {3: 200.0, 4: 100.0})
    with pytest.raises(ValueError):
        bilevel_optimization(toy.network, toy.od, toy.paths, counts, theta0=[0.0, 1.0])
    with pytest.raises(ValueError):
        bilevel_optimization(toy.network, toy.od, toy.paths, counts, EstimationOptions(free=["c"]))


def test_noiseless_toy_recovery_from_far_start():
    toy = builtin_network("toy")
    state = solve_sue_logit(toy.network, toy.od, toy.paths, toy.theta_true, EquilibriumOptions(tol=1e-12))
    counts = ObservedCounts.from_flows(toy.network, state.x)
    with warnings.catch_warnings():
        warnings.simplefilter("error", NonIdentifiabilityWarning)
        r = bilevel_optimization(toy.network, toy.od, toy.paths, counts, EstimationOptions(), theta0=[-14.0])
    assert r.theta[0] == pytest.approx(-1.0, abs=1e-4)
