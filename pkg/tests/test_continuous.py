import numpy as np
import pytest
from conftest import desk_instance, oscillator_instance, time_varying_instance
from hypothesis import given, settings
from hypothesis import strategies as st

from minimaxbvp.boundary import build_boundary_algebra
from minimaxbvp.continuous import (
    EllipsoidG,
    FunctionalTarget,
    IntervalObservation,
    cost_for_control,
    estimate_from_observation,
    estimator_grid,
    evaluate_cost,
    second_order_reduce,
    second_order_residuals,
    solve_estimator,
    solve_filter,
)
from minimaxbvp.functions import as_function
from minimaxbvp.linear_bvp import PiecewiseTrajectory
from minimaxbvp.oracle import continuous_oracle, second_order_oracle

INSTANCES = {"desk": desk_instance, "oscillator": oscillator_instance, "time_varying": time_varying_instance}


def smooth_y(seed, l, T):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((3, l))
    w = rng.uniform(1.0, 6.0, (3, l))
    return lambda ts: sum(c[j] * np.sin(w[j] * np.atleast_1d(ts)[:, None] + j) for j in range(3))


@pytest.fixture(scope="module", params=sorted(INSTANCES))
def solved(request):
    spec, alg, G, obs, target, grid = INSTANCES[request.param](257)
    return spec, alg, G, obs, target, grid, solve_estimator(spec, alg, G, obs, target, grid)


# -------------------------------------------------------------- estimator


def test_zero_target_gives_zero_solution():
    spec, alg, G, obs, _, grid = desk_instance(129)
    sol = solve_estimator(spec, alg, G, obs, FunctionalTarget([0.0, 0.0], 0.5), grid)
    for traj in (sol.z, sol.p, sol.u_hat):
        assert max(np.max(np.abs(v)) for v in traj.values) == 0.0
    assert sol.c_hat == 0.0 and sol.sigma == 0.0
    assert evaluate_cost(sol, alg, G, obs) == 0.0


def test_linear_in_target():
    spec, alg, G, obs, target, grid = oscillator_instance(129)
    one = solve_estimator(spec, alg, G, obs, target, grid)
    two = solve_estimator(spec, alg, G, obs, FunctionalTarget(2 * target.a, target.s), grid)
    assert two.sigma == pytest.approx(2 * one.sigma, rel=1e-12)
    assert two.c_hat == pytest.approx(2 * one.c_hat, rel=1e-12)
    for u1, u2 in zip(one.u_hat.values, two.u_hat.values):
        np.testing.assert_allclose(u2, 2 * u1, rtol=1e-12, atol=1e-15)


def test_desk_instance_against_oracle():
    spec, alg, G, obs, target, grid = desk_instance(513)
    sol = solve_estimator(spec, alg, G, obs, target, grid)
    orc = continuous_oracle(spec, G, obs, target, grid)
    assert abs(orc.sigma - sol.sigma) / sol.sigma <= 1e-3
    # weights agree in L2 on the observation nodes; the window end takes the inner limit
    u_solver = np.array([sol.u_hat.at(t, "L" if t >= obs.beta else "R") for t in orc.nodes])
    rel = np.linalg.norm(orc.u.reshape(u_solver.shape) - u_solver) / np.linalg.norm(u_solver)
    assert rel < 1e-2


def test_jump_and_continuity(solved):
    *_, target, grid, sol = solved
    i = grid.index_of(target.s)
    np.testing.assert_allclose(sol.z.right(i), sol.z.left(i) - target.a, atol=1e-12)
    assert sol.diagnostics["p_continuity_at_s"] < 1e-9


def test_duality(solved):
    spec, alg, G, obs, target, grid, sol = solved
    assert abs(evaluate_cost(sol, alg, G, obs) - sol.sigma2) <= 1e-6 * max(1.0, sol.sigma2)
    assert sol.sigma2 >= -1e-10


def test_zero_weight_is_worse(solved):
    spec, alg, G, obs, target, grid, sol = solved
    assert cost_for_control(spec, alg, G, obs, target, grid, None) >= evaluate_cost(sol, alg, G, obs)


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_optimal_weight_beats_perturbations(seed):
    spec, alg, G, obs, target, grid = oscillator_instance(65)
    sol = solve_estimator(spec, alg, G, obs, target, grid)
    best = evaluate_cost(sol, alg, G, obs)
    pert = smooth_y(seed, obs.l, spec.T)

    u = sol.u_hat.map(lambda k, ts, v: v + (0.3 * pert(ts) if obs.alpha <= ts[len(ts) // 2] <= obs.beta else 0.0))
    assert cost_for_control(spec, alg, G, obs, target, grid, u) >= best - 1e-9


def test_pivot_invariance():
    spec, _, G, obs, target, grid = oscillator_instance(129)
    ref = solve_estimator(spec, build_boundary_algebra(spec.B0, spec.B1, left_columns=(0,)), G, obs, target, grid)
    alt = solve_estimator(spec, build_boundary_algebra(spec.B0, spec.B1, left_columns=(1,)), G, obs, target, grid)
    y = smooth_y(5, obs.l, spec.T)
    assert alt.sigma == pytest.approx(ref.sigma, abs=1e-8)
    assert estimate_from_observation(alt, obs, y) == pytest.approx(estimate_from_observation(ref, obs, y), abs=1e-8)


def test_information_monotone():
    spec, alg, G, obs, target, grid = oscillator_instance(129)
    base = solve_estimator(spec, alg, G, obs, target, grid).sigma
    tighter = IntervalObservation(obs.H, obs.alpha, obs.beta, 2 * np.asarray(obs.Q.at(0.0)))
    assert solve_estimator(spec, alg, G, tighter, target, grid).sigma <= base + 1e-12


def test_target_outside_window_rejected():
    spec, alg, G, obs, _, grid = desk_instance(129)
    with pytest.raises(ValueError):
        solve_estimator(spec, alg, G, obs, FunctionalTarget([1.0, 0.0], 0.25), grid)
    with pytest.raises(ValueError):
        IntervalObservation(np.eye(2), 0.5, 0.5, np.eye(2))


def test_full_window_allowed():
    spec, alg, G, _, target, _ = desk_instance(129)
    obs = IntervalObservation(np.eye(2), 0.0, 1.0, np.eye(2))
    grid = estimator_grid(1.0, [0.0, 1.0, 0.5], total_nodes=129)
    sol = solve_estimator(spec, alg, G, obs, target, grid)
    assert abs(evaluate_cost(sol, alg, G, obs) - sol.sigma2) < 1e-8


# ------------------------------------------------------------ observation


def test_zero_observation_returns_offset(solved):
    spec, alg, G, obs, target, grid, sol = solved
    zero = lambda ts: np.zeros((len(ts), obs.l))  # noqa: E731
    assert estimate_from_observation(sol, obs, zero) == sol.c_hat


def test_estimate_is_affine(solved):
    spec, alg, G, obs, target, grid, sol = solved
    y, dy = smooth_y(1, obs.l, spec.T), smooth_y(2, obs.l, spec.T)
    shifted = estimate_from_observation(sol, obs, lambda ts: y(ts) + dy(ts))
    delta = estimate_from_observation(sol, obs, dy) - sol.c_hat
    assert shifted == pytest.approx(estimate_from_observation(sol, obs, y) + delta, abs=1e-12)


def test_representation_matches_filter(solved):
    spec, alg, G, obs, target, grid, sol = solved
    for seed in range(10):
        y = smooth_y(seed, obs.l, spec.T)
        filt = solve_filter(spec, alg, G, obs, y, grid)
        assert abs(filt.estimate(target.a, target.s) - estimate_from_observation(sol, obs, y)) <= 1e-6 * max(1.0, sol.sigma)


def test_estimate_from_trajectory_samples():
    spec, alg, G, obs, target, grid = desk_instance(129)
    sol = solve_estimator(spec, alg, G, obs, target, grid)
    y = smooth_y(3, obs.l, spec.T)
    traj = PiecewiseTrajectory.from_function(grid, y)
    assert estimate_from_observation(sol, obs, traj) == pytest.approx(estimate_from_observation(sol, obs, y), abs=1e-14)


# ----------------------------------------------------------------- filter


def test_filter_zero_data_zero_nominal():
    spec, alg, G, obs, target, grid = desk_instance(129)
    filt = solve_filter(spec, alg, G, obs, lambda ts: np.zeros((len(ts), 2)), grid)
    assert max(np.max(np.abs(v)) for v in filt.phi_hat.values + filt.p_hat.values) == 0.0


def test_filter_superposition():
    spec, alg, G, obs, target, grid = oscillator_instance(129)
    y1, y2 = smooth_y(1, obs.l, spec.T), smooth_y(2, obs.l, spec.T)
    f = lambda y: solve_filter(spec, alg, G, obs, y, grid).phi_hat  # noqa: E731
    lhs = f(lambda ts: y1(ts) + y2(ts)) + f(lambda ts: np.zeros((len(ts), obs.l)))
    rhs = f(y1) + f(y2)
    for a, b in zip(lhs.values, rhs.values):
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_filter_reproduces_nominal_solution_from_clean_data():
    # with y = H phi_nom the nominal trajectory solves the filter system exactly
    from minimaxbvp.harness import forward_solve, nominal_element

    spec, alg, G, obs, target, grid = oscillator_instance(257)
    phi = forward_solve(spec, nominal_element(G), grid)
    y = PiecewiseTrajectory(grid, [np.einsum("tij,tj->ti", obs.H(grid.nodes(k)), v) for k, v in enumerate(phi.values)])
    filt = solve_filter(spec, alg, G, obs, _sampler(y), grid)
    assert abs(filt.estimate(target.a, target.s) - target.a @ phi.at(target.s)) < 1e-8


def _sampler(traj):
    """Observation callable that interpolates a trajectory per interval."""
    return lambda ts: np.array([traj.at(t, "R") for t in ts])


# -------------------------------------------------- second-order reduction


def test_second_order_zero_target():
    red = second_order_reduce([[1.0]], 1.0, [[1.0]], [[1.0]], 1.0, 1.0, [[1.0]], [0.0], 0.5)
    sol = solve_estimator(red.spec, None, red.G, red.obs, red.target, estimator_grid(1.0, [0.5], total_nodes=65))
    assert sol.sigma == 0.0


def test_second_order_equations_hold():
    q = lambda ts: (1.0 + ts)[:, None, None]  # noqa: E731
    red = second_order_reduce(as_function(q, (1, 1)), 1.0, [[1.0]], [[2.0]], 1.0, 3.0, [[1.5]], [1.0], 0.4)
    grid = estimator_grid(1.0, [0.4], total_nodes=513)
    sol = solve_estimator(red.spec, None, red.G, red.obs, red.target, grid)
    res = second_order_residuals(sol, red, as_function(q, (1, 1)), [[1.5]], 1.0, 3.0)
    assert res["operator_z"] < 1e-8 and res["operator_p"] < 1e-8
    assert res["jump"] < 1e-10 and res["dirichlet"] < 1e-10 and res["p_boundary"] < 1e-10
    assert res["first_order"] < 1e-6


def test_second_order_against_direct_discretization():
    red = second_order_reduce([[1.0]], 1.0, [[1.0]], [[1.0]], 1.0, 1.0, [[1.0]], [1.0], 0.5)
    sol = solve_estimator(red.spec, None, red.G, red.obs, red.target, estimator_grid(1.0, [0.5], total_nodes=513))
    orc = second_order_oracle(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 513)
    assert abs(orc.sigma - sol.sigma) / sol.sigma <= 1e-3


def test_ellipsoid_from_spec_carries_nominal():
    spec, *_ = oscillator_instance(65)
    G = EllipsoidG.from_spec(spec, [[1.0]], [[1.0]], np.eye(2))
    np.testing.assert_array_equal(G.f0_nom, spec.f0)
    np.testing.assert_array_equal(G.f1_nom, spec.f1)
    np.testing.assert_array_equal(G.f_nom(np.array([0.2]))[0], spec.f(np.array([0.2]))[0])
