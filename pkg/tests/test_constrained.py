import numpy as np
import pytest
import scipy.linalg
from conftest import desk_instance, oscillator_instance, time_varying_instance
from hypothesis import given, settings
from hypothesis import strategies as st

from minimaxbvp.boundary import BvpSpec, build_boundary_algebra
from minimaxbvp.constrained import (
    build_affine_maps,
    check_feasible,
    constrained_cost,
    constraint_system,
    control_function,
    solve_constrained_coupled,
    solve_constrained_estimator,
    solve_constrained_filter,
)
from minimaxbvp.continuous import (
    EllipsoidG,
    FunctionalTarget,
    IntervalObservation,
    estimate_from_observation,
    estimator_grid,
    solve_adjoint_state,
    solve_estimator,
)
from minimaxbvp.errors import InfeasibleU
from minimaxbvp.oracle import constrained_oracle

INSTANCES = {"desk": desk_instance, "oscillator": oscillator_instance, "time_varying": time_varying_instance}


def smooth_y(seed, l):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((3, l))
    w = rng.uniform(1.0, 6.0, (3, l))
    return lambda ts: sum(c[j] * np.sin(w[j] * np.atleast_1d(ts)[:, None] + j) for j in range(3))


@pytest.fixture(scope="module", params=sorted(INSTANCES))
def solved(request):
    spec, alg, _, obs, target, grid = INSTANCES[request.param](129)
    Q2 = np.eye(spec.n)
    maps = build_affine_maps(spec, obs, target, grid, alg)
    return spec, alg, Q2, obs, target, grid, maps, solve_constrained_estimator(spec, alg, Q2, obs, target, grid, maps=maps)


def _partial_observation():
    """A = 0, split Dirichlet, only the first component observed."""
    spec = BvpSpec(np.zeros((2, 2)), [[1.0, 0.0]], [[0.0, 1.0]], 1.0)
    obs = IntervalObservation([[1.0, 0.0]], 0.25, 0.75, [[1.0]])
    return spec, build_boundary_algebra(spec.B0, spec.B1), obs, estimator_grid(1.0, [0.25, 0.75, 0.5], total_nodes=65)


# ------------------------------------------------------------ affine maps


def test_zero_control_gives_free_response():
    spec, alg, _, obs, target, grid = oscillator_instance(65)
    maps = build_affine_maps(spec, obs, target, grid, alg)
    z = solve_adjoint_state(spec, alg, obs, target, grid, None)[0]
    z0, zT = maps.endpoints(np.zeros(maps.size))
    np.testing.assert_allclose(z0, z.start_value(), atol=1e-12)
    np.testing.assert_allclose(zT, z.end_value(), atol=1e-12)


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_affine_map_matches_direct_solve(seed):
    spec, alg, _, obs, target, grid = oscillator_instance(65)
    maps = build_affine_maps(spec, obs, target, grid, alg)
    U = np.random.default_rng(seed).standard_normal(maps.size)
    z = solve_adjoint_state(spec, alg, obs, target, grid, control_function(maps, U))[0]
    z0, zT = maps.endpoints(U)
    assert np.max(np.abs(z0 - z.start_value())) <= 1e-8 * max(1.0, np.max(np.abs(z0)))
    assert np.max(np.abs(zT - z.end_value())) <= 1e-8 * max(1.0, np.max(np.abs(zT)))
    for a, b in zip(maps.z_trajectory(U).values, z.values):
        np.testing.assert_allclose(a, b, atol=1e-8)


def test_zero_target_feasible_with_zero_control():
    spec, alg, _, obs, _, grid = desk_instance(65)
    maps = build_affine_maps(spec, obs, FunctionalTarget([0.0, 0.0], 0.5), grid, alg)
    C, e = constraint_system(maps, alg)
    assert np.all(e == 0.0)
    assert check_feasible(maps, alg)


def test_full_observation_is_feasible(solved):
    _, alg, *_, maps, _ = solved
    assert check_feasible(maps, alg)


def test_unobserved_direction_is_infeasible():
    spec, alg, obs, grid = _partial_observation()
    assert check_feasible(build_affine_maps(spec, obs, FunctionalTarget([1.0, 0.0], 0.5), grid, alg), alg)
    blocked = build_affine_maps(spec, obs, FunctionalTarget([0.0, 1.0], 0.5), grid, alg)
    assert not check_feasible(blocked, alg)
    with pytest.raises(InfeasibleU):
        solve_constrained_estimator(spec, alg, np.eye(2), obs, FunctionalTarget([0.0, 1.0], 0.5), grid)
    with pytest.raises(InfeasibleU):
        solve_constrained_filter(spec, alg, np.eye(2), obs, smooth_y(0, 1), grid)


def test_zeroed_responses_are_infeasible():
    spec, alg, _, obs, target, grid = desk_instance(65)
    maps = build_affine_maps(spec, obs, target, grid, alg)
    maps.Phi1 = np.zeros_like(maps.Phi1)
    maps.Phi2 = np.zeros_like(maps.Phi2)
    assert not check_feasible(maps, alg)


# -------------------------------------------------------------- estimator


def test_zero_target_gives_zero():
    spec, alg, _, obs, _, grid = desk_instance(65)
    sol = solve_constrained_estimator(spec, alg, np.eye(2), obs, FunctionalTarget([0.0, 0.0], 0.5), grid)
    assert sol.sigma == 0.0
    assert np.max(np.abs(sol.U)) == 0.0


def test_constraints_and_stationarity_hold(solved):
    *_, sol = solved
    assert sol.diagnostics["constraint_residual"] <= 1e-8
    assert sol.diagnostics["kkt_residual"] <= 1e-8


def test_sigma_consistent_with_p(solved):
    # a^T p(s) approximates the minimum cost; the two agree to discretization order
    *_, sol = solved
    assert abs(sol.diagnostics["sigma2_from_p"] - sol.sigma**2) <= 1e-3 * sol.sigma**2


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_optimum_beats_feasible_perturbations(seed):
    spec, alg, _, obs, target, grid = oscillator_instance(65)
    Q2 = np.eye(2)
    maps = build_affine_maps(spec, obs, target, grid, alg)
    sol = solve_constrained_estimator(spec, alg, Q2, obs, target, grid, maps=maps)
    C, _ = constraint_system(maps, alg)
    N = scipy.linalg.null_space(C)
    U = sol.U + N @ np.random.default_rng(seed).standard_normal(N.shape[1])
    z0, zT = maps.endpoints(U)
    assert np.max(np.abs(np.concatenate([alg.B0_bar @ z0, alg.B1_bar @ zT]))) < 1e-8
    assert constrained_cost(maps, Q2, obs, U) >= constrained_cost(maps, Q2, obs, sol.U) - 1e-9


@pytest.mark.parametrize("name", sorted(INSTANCES))
def test_vanishing_boundary_weights_limit(name):
    # boundary data with no prior bound: continuous weights Q0, Q1 -> 0
    spec, alg, _, obs, target, grid = INSTANCES[name](129)
    n, m = spec.n, spec.m
    Q2 = np.eye(n)
    ref = solve_constrained_estimator(spec, alg, Q2, obs, target, grid).sigma
    G = EllipsoidG.from_weights(1e-8 * np.eye(m), 1e-8 * np.eye(n - m), Q2)
    assert abs(solve_estimator(spec, alg, G, obs, target, grid).sigma - ref) <= 1e-3 * ref


@pytest.mark.parametrize("name", sorted(INSTANCES))
def test_constrained_dominates_weighted(name):
    spec, alg, _, obs, target, grid = INSTANCES[name](129)
    n, m = spec.n, spec.m
    ref = solve_constrained_estimator(spec, alg, np.eye(n), obs, target, grid).sigma
    for w in (1.0, 1e8):
        G = EllipsoidG.from_weights(w * np.eye(m), w * np.eye(n - m), np.eye(n))
        assert solve_estimator(spec, alg, G, obs, target, grid).sigma <= ref + 1e-10


def test_against_oracle():
    spec, alg, _, obs, target, grid = desk_instance(257)
    sol = solve_constrained_estimator(spec, alg, np.eye(2), obs, target, grid)
    orc = constrained_oracle(spec, np.eye(2), obs, target, grid)
    assert abs(orc.sigma - sol.sigma) / sol.sigma <= 1e-3


def test_coupled_route_agrees(solved):
    spec, alg, Q2, obs, target, grid, _, sol = solved
    alt = solve_constrained_coupled(spec, Q2, obs, target, grid)
    assert abs(alt.sigma - sol.sigma) <= 1e-6 * sol.sigma


def test_linear_in_target():
    spec, alg, _, obs, target, grid = oscillator_instance(65)
    one = solve_constrained_estimator(spec, alg, np.eye(2), obs, target, grid)
    two = solve_constrained_estimator(spec, alg, np.eye(2), obs, FunctionalTarget(-3 * target.a, target.s), grid)
    assert two.sigma == pytest.approx(3 * one.sigma, rel=1e-10)
    np.testing.assert_allclose(two.U, -3 * one.U, atol=1e-10 * np.max(np.abs(one.U)))


# ----------------------------------------------------------------- filter


def test_filter_zero_data():
    spec, alg, _, obs, _, grid = desk_instance(65)
    filt = solve_constrained_filter(spec, alg, np.eye(2), obs, lambda ts: np.zeros((len(ts), 2)), grid)
    assert max(np.max(np.abs(v)) for v in filt.phi_hat.values) == 0.0


def test_filter_matches_representation(solved):
    spec, alg, Q2, obs, target, grid, _, sol = solved
    for seed in range(5):
        y = smooth_y(seed, obs.l)
        filt = solve_constrained_filter(spec, alg, Q2, obs, y, grid)
        rep = estimate_from_observation(sol, obs, y)
        assert abs(filt.estimate(target.a, target.s) - rep) <= 1e-3 * max(1.0, abs(rep))


def test_filter_superposition():
    spec, alg, _, obs, target, grid = oscillator_instance(65)
    y1, y2 = smooth_y(1, obs.l), smooth_y(2, obs.l)
    f = lambda y: solve_constrained_filter(spec, alg, np.eye(2), obs, y, grid).phi_hat  # noqa: E731
    lhs = f(lambda ts: y1(ts) - 2 * y2(ts))
    a, b = f(y1), f(y2)
    for v, v1, v2 in zip(lhs.values, a.values, b.values):
        np.testing.assert_allclose(v, v1 - 2 * v2, atol=1e-9)
