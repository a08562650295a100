import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from minimaxbvp.errors import GridMismatch, SingularSystem
from minimaxbvp.linear_bvp import (
    Border,
    Grid,
    MultipointProblem,
    PiecewiseTrajectory,
    constant_drift,
    fundamental_matrix,
    quadrature,
    solve_multipoint,
)

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def const(M):
    M = np.asarray(M, dtype=float)
    return lambda ts: np.broadcast_to(M, (len(ts),) + M.shape)


# ------------------------------------------------------- fundamental matrix


def test_zero_drift_identity():
    np.testing.assert_array_equal(fundamental_matrix(const(np.zeros((3, 3))), 0.0, 2.0), np.eye(3))


def test_diagonal_decay():
    Phi = fundamental_matrix(const(-np.diag([1.0, 2.0])), 0.0, 1.0)
    np.testing.assert_allclose(Phi, np.diag([np.exp(-1.0), np.exp(-2.0)]), atol=1e-11)


def test_constant_drift_matches_expm():
    M = np.array([[0.3, -1.0], [2.0, -0.5]])
    np.testing.assert_allclose(fundamental_matrix(const(M), 0.0, 1.7), scipy.linalg.expm(1.7 * M), atol=1e-10)


@settings(max_examples=25)
@given(seeds)
def test_semigroup_and_inverse(seed):
    M = np.random.default_rng(seed).standard_normal((3, 3))
    F = const(M)
    P20, P21, P10 = fundamental_matrix(F, 0.0, 2.0), fundamental_matrix(F, 1.0, 2.0), fundamental_matrix(F, 0.0, 1.0)
    assert np.max(np.abs(P20 - P21 @ P10)) < 1e-9 * max(1.0, np.max(np.abs(P20)))
    back = fundamental_matrix(F, 1.0, 0.0)
    np.testing.assert_allclose(back @ P10, np.eye(3), atol=1e-9)


def test_time_varying_reversed_direction():
    F = lambda ts: np.stack([np.array([[0.0, 1.0], [-t, 0.0]]) for t in ts])  # noqa: E731
    fwd = fundamental_matrix(F, 0.2, 1.4)
    np.testing.assert_allclose(fundamental_matrix(F, 1.4, 0.2) @ fwd, np.eye(2), atol=1e-9)


# --------------------------------------------------------------- grid


def test_grid_validation():
    with pytest.raises(GridMismatch):
        Grid([0.0, 1.0], [3])
    with pytest.raises(GridMismatch):
        Grid([0.0, 0.5, 0.5, 1.0], [2])
    with pytest.raises(GridMismatch):
        Grid.uniform([0.0, 1.0], 10)


def test_grid_breakpoints_merged_and_indexed():
    g = Grid.uniform([0.0, 1.0, 0.5, 0.5, 0.25], 9)
    np.testing.assert_array_equal(g.breakpoints, [0.0, 0.25, 0.5, 1.0])
    assert g.index_of(0.5) == 2
    with pytest.raises(GridMismatch):
        g.index_of(0.3)


def test_grid_from_total_is_simpson_compatible():
    g = Grid.from_total([0.0, 0.25, 0.5, 0.75, 1.0], 513)
    assert all(s % 2 == 0 for s in g.steps)
    assert g.total_nodes == 513


# ------------------------------------------------------------ quadrature


def _samples(grid, f):
    return [f(grid.nodes(k)) for k in range(grid.K)]


def test_quadrature_constant():
    g = Grid.uniform([0.0, 0.3, 1.0], 5)
    assert quadrature(g, _samples(g, np.ones_like)) == pytest.approx(1.0, abs=1e-15)


def test_quadrature_exact_for_cubics():
    g = Grid.uniform([0.0, 1.0], 3)
    assert quadrature(g, _samples(g, lambda t: t**3)) == pytest.approx(0.25, abs=1e-16)


def test_quadrature_sine():
    # composite Simpson error for sin on [0, pi] is h^4/90 to leading order
    g64 = Grid.uniform([0.0, np.pi], 65)
    h = np.pi / 64
    assert quadrature(g64, _samples(g64, np.sin)) - 2.0 == pytest.approx(h**4 / 90, rel=1e-3)
    g128 = Grid.uniform([0.0, np.pi], 129)
    assert abs(quadrature(g128, _samples(g128, np.sin)) - 2.0) < 1e-8


def test_quadrature_arity():
    g = Grid.uniform([0.0, 0.5, 1.0], 5)
    with pytest.raises(GridMismatch):
        quadrature(g, [np.ones(5)])


# -------------------------------------------------------- multipoint solve


def test_constant_solution():
    g = Grid.uniform([0.0, 1.0], 9)
    sol = solve_multipoint(MultipointProblem(g, 1, constant_drift([[0.0]]), [[1.0]], np.zeros((0, 1)), [1.0]))
    for v in sol.x.values:
        np.testing.assert_allclose(v, 1.0, atol=1e-15)


def test_pure_jump_propagation():
    g = Grid.uniform([0.0, 0.5, 1.0], 9)
    prob = MultipointProblem(
        g, 2, constant_drift(np.zeros((2, 2))), np.eye(2), np.zeros((0, 2)), np.zeros(2), jumps={1: (None, np.array([1.0, 0.0]))}
    )
    x = solve_multipoint(prob).x
    np.testing.assert_allclose(x.values[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(x.values[1], np.tile([1.0, 0.0], (9, 1)), atol=1e-15)


def _jump_instance(M, g_fn, a, s, grid):
    return MultipointProblem(
        grid,
        2,
        constant_drift(M),
        R0=[[0.0, 1.0]],
        R1=[[1.0, 0.0]],
        b=np.zeros(2),
        forcing=lambda k, ts: g_fn(ts),
        jumps={grid.index_of(s): (None, -np.asarray(a))},
    )


def test_jump_system_against_closed_form_drift_free():
    # x' = g(t), x2(0) = 0, x1(1) = 0, x(s+) = x(s-) - a: integrate by hand
    a, s = np.array([1.0, 0.0]), 0.5
    g_fn = lambda t: np.stack([t, t**2], 1)  # noqa: E731
    G = lambda t: np.stack([t**2 / 2, t**3 / 3], -1)  # noqa: E731
    grid = Grid.uniform([0.0, s, 1.0], 33)
    x = solve_multipoint(_jump_instance(np.zeros((2, 2)), g_fn, a, s, grid)).x
    x0 = np.array([a[0] - G(1.0)[0], 0.0])
    for k in range(2):
        ts = grid.nodes(k)
        expect = x0 + G(ts) - (a if k == 1 else 0.0)
        np.testing.assert_allclose(x.values[k], expect, atol=1e-13)


def test_jump_system_against_expm_assembly():
    # independent assembly with closed-form propagators and a constant forcing
    M = np.array([[0.4, -1.0], [0.7, -0.2]])
    c = np.array([0.3, -0.5])
    a, s = np.array([1.0, 2.0]), 0.35
    grid = Grid.uniform([0.0, s, 1.0], 129)
    x = solve_multipoint(_jump_instance(M, lambda t: np.tile(c, (len(t), 1)), a, s, grid)).x
    Minv = np.linalg.inv(M)

    def flow(x0, dt):
        E = scipy.linalg.expm(M * dt)
        return E @ x0 + (E - np.eye(2)) @ Minv @ c

    # x(1) = E(1-s)[E(s) x0 + part(s) - a] + part(1-s); unknown x0 = (u, 0)
    base = flow(flow(np.zeros(2), s) - a, 1 - s)
    e1 = flow(flow(np.array([1.0, 0.0]), s) - a, 1 - s) - base
    u = -base[0] / e1[0]
    x0 = np.array([u, 0.0])
    np.testing.assert_allclose(x.start_value(), x0, atol=1e-10)
    np.testing.assert_allclose(x.end_value(), flow(flow(x0, s) - a, 1 - s), atol=1e-10)
    np.testing.assert_allclose(x.left(1) - x.right(1), a, atol=1e-12)


def test_fourth_order_convergence():
    M = np.array([[0.0, 1.0], [-4.0, 0.0]])
    a, s = np.array([0.5, 0.5]), 0.5
    g = lambda t: np.stack([np.cos(t), t], 1)  # noqa: E731
    ref = solve_multipoint(_jump_instance(M, g, a, s, Grid.uniform([0.0, s, 1.0], 2049))).x
    errs = []
    for nodes in (17, 33, 65):
        x = solve_multipoint(_jump_instance(M, g, a, s, Grid.uniform([0.0, s, 1.0], nodes))).x
        errs.append(np.max(np.abs(x.start_value() - ref.start_value())))
    for e1, e2 in zip(errs, errs[1:]):
        assert 13.0 < e1 / e2 < 19.0


def test_shooting_consistency():
    M = np.array([[0.2, 1.0], [-1.0, 0.1]])
    grid = Grid.uniform([0.0, 0.4, 1.0], 65)
    sol = solve_multipoint(_jump_instance(M, lambda t: np.stack([np.sin(t), 1 + 0 * t], 1), np.array([1.0, -1.0]), 0.4, grid))
    x = sol.x
    # re-integrate each interval as an initial-value problem from its stored first node
    for k in range(grid.K):
        re = solve_multipoint(
            MultipointProblem(
                Grid([grid.breakpoints[k], grid.breakpoints[k + 1]], [grid.steps[k]]),
                2,
                constant_drift(M),
                np.eye(2),
                np.zeros((0, 2)),
                x.values[k][0],
                forcing=lambda kk, ts: np.stack([np.sin(ts), 1 + 0 * ts], 1),
            )
        ).x
        np.testing.assert_allclose(re.values[0], x.values[k], atol=1e-12)


def test_singular_system_detected():
    # constants solve x' = 0 with x1(0) = 0 and x1(1) = 0 imposed twice
    grid = Grid.uniform([0.0, 1.0], 9)
    prob = MultipointProblem(grid, 2, constant_drift(np.zeros((2, 2))), [[1.0, 0.0]], [[1.0, 0.0]], np.zeros(2))
    with pytest.raises(SingularSystem):
        solve_multipoint(prob)


def test_wrong_row_count():
    grid = Grid.uniform([0.0, 1.0], 9)
    with pytest.raises(SingularSystem):
        solve_multipoint(MultipointProblem(grid, 2, constant_drift(np.zeros((2, 2))), [[1.0, 0.0]], np.zeros((0, 2)), np.zeros(1)))


def test_border_unknown_enforces_integral():
    # x' = lam, x(0) = 0, int x = 1 => x = 2 t, lam = 2
    grid = Grid.uniform([0.0, 1.0], 17)
    bd = Border(q=1, r=1, forcing=lambda k, ts: np.ones((len(ts), 1, 1)), weights=lambda k, ts: np.ones((len(ts), 1, 1)), w=np.array([1.0]))
    sol = solve_multipoint(MultipointProblem(grid, 1, constant_drift([[0.0]]), [[1.0]], np.zeros((0, 1)), [0.0], border=bd))
    assert sol.lam[0, 0] == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(sol.x.values[0][:, 0], 2 * grid.nodes(0), atol=1e-12)


def test_trajectory_csv_marks_sides():
    grid = Grid.uniform([0.0, 0.5, 1.0], 3)
    x = PiecewiseTrajectory.from_function(grid, lambda t: np.stack([t, -t], 1))
    lines = x.to_csv(names=["a", "b"]).splitlines()
    assert lines[0] == "t,side,a,b"
    assert len(lines) == 1 + 6
    assert lines[4].startswith("0.5,R,")
