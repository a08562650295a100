"""Minimax estimation of (a, phi(s)) from point observations.

Observations ``y_i = phi(t_i) + xi_i`` with noise bounded by
``sum_i Sp[Qt_i R_i] <= 1``. The adjoint state z jumps by ``Qt_i p(t_i)``
at every observation point and by ``-a`` at s; p is continuous.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boundary import BoundaryAlgebra, BvpSpec, build_boundary_algebra, require_unique_solvability
from .continuous import (
    F1_SIGN,
    EllipsoidG,
    FilterSolution,
    _sigma_from,
    coupled_drift,
    estimator_boundary_rows,
    estimator_grid,
    nominal_offset,
    prior_quadratic,
)
from .errors import ArityMismatch, PointOnTarget
from .linear_bvp import Grid, MultipointProblem, PiecewiseTrajectory, solve_multipoint

JUMP_TOL = 1e-9


@dataclass(frozen=True)
class PointObservationSet:
    times: tuple
    weights: tuple  # SPD n x n per point

    def __init__(self, times: Sequence[float], weights: Sequence):
        times = tuple(float(t) for t in times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("observation points must be strictly increasing")
        ws = tuple(np.atleast_2d(np.asarray(w, dtype=float)) for w in weights)
        if len(ws) != len(times):
            raise ArityMismatch("one weight matrix per observation point is required")
        for w in ws:
            if np.any(np.linalg.eigvalsh(0.5 * (w + w.T)) <= 0):
                raise ValueError("point weights must be SPD")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "weights", ws)

    @property
    def N(self) -> int:
        return len(self.times)

    def gap_index(self, s: float) -> int:
        """i0 such that t_{i0-1} < s < t_{i0} (1-based, t_0 = 0, t_{N+1} = T)."""
        return 1 + sum(1 for t in self.times if t < s)


@dataclass
class PointMinimaxSolution:
    grid: Grid
    z: PiecewiseTrajectory
    p: PiecewiseTrajectory
    u_hat: list
    c_hat: float
    sigma: float
    sigma2: float
    a: np.ndarray
    s: float
    i0: int
    condition: float
    diagnostics: dict = field(default_factory=dict)


def _check_points(obsP: PointObservationSet, s: float, T: float):
    for t in obsP.times:
        if not 0.0 < t < T:
            raise ValueError("observation points must lie inside (0, T)")
        if abs(t - s) <= 1e-12 * max(1.0, T):
            raise PointOnTarget(f"observation point {t} coincides with the target point")
    if not 0.0 < s < T:
        raise ValueError("target point must lie inside (0, T)")


def point_grid(T: float, obsP: PointObservationSet, s: float, nodes: Optional[int] = None, total_nodes=None) -> Grid:
    return estimator_grid(T, list(obsP.times) + [s], nodes=nodes, total_nodes=total_nodes)


def _point_jump(n: int, W: np.ndarray) -> np.ndarray:
    J = np.eye(2 * n)
    J[:n, n:] = W
    return J


def solve_point_estimator(
    spec: BvpSpec,
    alg: Optional[BoundaryAlgebra],
    G: EllipsoidG,
    obsP: PointObservationSet,
    a,
    s: float,
    grid: Optional[Grid] = None,
) -> PointMinimaxSolution:
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    require_unique_solvability(spec)
    _check_points(obsP, s, spec.T)
    n = spec.n
    a = np.asarray(a, dtype=float)
    grid = grid or point_grid(spec.T, obsP, s)
    i_s = grid.index_of(s)
    jumps = {i_s: (None, np.concatenate([-a, np.zeros(n)]))}
    idx = []
    for t, W in zip(obsP.times, obsP.weights):
        i = grid.index_of(t)
        idx.append(i)
        jumps[i] = (_point_jump(n, W), None)
    R0, R1 = estimator_boundary_rows(spec, alg, G)
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=coupled_drift(spec, grid, G.Q2_inv, lambda k, ts: None),
        R0=R0,
        R1=R1,
        b=np.zeros(2 * n),
        jumps=jumps,
    )
    sol = solve_multipoint(prob)
    z = sol.x.components(slice(0, n))
    p = sol.x.components(slice(n, 2 * n))
    u = []
    jump_err = 0.0
    cont_err = 0.0
    for i, W in zip(idx, obsP.weights):
        pl, pr = p.left(i), p.right(i)
        cont_err = max(cont_err, float(np.max(np.abs(pl - pr))))
        ui = W @ pl
        u.append(ui)
        jump_err = max(jump_err, float(np.max(np.abs(z.right(i) - z.left(i) - ui))))
    c_hat = nominal_offset(spec, alg, G, z)
    sigma2 = float(a @ p.left(i_s))
    sigma = _sigma_from(sigma2, float(np.abs(a) @ np.abs(p.left(i_s))))
    diag = {"jump_residual": jump_err, "p_continuity": cont_err}
    return PointMinimaxSolution(
        grid, z, p, u, c_hat, sigma, sigma2, a, s, obsP.gap_index(s), sol.condition, diag
    )


def point_cost(solution: PointMinimaxSolution, alg: BoundaryAlgebra, G: EllipsoidG, obsP: PointObservationSet) -> float:
    noise = sum(float(u @ np.linalg.solve(W, u)) for u, W in zip(solution.u_hat, obsP.weights))
    return prior_quadratic(alg, G, solution.z) + noise


def point_estimate(solution: PointMinimaxSolution, ys) -> float:
    ys = [np.asarray(y, dtype=float) for y in ys]
    if len(ys) != len(solution.u_hat):
        raise ArityMismatch(f"expected {len(solution.u_hat)} observations, got {len(ys)}")
    return float(sum(u @ y for u, y in zip(solution.u_hat, ys)) + solution.c_hat)


def solve_point_filter(
    spec: BvpSpec,
    alg: Optional[BoundaryAlgebra],
    G: EllipsoidG,
    obsP: PointObservationSet,
    ys,
    grid: Grid,
) -> FilterSolution:
    """(p_hat, phi_hat) with p_hat jumping by Qt_i (phi_hat(t_i) - y_i)."""
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    require_unique_solvability(spec)
    n = spec.n
    ys = [np.asarray(y, dtype=float) for y in ys]
    if len(ys) != obsP.N:
        raise ArityMismatch(f"expected {obsP.N} observations, got {len(ys)}")
    jumps = {}
    for t, W, y in zip(obsP.times, obsP.weights, ys):
        jumps[grid.index_of(t)] = (_point_jump(n, W), np.concatenate([-W @ y, np.zeros(n)]))
    R0, R1 = estimator_boundary_rows(spec, alg, G)
    b = np.concatenate([np.zeros(n - spec.m), G.f0_nom, np.zeros(spec.m), F1_SIGN * G.f1_nom])

    def forcing(k, ts):
        g = np.zeros((len(ts), 2 * n))
        g[:, n:] = G.f_nom(ts)
        return g

    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=coupled_drift(spec, grid, G.Q2_inv, lambda k, ts: None),
        R0=R0,
        R1=R1,
        b=b,
        forcing=forcing,
        jumps=jumps,
    )
    sol = solve_multipoint(prob)
    return FilterSolution(grid, sol.x.components(slice(0, n)), sol.x.components(slice(n, 2 * n)), sol.condition)
