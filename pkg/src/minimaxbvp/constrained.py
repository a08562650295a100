"""Minimax estimation when only the right-hand side f is bounded.

The boundary data are arbitrary, so the weight u must make the estimate
insensitive to them: ``B0_bar z(0; u) = 0`` and ``B1_bar z(T; u) = 0``.
The control lives on the quadrature nodes of the observation window, z is
an affine image of those node values, and the constrained quadratic
program is solved through its KKT system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .boundary import BoundaryAlgebra, BvpSpec, build_boundary_algebra, require_unique_solvability
from .continuous import (
    FilterSolution,
    FunctionalTarget,
    IntervalObservation,
    MinimaxSolution,
    _sigma_from,
    check_target,
    control_from_p,
    coupled_drift,
    estimator_grid,
    in_window,
    window_coupling,
)
from .errors import InfeasibleU, SingularKKT
from .functions import MatrixFunction, as_function
from .linear_bvp import (
    Grid,
    MultipointProblem,
    PiecewiseTrajectory,
    half_grid_samples,
    simpson_weights,
    solve_multipoint,
)

CONSTRAINED_NODES = 65
FEAS_TOL = 1e-9


@dataclass
class AffineControlMap:
    """``z(0; U) = a1 + Phi1 U`` and ``z(T; U) = a2 + Phi2 U``.

    U stacks the control node values over the window intervals (interval by
    interval, node by node, component by component). ``Z0`` and ``Z`` hold
    the full node responses: z at all nodes equals ``Z0 + Z U``.
    """

    a1: np.ndarray
    a2: np.ndarray
    Phi1: np.ndarray
    Phi2: np.ndarray
    Z0: np.ndarray
    Z: np.ndarray
    grid: Grid
    window_intervals: tuple
    l: int
    n: int

    @property
    def size(self) -> int:
        return self.Phi1.shape[1]

    def endpoints(self, U) -> tuple:
        U = np.asarray(U, dtype=float)
        return self.a1 + self.Phi1 @ U, self.a2 + self.Phi2 @ U

    def z_trajectory(self, U) -> PiecewiseTrajectory:
        flat = self.Z0 + self.Z @ np.asarray(U, dtype=float)
        return _unflatten(self.grid, flat, self.n)

    def control_trajectory(self, U) -> PiecewiseTrajectory:
        U = np.asarray(U, dtype=float)
        vals = []
        off = 0
        for k in range(self.grid.K):
            S = self.grid.steps[k]
            if k in self.window_intervals:
                vals.append(U[off : off + (S + 1) * self.l].reshape(S + 1, self.l))
                off += (S + 1) * self.l
            else:
                vals.append(np.zeros((S + 1, self.l)))
        return PiecewiseTrajectory(self.grid, vals)

    def control_vector(self, u: PiecewiseTrajectory) -> np.ndarray:
        return np.concatenate([u.values[k].reshape(-1) for k in self.window_intervals])


@dataclass
class ConstrainedSolution(MinimaxSolution):
    mu1: np.ndarray = None
    mu2: np.ndarray = None
    U: np.ndarray = None


def _flatten(traj: PiecewiseTrajectory) -> np.ndarray:
    return np.concatenate([v.reshape(-1) for v in traj.values])


def _unflatten(grid: Grid, flat: np.ndarray, d: int) -> PiecewiseTrajectory:
    vals = []
    off = 0
    for S in grid.steps:
        vals.append(flat[off : off + (S + 1) * d].reshape(S + 1, d))
        off += (S + 1) * d
    return PiecewiseTrajectory(grid, vals)


def _interpolation_matrix(grid: Grid, k: int) -> np.ndarray:
    """Half-grid values of the piecewise-linear node interpolant, (2S+1, S+1).

    A linear basis keeps the cost honest: a cubic spline through node values
    lets a sawtooth control look cheap under node quadrature while driving z
    only through its local mean.
    """
    S = grid.steps[k]
    P = np.zeros((2 * S + 1, S + 1))
    P[0::2] = np.eye(S + 1)
    P[1::2, :-1] += 0.5 * np.eye(S)
    P[1::2, 1:] += 0.5 * np.eye(S)
    return P


def control_function(maps: "AffineControlMap", U):
    """Piecewise-linear control for the node vector U, as ``(k, ts) -> (len, l, 1)``.

    Indexed by interval so that breakpoint values stay one-sided.
    """
    u = maps.control_trajectory(U)
    grid = maps.grid

    def fn(k, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.zeros((len(ts), maps.l, 1))
        if k in maps.window_intervals:
            nodes = grid.nodes(k)
            for i in range(maps.l):
                out[:, i, 0] = np.interp(ts, nodes, u.values[k][:, i])
        return out

    fn.columns = 1
    return fn


def constrained_grid(T: float, obs: IntervalObservation, s: float, nodes: Optional[int] = None, total_nodes=None) -> Grid:
    return estimator_grid(T, [obs.alpha, obs.beta, s], nodes=nodes or CONSTRAINED_NODES, total_nodes=total_nodes)


def build_affine_maps(
    spec: BvpSpec,
    obs: IntervalObservation,
    target: FunctionalTarget,
    grid: Grid,
    alg: Optional[BoundaryAlgebra] = None,
) -> AffineControlMap:
    """Responses of z to every control basis function in one multi-column solve.

    z solves ``-z' + A^T z = -H^T u`` (window only) with ``B0_hat z(0) = 0``,
    ``B1_hat z(T) = 0`` and jump ``-a`` at s. Column 0 is the u = 0 solve.
    """
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    require_unique_solvability(spec)
    n, l = spec.n, obs.l
    check_target(obs, target.s, spec.T)
    i_s = grid.index_of(target.s)
    grid.index_of(obs.alpha)
    grid.index_of(obs.beta)
    win = tuple(k for k in range(grid.K) if in_window(grid, k, obs.alpha, obs.beta))
    offsets = {}
    nu = 0
    for k in win:
        offsets[k] = nu
        nu += (grid.steps[k] + 1) * l
    c = 1 + nu

    def drift(k, ts):
        return np.swapaxes(spec.A(ts), 1, 2)

    def forcing(k, ts):
        g = np.zeros((len(ts), n, c))
        if k not in offsets:
            return g
        P = _interpolation_matrix(grid, k)  # (len, S+1)
        H = obs.H(ts)  # (len, l, n)
        S1 = P.shape[1]
        block = np.einsum("tj,tin->tnji", P, H).reshape(len(ts), n, S1 * l)
        g[:, :, 1 + offsets[k] : 1 + offsets[k] + S1 * l] = block
        return g

    d = np.zeros((n, c))
    d[:, 0] = -np.asarray(target.a, dtype=float)
    prob = MultipointProblem(
        grid=grid,
        dim=n,
        drift=drift,
        R0=alg.B0_hat,
        R1=alg.B1_hat,
        b=np.zeros((n, c)),
        forcing=forcing,
        jumps={i_s: (None, d)},
    )
    trajs = solve_multipoint(prob).trajectory
    flat = np.stack([_flatten(t) for t in trajs], axis=1)
    starts = np.stack([t.start_value() for t in trajs], axis=1)
    ends = np.stack([t.end_value() for t in trajs], axis=1)
    return AffineControlMap(
        a1=starts[:, 0],
        a2=ends[:, 0],
        Phi1=starts[:, 1:],
        Phi2=ends[:, 1:],
        Z0=flat[:, 0],
        Z=flat[:, 1:],
        grid=grid,
        window_intervals=win,
        l=l,
        n=n,
    )


def constraint_system(maps: AffineControlMap, alg: BoundaryAlgebra) -> tuple:
    """``C U = e`` expressing ``B0_bar z(0) = 0``, ``B1_bar z(T) = 0``."""
    C = np.vstack([alg.B0_bar @ maps.Phi1, alg.B1_bar @ maps.Phi2])
    e = -np.concatenate([alg.B0_bar @ maps.a1, alg.B1_bar @ maps.a2])
    return C, e


def check_feasible(maps: AffineControlMap, alg: BoundaryAlgebra, tol: float = FEAS_TOL) -> bool:
    """Rank of the constraint operator equals the rank of the augmented matrix."""
    C, e = constraint_system(maps, alg)
    scale = max(np.linalg.norm(C, 2), np.linalg.norm(e), 1e-300)
    rc = np.linalg.matrix_rank(C, tol=tol * scale)
    ra = np.linalg.matrix_rank(np.column_stack([C, e]), tol=tol * scale)
    return bool(rc == ra)


def inverse_weight(n: int, Q2=None, Q2_inv=None) -> MatrixFunction:
    """Q2^-1 from either the weight or (for singular forms) its inverse."""
    if Q2_inv is not None:
        return as_function(Q2_inv, (n, n))
    if Q2 is None:
        raise ValueError("either Q2 or Q2_inv is required")
    return as_function(Q2, (n, n)).inverse()


def _cost_matrices(maps: AffineControlMap, Q2_inv: MatrixFunction, obs: IntervalObservation):
    """J(U) = (Z0 + Z U)^T W2 (Z0 + Z U) + U^T WQ U, Simpson weights."""
    grid = maps.grid
    w2 = []
    for k in range(grid.K):
        ts = grid.nodes(k)
        sw = simpson_weights(grid.steps[k], grid.h(k))
        w2.extend(sw[:, None, None] * Q2_inv(ts))
    W2 = scipy.linalg.block_diag(*w2)
    blocks = []
    for k in maps.window_intervals:
        # exact for the linear basis when Q is constant: Simpson on the half grid
        ts = grid.half_nodes(k)
        S = grid.steps[k]
        sw = simpson_weights(2 * S, grid.h(k) / 2)
        P = _interpolation_matrix(grid, k)
        Qi = np.linalg.inv(obs.Q(ts))
        B = np.einsum("t,ta,tij,tb->aibj", sw, P, Qi, P).reshape((S + 1) * maps.l, (S + 1) * maps.l)
        blocks.append(B)
    WQ = scipy.linalg.block_diag(*blocks) if blocks else np.zeros((0, 0))
    return W2, WQ


def constrained_cost(maps: AffineControlMap, Q2, obs: IntervalObservation, U, Q2_inv=None) -> float:
    W2, WQ = _cost_matrices(maps, inverse_weight(maps.n, Q2, Q2_inv), obs)
    U = np.asarray(U, dtype=float)
    z = maps.Z0 + maps.Z @ U
    return float(z @ W2 @ z + U @ WQ @ U)


def _kkt(maps, alg, W2, WQ):
    Hm = maps.Z.T @ W2 @ maps.Z + WQ
    g = maps.Z.T @ W2 @ maps.Z0
    C, e = constraint_system(maps, alg)
    return Hm, g, C, e


def solve_constrained_estimator(
    spec: BvpSpec,
    alg: Optional[BoundaryAlgebra],
    Q2,
    obs: IntervalObservation,
    target: FunctionalTarget,
    grid: Optional[Grid] = None,
    maps: Optional[AffineControlMap] = None,
    Q2_inv=None,
) -> ConstrainedSolution:
    """Minimize J(U)/2 subject to the boundary-insensitivity constraints."""
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    require_unique_solvability(spec)
    n, m = spec.n, spec.m
    Q2_inv = inverse_weight(n, Q2, Q2_inv)
    grid = grid or constrained_grid(spec.T, obs, target.s)
    maps = maps or build_affine_maps(spec, obs, target, grid, alg)
    if not check_feasible(maps, alg):
        raise InfeasibleU("no control satisfies the boundary-insensitivity constraints")
    W2, WQ = _cost_matrices(maps, Q2_inv, obs)
    Hm, g, C, e = _kkt(maps, alg, W2, WQ)
    ev = np.linalg.eigvalsh(0.5 * (Hm + Hm.T))
    if ev[0] <= 1e-14 * max(ev[-1], 1e-300):
        raise SingularKKT("reduced Hessian of the control problem is not positive definite")
    nc = C.shape[0]
    K = np.block([[Hm, C.T], [C, np.zeros((nc, nc))]])
    rhs = np.concatenate([-g, e])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    resid = np.linalg.norm(K @ sol - rhs)
    if resid > 1e-8 * max(1.0, np.linalg.norm(rhs)) * max(1.0, np.linalg.norm(K, 2)):
        raise SingularKKT(f"KKT system inconsistent (residual {resid:.2e})")
    U = sol[: Hm.shape[0]]
    mu = sol[Hm.shape[0] :]
    mu1, mu2 = mu[:m], mu[m:]
    z = maps.z_trajectory(U)
    p = reconstruct_p(spec, grid, Q2_inv, z, mu1, mu2)
    u = control_from_p(grid, obs, p)
    i_s = grid.index_of(target.s)
    J = float(maps.Z0 @ W2 @ maps.Z0 + 2 * g @ U + U @ Hm @ U)
    sigma2_p = float(target.a @ p.left(i_s))
    sigma = _sigma_from(J, abs(J))
    z0, zT = maps.endpoints(U)
    diag = {
        "constraint_residual": float(max(np.max(np.abs(alg.B0_bar @ z0), initial=0), np.max(np.abs(alg.B1_bar @ zT), initial=0))),
        "kkt_residual": float(np.linalg.norm(Hm @ U + g + C.T @ mu)),
        "sigma2_from_p": sigma2_p,
        "control_mismatch": float(np.max(np.abs(maps.control_vector(u) - U))),
    }
    return ConstrainedSolution(
        grid, z, p, maps.control_trajectory(U), 0.0, sigma, J, target, (obs.alpha, obs.beta),
        float(np.linalg.cond(K)), diag, mu1=mu1, mu2=mu2, U=U,
    )


def reconstruct_p(spec: BvpSpec, grid: Grid, Q2_inv: MatrixFunction, z: PiecewiseTrajectory, mu1, mu2) -> PiecewiseTrajectory:
    """``p' + A p = Q2^-1 z`` with ``B0 p(0) = mu1``, ``B1 p(T) = -mu2``."""

    def forcing(k, ts):
        zh = z.half_values(k)
        return np.einsum("tij,tj->ti", Q2_inv(ts), zh)

    prob = MultipointProblem(
        grid=grid,
        dim=spec.n,
        drift=lambda k, ts: -spec.A(ts),
        R0=spec.B0,
        R1=spec.B1,
        b=np.concatenate([np.asarray(mu1, float), -np.asarray(mu2, float)]),
        forcing=forcing,
    )
    return solve_multipoint(prob).x


def solve_constrained_coupled(
    spec: BvpSpec,
    Q2,
    obs: IntervalObservation,
    target: FunctionalTarget,
    grid: Grid,
    Q2_inv=None,
) -> MinimaxSolution:
    """Second route: the stacked (z, p) system with z(0) = 0 and z(T) = 0."""
    n = spec.n
    Q2_inv = inverse_weight(n, Q2, Q2_inv)
    check_target(obs, target.s, spec.T)
    i_s = grid.index_of(target.s)
    R0 = np.hstack([np.eye(n), np.zeros((n, n))])
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=coupled_drift(spec, grid, Q2_inv, window_coupling(grid, obs)),
        R0=R0,
        R1=R0.copy(),
        b=np.zeros(2 * n),
        jumps={i_s: (None, np.concatenate([-target.a, np.zeros(n)]))},
    )
    sol = solve_multipoint(prob)
    z = sol.x.components(slice(0, n))
    p = sol.x.components(slice(n, 2 * n))
    sigma2 = float(target.a @ p.left(i_s))
    sigma = _sigma_from(sigma2, float(np.abs(target.a) @ np.abs(p.left(i_s))))
    u = control_from_p(grid, obs, p)
    return MinimaxSolution(grid, z, p, u, 0.0, sigma, sigma2, target, (obs.alpha, obs.beta), sol.condition, {})


def solve_constrained_filter(
    spec: BvpSpec,
    alg: Optional[BoundaryAlgebra],
    Q2,
    obs: IntervalObservation,
    y,
    grid: Grid,
    check: bool = True,
    Q2_inv=None,
) -> FilterSolution:
    """(p_hat, phi_hat) with ``p_hat(0) = 0``, ``p_hat(T) = 0`` and no nominal."""
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    require_unique_solvability(spec)
    n = spec.n
    Q2_inv = inverse_weight(n, Q2, Q2_inv)
    if check:
        s_mid = _interior_breakpoint(grid, obs)
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            maps = build_affine_maps(spec, obs, FunctionalTarget(e, s_mid), grid, alg)
            if not check_feasible(maps, alg):
                raise InfeasibleU(f"constraints infeasible for target direction e{j}")

    def forcing(k, ts):
        g = np.zeros((len(ts), 2 * n))
        if in_window(grid, k, obs.alpha, obs.beta) and y is not None:
            yh = half_grid_samples(grid, k, y).reshape(len(ts), obs.l)
            g[:, :n] = -np.einsum("tji,tjk,tk->ti", obs.H(ts), obs.Q(ts), yh)
        return g

    R0 = np.hstack([np.eye(n), np.zeros((n, n))])
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=coupled_drift(spec, grid, Q2_inv, window_coupling(grid, obs)),
        R0=R0,
        R1=R0.copy(),
        b=np.zeros(2 * n),
        forcing=forcing,
    )
    sol = solve_multipoint(prob)
    return FilterSolution(grid, sol.x.components(slice(0, n)), sol.x.components(slice(n, 2 * n)), sol.condition)


def _interior_breakpoint(grid: Grid, obs: IntervalObservation) -> float:
    tol = 1e-12 * max(1.0, grid.end)
    inner = [t for t in grid.breakpoints if obs.alpha + tol < t < obs.beta - tol]
    if inner:
        return float(inner[0])
    raise ValueError("grid has no breakpoint strictly inside the window")
