"""Riccati sweep for ``phi'' = A phi + B f`` with ``phi'(0) = 0``, ``phi(1) = 0``.

Writing ``phi_2 = P phi_1 + psi`` turns the second-order problem into the
initial-value problems ``P' + P^2 = A``, ``P(0) = 0`` and
``psi' + P psi = B f``, ``psi(0) = 0``. The state ``x = (phi_1, psi)`` then
obeys ``x' = A1 x + B1 f`` with ``A1 = [[P, E], [0, -P]]``, and estimation
problems for ``(a1, phi_1(s)) + (a2, phi_2(s)) = (b, x(s))`` with
``b = (a1 + P(s) a2, a2)`` are posed for x on [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boundary import BvpSpec, build_boundary_algebra
from .constrained import (
    ConstrainedSolution,
    build_affine_maps,
    check_feasible,
    solve_constrained_estimator,
)
from .continuous import (
    EllipsoidG,
    FilterSolution,
    FunctionalTarget,
    IntervalObservation,
    MinimaxSolution,
    _sigma_from,
    estimator_grid,
    solve_estimator,
    solve_filter,
)
from .errors import BlowUp, InfeasibleU
from .functions import FromCallable, MatrixFunction, Spline, as_function, as_matrix
from .linear_bvp import Grid, MultipointProblem, PiecewiseTrajectory, half_grid_samples, simpson, solve_multipoint

SWEEP_STEPS = 2048
ELIM_NODES = 129
BLOWUP_NORM = 1e8
VARIANTS = {"q1": 1, "q1sq": 2}


# ------------------------------------------------------------------ sweep


@dataclass
class SweepResult:
    """P, psi and the psi-propagator sampled on a uniform grid of [0, 1].

    ``Y`` solves ``Y' = -P Y``, ``Y(0) = E``; the propagator of the
    psi-equation is ``Phi(s, t) = Y(s) Y(t)^-1``.
    """

    ts: np.ndarray
    P_values: np.ndarray
    Y_values: np.ndarray
    psi_values: Optional[np.ndarray] = None
    B: Optional[MatrixFunction] = None
    _P: Optional[MatrixFunction] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.P_values.shape[1]

    @property
    def P(self) -> MatrixFunction:
        if self._P is None:
            self._P = Spline(self.ts, self.P_values)
        return self._P

    @property
    def psi(self) -> Optional[MatrixFunction]:
        return None if self.psi_values is None else Spline(self.ts, self.psi_values)

    def Phi(self, s: float, t: float) -> np.ndarray:
        Y = Spline(self.ts, self.Y_values)
        return Y.at(s) @ np.linalg.inv(Y.at(t))

    def D(self, f) -> np.ndarray:
        """``psi(1) = int_0^1 Phi(1, t) B(t) f(t) dt`` by Simpson quadrature."""
        f = as_function(f)
        Y1 = self.Y_values[-1]
        Yinv = np.linalg.inv(self.Y_values)
        B = self.B(self.ts) if self.B is not None else None
        fv = f(self.ts).reshape(len(self.ts), -1)
        g = fv if B is None else np.einsum("tij,tj->ti", B, fv)
        integrand = np.einsum("ij,tjk,tk->ti", Y1, Yinv, g)
        return simpson(integrand, self.ts[1] - self.ts[0])

    def riccati_residual(self, A) -> float:
        """max |P' + P^2 - A| with P' from fourth-order differences."""
        from .linear_bvp import fd_derivative

        A = as_matrix(A)
        h = self.ts[1] - self.ts[0]
        dP = fd_derivative(self.P_values.reshape(len(self.ts), -1), h).reshape(self.P_values.shape)
        r = dP + self.P_values @ self.P_values - A(self.ts).reshape(self.P_values.shape)
        return float(np.max(np.abs(r)))


def riccati_sweep(A, steps: int = SWEEP_STEPS, B=None, f=None) -> SweepResult:
    """RK4 for ``P' = A - P^2``, ``Y' = -P Y`` and ``psi' = -P psi + B f`` on [0, 1].

    P is integrated with step h/2 so that the linear equations for Y and psi
    can take RK4 steps of size h with P known at every stage.
    """
    if steps < 2 or steps % 2:
        raise ValueError("the sweep needs an even number of steps")
    A = as_matrix(A)
    n = A.shape[0]
    fine = np.linspace(0.0, 1.0, 2 * steps + 1)
    hf = fine[1] - fine[0]
    # A at quarter points for the half-step Riccati RK4
    quarter = np.linspace(0.0, 1.0, 4 * steps + 1)
    Aq = A(quarter).reshape(len(quarter), n, n)
    P = np.zeros((len(fine), n, n))
    Pk = np.zeros((n, n))
    for j in range(2 * steps):
        a0, am, a1 = Aq[2 * j], Aq[2 * j + 1], Aq[2 * j + 2]
        k1 = a0 - Pk @ Pk
        Pm = Pk + 0.5 * hf * k1
        k2 = am - Pm @ Pm
        Pm = Pk + 0.5 * hf * k2
        k3 = am - Pm @ Pm
        Pe = Pk + hf * k3
        k4 = a1 - Pe @ Pe
        Pk = Pk + hf / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(Pk)) or np.max(np.abs(Pk)) > BLOWUP_NORM:
            raise BlowUp(f"Riccati solution exceeds {BLOWUP_NORM:g} near t = {fine[j + 1]:.4g}")
        P[j + 1] = Pk
    ts = fine[0::2]
    h = ts[1] - ts[0]
    Bf = None
    if f is not None:
        fq = as_function(f)(fine).reshape(len(fine), -1)
        Bf = fq if B is None else np.einsum("tij,tj->ti", as_matrix(B)(fine), fq)
    Y = np.zeros((len(ts), n, n))
    Y[0] = np.eye(n)
    psi = np.zeros((len(ts), n)) if Bf is not None else None
    for j in range(steps):
        P0, Pm, P1 = P[2 * j], P[2 * j + 1], P[2 * j + 2]
        Yk = Y[j]
        k1 = -P0 @ Yk
        k2 = -Pm @ (Yk + 0.5 * h * k1)
        k3 = -Pm @ (Yk + 0.5 * h * k2)
        k4 = -P1 @ (Yk + h * k3)
        Y[j + 1] = Yk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if psi is not None:
            g0, gm, g1 = Bf[2 * j], Bf[2 * j + 1], Bf[2 * j + 2]
            v = psi[j]
            k1 = -P0 @ v + g0
            k2 = -Pm @ (v + 0.5 * h * k1) + gm
            k3 = -Pm @ (v + 0.5 * h * k2) + gm
            k4 = -P1 @ (v + h * k3) + g1
            psi[j + 1] = v + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return SweepResult(ts, P[0::2].copy(), Y, psi, as_matrix(B) if B is not None else None)


# ------------------------------------------------------------ elimination


@dataclass
class EliminatedSystem:
    """``x' = A1 x + B1 f``, ``phi_1(1) = 0``, ``psi(0) = 0``, ``y = H x + xi``."""

    sweep: SweepResult
    A1: MatrixFunction
    B1: MatrixFunction
    H: MatrixFunction
    Q1: MatrixFunction
    q1: MatrixFunction
    n: int

    def spec(self) -> BvpSpec:
        """Generic form ``x' + (-A1) x = B1 f`` with ``psi(0) = 0``, ``phi_1(1) = 0``."""
        n = self.n
        B0 = np.hstack([np.zeros((n, n)), np.eye(n)])
        B1 = np.hstack([np.eye(n), np.zeros((n, n))])
        negA = FromCallable(lambda ts: -self.A1(ts), (2 * n, 2 * n))
        return BvpSpec(A=negA, B0=B0, B1=B1, T=1.0)

    def noise_weight(self, variant: str = "q1sq") -> MatrixFunction:
        """``q1^k E`` on the observation space."""
        k = VARIANTS[variant]
        l = self.H.shape[0]
        return FromCallable(lambda ts: (self.q1(ts).reshape(-1) ** k)[:, None, None] * np.eye(l), (l, l))

    def observation(self, variant: str = "q1sq") -> IntervalObservation:
        return IntervalObservation(self.H, 0.0, 1.0, self.noise_weight(variant))

    def ellipsoid(self) -> EllipsoidG:
        n = self.n
        return EllipsoidG.from_inverse_weights(np.zeros((n, n)), np.zeros((n, n)), self.Q1)

    def target(self, a1, a2, s: float) -> np.ndarray:
        return elimination_target(self.sweep, a1, a2, s)


def elimination_target(sweep: SweepResult, a1, a2, s: float) -> np.ndarray:
    """``b = (a1 + P(s) a2, a2)``."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    return np.concatenate([a1 + sweep.P.at(s) @ a2, a2])


def eliminate(sweep: SweepResult, B, C11, C21, Q, q1=1.0, C12=None, C22=None) -> EliminatedSystem:
    """Assemble A1, B1, H and ``Q1 = B1 Q^-1 B1^T`` for observations
    ``y1 = C11 phi + C12 phi' + xi1``, ``y2 = C21 phi + C22 phi' + xi2``."""
    n = sweep.n
    C11 = as_matrix(C11)
    C21 = as_matrix(C21)
    C12 = as_matrix(C12 if C12 is not None else np.zeros(C11.shape))
    C22 = as_matrix(C22 if C22 is not None else np.zeros(C21.shape))
    l1, l2 = C11.shape[0], C21.shape[0]
    B = as_matrix(B)
    r = B.shape[1]
    Q = as_matrix(Q)
    q1 = as_function(q1, ())
    P = sweep.P

    def A1(ts):
        Pv = P(ts)
        out = np.zeros((len(ts), 2 * n, 2 * n))
        out[:, :n, :n] = Pv
        out[:, :n, n:] = np.eye(n)
        out[:, n:, n:] = -Pv
        return out

    def B1(ts):
        out = np.zeros((len(ts), 2 * n, r))
        out[:, n:, :] = B(ts)
        return out

    def H(ts):
        Pv = P(ts)
        c12 = C12(ts)
        c22 = C22(ts)
        out = np.zeros((len(ts), l1 + l2, 2 * n))
        out[:, :l1, :n] = C11(ts) + c12 @ Pv
        out[:, :l1, n:] = c12
        out[:, l1:, :n] = C21(ts) + c22 @ Pv
        out[:, l1:, n:] = c22
        return out

    def Q1(ts):
        Bv = B(ts)
        out = np.zeros((len(ts), 2 * n, 2 * n))
        out[:, n:, n:] = Bv @ np.linalg.solve(Q(ts), np.swapaxes(Bv, 1, 2))
        return out

    return EliminatedSystem(
        sweep,
        FromCallable(A1, (2 * n, 2 * n)),
        FromCallable(B1, (2 * n, r)),
        FromCallable(H, (l1 + l2, 2 * n)),
        FromCallable(Q1, (2 * n, 2 * n)),
        q1,
        n,
    )


def direct_second_order(A, B, f, grid: Grid) -> PiecewiseTrajectory:
    """Companion-form solve of ``phi_1' = phi_2``, ``phi_2' = A phi_1 + B f``."""
    A = as_matrix(A)
    n = A.shape[0]
    B = as_matrix(B)
    f = as_function(f)

    def drift(k, ts):
        M = np.zeros((len(ts), 2 * n, 2 * n))
        M[:, :n, n:] = np.eye(n)
        M[:, n:, :n] = A(ts)
        return M

    def forcing(k, ts):
        g = np.zeros((len(ts), 2 * n))
        g[:, n:] = np.einsum("tij,tj->ti", B(ts), f(ts).reshape(len(ts), -1))
        return g

    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=drift,
        R0=np.hstack([np.zeros((n, n)), np.eye(n)]),
        R1=np.hstack([np.eye(n), np.zeros((n, n))]),
        b=np.zeros(2 * n),
        forcing=forcing,
    )
    return solve_multipoint(prob).x


def eliminated_forward(elim: EliminatedSystem, f, grid: Grid) -> PiecewiseTrajectory:
    """Solve ``x' = A1 x + B1 f`` with ``phi_1(1) = 0``, ``psi(0) = 0``."""
    n = elim.n
    f = as_function(f)

    def forcing(k, ts):
        return np.einsum("tij,tj->ti", elim.B1(ts), f(ts).reshape(len(ts), -1))

    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=lambda k, ts: elim.A1(ts),
        R0=np.hstack([np.zeros((n, n)), np.eye(n)]),
        R1=np.hstack([np.eye(n), np.zeros((n, n))]),
        b=np.zeros(2 * n),
        forcing=forcing,
    )
    return solve_multipoint(prob).x


def reconstruct_phi(elim: EliminatedSystem, x: PiecewiseTrajectory) -> PiecewiseTrajectory:
    """``(phi_1, phi_2) = (phi_1, P phi_1 + psi)``."""
    n = elim.n
    P = elim.sweep.P

    def fn(k, ts, v):
        out = v.copy()
        out[:, n:] = np.einsum("tij,tj->ti", P(ts), v[:, :n]) + v[:, n:]
        return out

    return x.map(fn)


def elimination_round_trip(A, B, f, elim: EliminatedSystem, grid: Grid) -> float:
    """max |direct (phi, phi') - reconstruction from the eliminated system|."""
    direct = direct_second_order(A, B, f, grid)
    swept = reconstruct_phi(elim, eliminated_forward(elim, f, grid))
    return float(max(np.max(np.abs(a - b)) for a, b in zip(direct.values, swept.values)))


# -------------------------------------------------------------- estimator


def elimination_grid(s: float, nodes: Optional[int] = None, total_nodes=None) -> Grid:
    return estimator_grid(1.0, [s], nodes=nodes or ELIM_NODES, total_nodes=total_nodes)


def _weight_values(elim: EliminatedSystem, ts, k: int) -> np.ndarray:
    return elim.q1(ts).reshape(-1) ** k


def _elim_drift(elim: EliminatedSystem, k_pow: int):
    """Stacked (z, p): ``z' = -A1^T z + H^T w H p``, ``p' = A1 p + Q1 z``."""
    n2 = 2 * elim.n

    def drift(k, ts):
        A1 = elim.A1(ts)
        H = elim.H(ts)
        w = _weight_values(elim, ts, k_pow)
        M = np.zeros((len(ts), 2 * n2, 2 * n2))
        M[:, :n2, :n2] = -np.swapaxes(A1, 1, 2)
        M[:, :n2, n2:] = w[:, None, None] * np.einsum("tki,tkj->tij", H, H)
        M[:, n2:, :n2] = elim.Q1(ts)
        M[:, n2:, n2:] = A1
        return M

    return drift


@dataclass
class EliminationSolution:
    grid: Grid
    z: PiecewiseTrajectory
    p: PiecewiseTrajectory
    u_hat: PiecewiseTrajectory
    b: np.ndarray
    s: float
    sigma: float
    sigma2: float
    cost: float
    variant: str
    condition: float
    diagnostics: dict = field(default_factory=dict)


def _control(elim: EliminatedSystem, p: PiecewiseTrajectory, k_pow: int) -> PiecewiseTrajectory:
    def fn(k, ts, v):
        w = _weight_values(elim, ts, k_pow)
        return w[:, None] * np.einsum("tij,tj->ti", elim.H(ts), v)

    return p.map(fn)


def elimination_cost(elim: EliminatedSystem, z: PiecewiseTrajectory, u: PiecewiseTrajectory) -> float:
    """``int (Q1 z, z) + int q1^-2 (u, u)``."""
    noise = 0.0
    for k in range(u.grid.K):
        ts = u.grid.nodes(k)
        w = _weight_values(elim, ts, 2)
        noise += simpson(np.sum(u.values[k] ** 2, axis=1) / w, u.grid.h(k))
    return z.inner(z, elim.Q1) + float(noise)


def solve_elimination_estimator(elim: EliminatedSystem, a1, a2, s: float, grid: Optional[Grid] = None) -> EliminationSolution:
    """Coupled (z, p) system with component-wise boundary rows.

    ``z_11(0) = 0``, ``p_12(0) = 0``, ``z_22(1) = 0``, ``p_21(1) = 0``,
    ``z(s-) - z(s+) = b``, p continuous, ``u = q1^2 H p``.
    """
    n = elim.n
    n2 = 2 * n
    grid = grid or elimination_grid(s)
    i_s = grid.index_of(s)
    b = elim.target(a1, a2, s)
    R0 = np.zeros((n2, 2 * n2))
    R0[:n, :n] = np.eye(n)  # z_11(0)
    R0[n:, n2 + n :] = np.eye(n)  # p_12(0)
    R1 = np.zeros((n2, 2 * n2))
    R1[:n, n:n2] = np.eye(n)  # z_22(1)
    R1[n:, n2 : n2 + n] = np.eye(n)  # p_21(1)
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n2,
        drift=_elim_drift(elim, 2),
        R0=R0,
        R1=R1,
        b=np.zeros(2 * n2),
        jumps={i_s: (None, np.concatenate([-b, np.zeros(n2)]))},
    )
    sol = solve_multipoint(prob)
    z = sol.x.components(slice(0, n2))
    p = sol.x.components(slice(n2, 2 * n2))
    u = _control(elim, p, 2)
    sigma2 = float(b @ p.left(i_s))
    sigma = _sigma_from(sigma2, float(np.abs(b) @ np.abs(p.left(i_s))))
    cost = elimination_cost(elim, z, u)
    return EliminationSolution(grid, z, p, u, b, s, sigma, sigma2, cost, "q1sq", sol.condition)


def solve_elimination_generic(elim: EliminatedSystem, a1, a2, s: float, grid: Optional[Grid] = None) -> MinimaxSolution:
    """Same estimator through the generic interval-observation engine."""
    grid = grid or elimination_grid(s)
    spec = elim.spec()
    target = FunctionalTarget(elim.target(a1, a2, s), s)
    return solve_estimator(spec, None, elim.ellipsoid(), elim.observation("q1sq"), target, grid)


def _observation_forcing(elim, grid, y, k_pow):
    n2 = 2 * elim.n

    def forcing(k, ts):
        g = np.zeros((len(ts), 2 * n2))
        if y is not None:
            yh = half_grid_samples(grid, k, y).reshape(len(ts), -1)
            w = _weight_values(elim, ts, k_pow)
            g[:, :n2] = -w[:, None] * np.einsum("tki,tk->ti", elim.H(ts), yh)
        return g

    return forcing


def solve_elimination_filter(elim: EliminatedSystem, y, grid: Grid) -> FilterSolution:
    """``-p_hat' = A1^T p_hat + H^T q1^2 (y - H x_hat)``, ``x_hat' = A1 x_hat + Q1 p_hat``.

    Rows: ``p_hat_11(0) = 0``, ``x_hat_12(0) = 0``, ``p_hat_22(1) = 0``,
    ``x_hat_21(1) = 0``. The estimate is ``(b, x_hat(s))``.
    """
    n = elim.n
    n2 = 2 * n
    R0 = np.zeros((n2, 2 * n2))
    R0[:n, :n] = np.eye(n)
    R0[n:, n2 + n :] = np.eye(n)
    R1 = np.zeros((n2, 2 * n2))
    R1[:n, n:n2] = np.eye(n)
    R1[n:, n2 : n2 + n] = np.eye(n)
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n2,
        drift=_elim_drift(elim, 2),
        R0=R0,
        R1=R1,
        b=np.zeros(2 * n2),
        forcing=_observation_forcing(elim, grid, y, 2),
    )
    sol = solve_multipoint(prob)
    return FilterSolution(grid, sol.x.components(slice(0, n2)), sol.x.components(slice(n2, 2 * n2)), sol.condition)


def solve_elimination_filter_generic(elim: EliminatedSystem, y, grid: Grid) -> FilterSolution:
    return solve_filter(elim.spec(), None, elim.ellipsoid(), elim.observation("q1sq"), y, grid)


def estimate_from_control(u: PiecewiseTrajectory, y) -> float:
    """``int (u, y)`` over [0, 1] by Simpson quadrature."""
    total = 0.0
    for k in range(u.grid.K):
        yh = half_grid_samples(u.grid, k, y)[0::2].reshape(u.values[k].shape)
        total += simpson(np.sum(u.values[k] * yh, axis=1), u.grid.h(k))
    return float(total)


# ------------------------------------------------------------- U-optimal


def _full_rows(n2: int) -> np.ndarray:
    R = np.zeros((n2, 2 * n2))
    R[:, :n2] = np.eye(n2)
    return R


def check_U_feasible(elim: EliminatedSystem, a1, a2, s: float, grid: Grid) -> bool:
    """Rank test for ``{u : z(0) = 0, z(1) = 0}`` being non-empty."""
    spec = elim.spec()
    alg = build_boundary_algebra(spec.B0, spec.B1)
    target = FunctionalTarget(elim.target(a1, a2, s), s)
    maps = build_affine_maps(spec, elim.observation("q1sq"), target, grid, alg)
    return check_feasible(maps, alg)


def solve_U_optimal(
    elim: EliminatedSystem,
    a1,
    a2,
    s: float,
    grid: Optional[Grid] = None,
    variant: str = "q1sq",
    check: bool = True,
) -> EliminationSolution:
    """``z(0) = 0``, ``z(1) = 0``, jump b at s, p continuous, ``u = q1^k H p``.

    ``variant`` selects k: "q1" (k = 1) or "q1sq" (k = 2). Only k = 2 is the
    stationarity condition of ``int (Q1 z, z) + int q1^-2 |u|^2``; with
    k = 1 the duality gap ``(b, p(s)) - J(u)`` is reported and is non-zero
    unless q1 is identically one.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    kp = VARIANTS[variant]
    n2 = 2 * elim.n
    grid = grid or elimination_grid(s, nodes=65)
    if check and not check_U_feasible(elim, a1, a2, s, grid):
        raise InfeasibleU("no control makes z vanish at both ends")
    i_s = grid.index_of(s)
    b = elim.target(a1, a2, s)
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n2,
        drift=_elim_drift(elim, kp),
        R0=_full_rows(n2),
        R1=_full_rows(n2),
        b=np.zeros(2 * n2),
        jumps={i_s: (None, np.concatenate([-b, np.zeros(n2)]))},
    )
    sol = solve_multipoint(prob)
    z = sol.x.components(slice(0, n2))
    p = sol.x.components(slice(n2, 2 * n2))
    u = _control(elim, p, kp)
    cost = elimination_cost(elim, z, u)
    bp = float(b @ p.left(i_s))
    diag = {
        "b_dot_p": bp,
        "duality_gap": abs(bp - cost),
        "z_end": float(np.max(np.abs(z.end_value()))),
    }
    return EliminationSolution(grid, z, p, u, b, s, float(np.sqrt(max(cost, 0.0))), cost, cost, variant, sol.condition, diag)


def solve_U_optimal_kkt(elim: EliminatedSystem, a1, a2, s: float, grid: Optional[Grid] = None) -> ConstrainedSolution:
    """True optimum over the discretized controls (KKT)."""
    grid = grid or elimination_grid(s, nodes=65)
    spec = elim.spec()
    target = FunctionalTarget(elim.target(a1, a2, s), s)
    return solve_constrained_estimator(
        spec, None, None, elim.observation("q1sq"), target, grid, Q2_inv=elim.Q1
    )


def solve_U_optimal_filter(elim: EliminatedSystem, y, grid: Grid, variant: str = "q1sq") -> FilterSolution:
    """``-p_hat' = A1^T p_hat + q1^k H^T (y - H x_hat)``, ``p_hat(0) = p_hat(1) = 0``."""
    kp = VARIANTS[variant]
    n2 = 2 * elim.n
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n2,
        drift=_elim_drift(elim, kp),
        R0=_full_rows(n2),
        R1=_full_rows(n2),
        b=np.zeros(2 * n2),
        forcing=_observation_forcing(elim, grid, y, kp),
    )
    sol = solve_multipoint(prob)
    return FilterSolution(grid, sol.x.components(slice(0, n2)), sol.x.components(slice(n2, 2 * n2)), sol.condition)
