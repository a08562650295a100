"""Minimax estimation of (a, phi(s)) from observations on a window.

Data model: ``y(t) = H(t) phi(t) + xi(t)`` on (alpha, beta); the right-hand
side and boundary data lie in an ellipsoid around a nominal element; the
noise correlation is bounded through a weight ``Q(t)``. The optimal
estimate ``int (u, y) + c`` comes from one stacked 2n-dimensional multipoint
problem for the adjoint state z and the dual state p.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boundary import BoundaryAlgebra, BvpSpec, build_boundary_algebra, require_unique_solvability
from .errors import GridMismatch, NegativeVariance
from .functions import MatrixFunction, as_function, zeros
from .linear_bvp import (
    Grid,
    MultipointProblem,
    PiecewiseTrajectory,
    fd_derivative,
    half_grid_samples,
    simpson,
    solve_multipoint,
)

DEFAULT_NODES = 129
NEG_TOL = 1e-10


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class IntervalObservation:
    """``y = H phi + xi`` on (alpha, beta); noise weight ``Q`` (l x l)."""

    H: MatrixFunction
    alpha: float
    beta: float
    Q: MatrixFunction

    def __post_init__(self):
        if not self.alpha < self.beta:
            raise ValueError("observation window needs alpha < beta")
        H = as_function(self.H)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "Q", as_function(self.Q, (H.shape[0], H.shape[0])))

    @property
    def l(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class EllipsoidG:
    """Ellipsoid around ``(f_nom, f0_nom, f1_nom)``, stored via inverse weights.

    A zero inverse weight means the component is known exactly; a PSD
    ``Q2_inv`` restricts the uncertainty in f to a subspace.
    """

    Q0_inv: np.ndarray
    Q1_inv: np.ndarray
    Q2_inv: MatrixFunction
    f_nom: MatrixFunction
    f0_nom: np.ndarray
    f1_nom: np.ndarray

    @classmethod
    def from_weights(cls, Q0, Q1, Q2, f_nom=None, f0_nom=None, f1_nom=None) -> "EllipsoidG":
        Q0 = np.atleast_2d(np.asarray(Q0, dtype=float))
        Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
        Q2 = as_function(Q2)
        n = Q2.shape[0]
        return cls(
            np.linalg.inv(Q0),
            np.linalg.inv(Q1),
            Q2.inverse(),
            zeros((n,)) if f_nom is None else as_function(f_nom, (n,)),
            np.zeros(Q0.shape[0]) if f0_nom is None else np.asarray(f0_nom, float),
            np.zeros(Q1.shape[0]) if f1_nom is None else np.asarray(f1_nom, float),
        )

    @classmethod
    def from_inverse_weights(cls, Q0_inv, Q1_inv, Q2_inv, f_nom=None, f0_nom=None, f1_nom=None) -> "EllipsoidG":
        Q0_inv = np.atleast_2d(np.asarray(Q0_inv, dtype=float))
        Q1_inv = np.atleast_2d(np.asarray(Q1_inv, dtype=float))
        Q2_inv = as_function(Q2_inv)
        n = Q2_inv.shape[0]
        return cls(
            Q0_inv,
            Q1_inv,
            Q2_inv,
            zeros((n,)) if f_nom is None else as_function(f_nom, (n,)),
            np.zeros(Q0_inv.shape[0]) if f0_nom is None else np.asarray(f0_nom, float),
            np.zeros(Q1_inv.shape[0]) if f1_nom is None else np.asarray(f1_nom, float),
        )

    @classmethod
    def from_spec(cls, spec: BvpSpec, Q0, Q1, Q2) -> "EllipsoidG":
        """Nominal element taken from the data stored on the spec."""
        return cls.from_weights(Q0, Q1, Q2, spec.f, spec.f0, spec.f1)


@dataclass(frozen=True)
class FunctionalTarget:
    a: np.ndarray
    s: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))


@dataclass
class MinimaxSolution:
    grid: Grid
    z: PiecewiseTrajectory
    p: PiecewiseTrajectory
    u_hat: PiecewiseTrajectory  # zero outside the observation window
    c_hat: float
    sigma: float
    sigma2: float
    target: FunctionalTarget
    window: tuple
    condition: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class FilterSolution:
    grid: Grid
    p_hat: PiecewiseTrajectory
    phi_hat: PiecewiseTrajectory
    condition: float

    def estimate(self, a, s: float) -> float:
        return float(np.asarray(a, dtype=float) @ self.phi_hat.at(s, "L"))


# ---------------------------------------------------------------- helpers


def estimator_grid(T: float, points, nodes: Optional[int] = None, total_nodes: Optional[int] = None) -> Grid:
    """Grid on [0, T] with breakpoints at every point of interest."""
    pts = [0.0, T] + [float(p) for p in points]
    if total_nodes is not None:
        return Grid.from_total(pts, total_nodes)
    return Grid.uniform(pts, nodes or DEFAULT_NODES)


def in_window(grid: Grid, k: int, alpha: float, beta: float) -> bool:
    a, b = grid.breakpoints[k], grid.breakpoints[k + 1]
    tol = 1e-12 * max(1.0, grid.end)
    return a >= alpha - tol and b <= beta + tol


def check_target(obs: IntervalObservation, s: float, T: float):
    if not (0.0 <= obs.alpha < obs.beta <= T):
        raise ValueError("observation window must lie in [0, T]")
    if not obs.alpha < s < obs.beta:
        raise ValueError("target point s must lie strictly inside (alpha, beta)")


def coupled_drift(spec: BvpSpec, grid: Grid, Q2_inv: MatrixFunction, coupling) -> callable:
    """Drift of the stacked state (z, p): [[A^T, C(t)], [Q2^-1, -A]].

    ``coupling(k, ts)`` gives the (n x n) block C on interval k (or None).
    """
    n = spec.n

    def drift(k, ts):
        A = spec.A(ts)
        M = np.zeros((len(ts), 2 * n, 2 * n))
        M[:, :n, :n] = np.swapaxes(A, 1, 2)
        M[:, n:, :n] = Q2_inv(ts)
        M[:, n:, n:] = -A
        C = coupling(k, ts)
        if C is not None:
            M[:, :n, n:] = C
        return M

    return drift


def window_coupling(grid: Grid, obs: IntervalObservation):
    """H^T Q H on intervals inside the observation window."""

    def coupling(k, ts):
        if not in_window(grid, k, obs.alpha, obs.beta):
            return None
        H = obs.H(ts)
        return np.einsum("tki,tkl,tlj->tij", H, obs.Q(ts), H)

    return coupling


def estimator_boundary_rows(spec: BvpSpec, alg: BoundaryAlgebra, G: EllipsoidG):
    """Rows at 0 and T for the stacked (z, p) or (p_hat, phi_hat) state."""
    n, m = spec.n, spec.m
    R0 = np.zeros((n, 2 * n))
    R0[: n - m, :n] = alg.B0_hat
    R0[n - m :, :n] = -G.Q0_inv @ alg.B0_bar
    R0[n - m :, n:] = spec.B0
    R1 = np.zeros((n, 2 * n))
    R1[:m, :n] = alg.B1_hat
    R1[m:, :n] = G.Q1_inv @ alg.B1_bar
    R1[m:, n:] = spec.B1
    return R0, R1


def control_from_p(grid: Grid, obs: IntervalObservation, p: PiecewiseTrajectory) -> PiecewiseTrajectory:
    """u = Q H p inside the window, zero elsewhere."""
    l = obs.l

    def fn(k, ts, v):
        if not in_window(grid, k, obs.alpha, obs.beta):
            return np.zeros((len(ts), l))
        return np.einsum("tij,tjk,tk->ti", obs.Q(ts), obs.H(ts), v)

    return p.map(fn)


def nominal_offset(spec: BvpSpec, alg: BoundaryAlgebra, G: EllipsoidG, z: PiecewiseTrajectory) -> float:
    """(B0_bar z(0), f0_nom) - (B1_bar z(T), f1_nom) + int (z, f_nom)."""
    c = (alg.B0_bar @ z.start_value()) @ G.f0_nom - (alg.B1_bar @ z.end_value()) @ G.f1_nom
    c += z.integral(lambda k, ts, v: np.sum(v * G.f_nom(ts), axis=1))
    return float(c)


def prior_quadratic(alg: BoundaryAlgebra, G: EllipsoidG, z: PiecewiseTrajectory) -> float:
    """Supremum of the squared prior error term over the ellipsoid."""
    w0 = alg.B0_bar @ z.start_value()
    wT = alg.B1_bar @ z.end_value()
    q = w0 @ G.Q0_inv @ w0 + wT @ G.Q1_inv @ wT
    q += z.inner(z, G.Q2_inv)
    return float(q)


def noise_quadratic(grid: Grid, obs: IntervalObservation, u: PiecewiseTrajectory) -> float:
    total = 0.0
    for k in range(grid.K):
        if not in_window(grid, k, obs.alpha, obs.beta):
            continue
        ts = grid.nodes(k)
        v = u.values[k]
        Qi = np.linalg.inv(obs.Q(ts))
        total += simpson(np.einsum("ti,tij,tj->t", v, Qi, v), grid.h(k))
    return float(total)


def _sigma_from(sigma2: float, scale: float) -> float:
    if sigma2 < -NEG_TOL * max(1.0, scale):
        raise NegativeVariance(f"(a, p(s)) = {sigma2:.3e} is negative")
    return float(np.sqrt(max(sigma2, 0.0)))


# ------------------------------------------------------------- estimator


def solve_estimator(
    spec: BvpSpec,
    alg: Optional[BoundaryAlgebra],
    G: EllipsoidG,
    obs: IntervalObservation,
    target: FunctionalTarget,
    grid: Optional[Grid] = None,
) -> MinimaxSolution:
    """Solve the coupled (z, p) system and assemble u_hat, c_hat, sigma."""
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    require_unique_solvability(spec)
    check_target(obs, target.s, spec.T)
    n = spec.n
    grid = grid or estimator_grid(spec.T, [obs.alpha, obs.beta, target.s])
    i_s = grid.index_of(target.s)
    grid.index_of(obs.alpha)
    grid.index_of(obs.beta)
    R0, R1 = estimator_boundary_rows(spec, alg, G)
    jump = np.concatenate([-target.a, np.zeros(n)])
    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=coupled_drift(spec, grid, G.Q2_inv, window_coupling(grid, obs)),
        R0=R0,
        R1=R1,
        b=np.zeros(2 * n),
        jumps={i_s: (None, jump)},
    )
    sol = solve_multipoint(prob)
    x = sol.x
    z = x.components(slice(0, n))
    p = x.components(slice(n, 2 * n))
    u = control_from_p(grid, obs, p)
    c_hat = nominal_offset(spec, alg, G, z)
    ps_left, ps_right = p.left(i_s), p.right(i_s)
    sigma2 = float(target.a @ ps_left)
    scale = float(np.abs(target.a) @ np.abs(ps_left))
    sigma = _sigma_from(sigma2, scale)
    diag = {"p_continuity_at_s": float(np.max(np.abs(ps_left - ps_right)))}
    return MinimaxSolution(grid, z, p, u, c_hat, sigma, sigma2, target, (obs.alpha, obs.beta), sol.condition, diag)


def evaluate_cost(solution: MinimaxSolution, alg: BoundaryAlgebra, G: EllipsoidG, obs: IntervalObservation) -> float:
    """I(u_hat): prior quadratic form plus noise quadratic form."""
    return prior_quadratic(alg, G, solution.z) + noise_quadratic(solution.grid, obs, solution.u_hat)


def solve_adjoint_state(
    spec: BvpSpec,
    alg: BoundaryAlgebra,
    obs: IntervalObservation,
    target: FunctionalTarget,
    grid: Grid,
    control=None,
):
    """z(.; u) for a given control: -z' + A^T z = -H^T u on the window.

    ``control`` is a PiecewiseTrajectory on ``grid``, a callable of t, or
    a callable ``(k, ts) -> (len, l, c)`` flagged by attribute ``columns``.
    Returns one trajectory per column.
    """
    n = spec.n
    i_s = grid.index_of(target.s)
    a = np.asarray(target.a, dtype=float)
    cols = getattr(control, "columns", None)
    c = cols or 1

    def drift(k, ts):
        return np.swapaxes(spec.A(ts), 1, 2)

    def forcing(k, ts):
        if control is None or not in_window(grid, k, obs.alpha, obs.beta):
            return np.zeros((len(ts), n, c))
        if cols:
            uh = control(k, ts)
        else:
            uh = half_grid_samples(grid, k, control).reshape(len(ts), obs.l, 1)
        return np.einsum("tji,tjc->tic", obs.H(ts), uh)

    a_cols = a.reshape(n, -1)
    if a_cols.shape[1] != c:
        a_cols = np.repeat(a_cols[:, :1], c, axis=1)
    prob = MultipointProblem(
        grid=grid,
        dim=n,
        drift=drift,
        R0=alg.B0_hat,
        R1=alg.B1_hat,
        b=np.zeros((n, c)),
        forcing=forcing,
        jumps={i_s: (None, -a_cols)},
    )
    return solve_multipoint(prob).trajectory


def cost_for_control(spec, alg, G, obs, target, grid, control) -> float:
    """I(u) for an arbitrary control (z re-solved for that control)."""
    z = solve_adjoint_state(spec, alg, obs, target, grid, control)[0]
    if isinstance(control, PiecewiseTrajectory):
        u = control
    elif control is None:
        u = PiecewiseTrajectory(grid, [np.zeros((s + 1, obs.l)) for s in grid.steps])
    else:
        u = PiecewiseTrajectory.from_function(grid, control)
    return prior_quadratic(alg, G, z) + noise_quadratic(grid, obs, u)


def observation_samples(grid: Grid, obs: IntervalObservation, y) -> list:
    """Node values of y on the window intervals (zeros elsewhere)."""
    out = []
    for k in range(grid.K):
        ts = grid.nodes(k)
        if not in_window(grid, k, obs.alpha, obs.beta):
            out.append(np.zeros((len(ts), obs.l)))
            continue
        if isinstance(y, PiecewiseTrajectory):
            if not y.grid.same_as(grid):
                raise GridMismatch("observation samples live on a different grid")
            out.append(y.values[k].reshape(len(ts), obs.l))
        elif isinstance(y, tuple):
            half = half_grid_samples(grid, k, y)
            out.append(np.asarray(half)[0::2].reshape(len(ts), obs.l))
        else:
            out.append(np.asarray(y(ts), dtype=float).reshape(len(ts), obs.l))
    return out


def estimate_from_observation(solution: MinimaxSolution, obs: IntervalObservation, y) -> float:
    """int (u_hat, y) + c_hat by Simpson quadrature."""
    grid = solution.grid
    ys = observation_samples(grid, obs, y)
    total = solution.c_hat
    for k in range(grid.K):
        total += simpson(np.sum(solution.u_hat.values[k] * ys[k], axis=1), grid.h(k))
    return float(total)


# ------------------------------------------------------------------ filter

# The right boundary row carries +f1_nom: with y = H phi_nom the nominal
# solution itself (with p_hat = 0) must solve the filter system.
F1_SIGN = 1.0


def solve_filter(
    spec: BvpSpec,
    alg: Optional[BoundaryAlgebra],
    G: EllipsoidG,
    obs: IntervalObservation,
    y,
    grid: Grid,
) -> FilterSolution:
    """Stacked (p_hat, phi_hat) system driven by the observation y."""
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    require_unique_solvability(spec)
    n = spec.n
    R0, R1 = estimator_boundary_rows(spec, alg, G)
    b = np.concatenate([np.zeros(n - spec.m), G.f0_nom, np.zeros(spec.m), F1_SIGN * G.f1_nom])

    def forcing(k, ts):
        g = np.zeros((len(ts), 2 * n))
        g[:, n:] = G.f_nom(ts)
        if in_window(grid, k, obs.alpha, obs.beta) and y is not None:
            yh = half_grid_samples(grid, k, y).reshape(len(ts), obs.l)
            H = obs.H(ts)
            g[:, :n] = -np.einsum("tji,tjk,tk->ti", H, obs.Q(ts), yh)
        return g

    prob = MultipointProblem(
        grid=grid,
        dim=2 * n,
        drift=coupled_drift(spec, grid, G.Q2_inv, window_coupling(grid, obs)),
        R0=R0,
        R1=R1,
        b=b,
        forcing=forcing,
    )
    sol = solve_multipoint(prob)
    x = sol.x
    return FilterSolution(grid, x.components(slice(0, n)), x.components(slice(n, 2 * n)), sol.condition)


# ------------------------------------------------- second-order reduction


@dataclass
class SecondOrderReduction:
    spec: BvpSpec
    G: EllipsoidG
    obs: IntervalObservation
    target: FunctionalTarget


def second_order_reduce(
    q,
    T: float,
    H,
    Q,
    Q0,
    Q1,
    Q2,
    a,
    s: float,
    f_nom=None,
    f0_nom=None,
    f1_nom=None,
) -> SecondOrderReduction:
    """First-order form of ``-phi'' + q phi = f``, ``phi(0) = f0``, ``phi(T) = f1``.

    State x = (phi', phi); observations ``y = H phi + xi`` on (0, T).
    The forcing of the first-order system is (-f, 0) and only its first
    block is uncertain, so the inverse weight on f is diag(Q2^-1, 0).
    """
    q = as_function(q)
    n = q.shape[0]
    Hf = as_function(H)
    l = Hf.shape[0]
    Q2f = as_function(Q2, (n, n))
    Q2i = Q2f.inverse()

    def A_big(ts):
        out = np.zeros((len(ts), 2 * n, 2 * n))
        out[:, :n, n:] = -q(ts)
        out[:, n:, :n] = -np.eye(n)
        return out

    fn = zeros((n,)) if f_nom is None else as_function(f_nom, (n,))

    def f_big(ts):
        out = np.zeros((len(ts), 2 * n))
        out[:, :n] = -fn(ts)
        return out

    def Q2_inv_big(ts):
        out = np.zeros((len(ts), 2 * n, 2 * n))
        out[:, :n, :n] = Q2i(ts)
        return out

    def H_big(ts):
        out = np.zeros((len(ts), l, 2 * n))
        out[:, :, n:] = Hf(ts)
        return out

    B = np.hstack([np.zeros((n, n)), np.eye(n)])
    f0 = np.zeros(n) if f0_nom is None else np.asarray(f0_nom, float)
    f1 = np.zeros(n) if f1_nom is None else np.asarray(f1_nom, float)
    spec = BvpSpec(as_function(A_big, (2 * n, 2 * n)), B, B, T, as_function(f_big, (2 * n,)), f0, f1)
    G = EllipsoidG.from_inverse_weights(
        np.linalg.inv(np.atleast_2d(Q0)),
        np.linalg.inv(np.atleast_2d(Q1)),
        as_function(Q2_inv_big, (2 * n, 2 * n)),
        spec.f,
        f0,
        f1,
    )
    obs = IntervalObservation(as_function(H_big, (l, 2 * n)), 0.0, T, Q)
    target = FunctionalTarget(np.concatenate([np.zeros(n), np.asarray(a, float)]), s)
    return SecondOrderReduction(spec, G, obs, target)


def second_order_residuals(sol: MinimaxSolution, red: SecondOrderReduction, q, Q2, Q0, Q1) -> dict:
    """Residuals of the reduced solution in second-order form.

    With z := -z1 and p := p2 the solution must satisfy
    -z'' + q z = -H^T Q H p, z(0) = z(T) = 0, z'(s-) - z'(s+) = a,
    -p'' + q p = Q2^-1 z, p(0) = Q0^-1 z'(0), p(T) = -Q1^-1 z'(T).
    """
    n = red.spec.n // 2
    grid = sol.grid
    q = as_function(q)
    Q2i = as_function(Q2, (n, n)).inverse()
    obs = red.obs
    zt, pt = sol.z, sol.p
    r_op_z = r_op_p = r_first = 0.0
    scale = 1.0
    for k in range(grid.K):
        ts = grid.nodes(k)
        h = grid.h(k)
        z = -zt.values[k][:, :n]
        dz = zt.values[k][:, n:]  # z' = z2 exactly
        p = pt.values[k][:, n:]
        dp = pt.values[k][:, :n]  # p' = p1 exactly
        ddz = fd_derivative(dz, h)
        ddp = fd_derivative(dp, h)
        Hs = obs.H(ts)[:, :, n:]
        HQH = np.einsum("tki,tkl,tlj->tij", Hs, obs.Q(ts), Hs)
        qz = np.einsum("tij,tj->ti", q(ts), z)
        qp = np.einsum("tij,tj->ti", q(ts), p)
        r1 = -ddz + qz + np.einsum("tij,tj->ti", HQH, p)
        r2 = -ddp + qp - np.einsum("tij,tj->ti", Q2i(ts), z)
        r_op_z = max(r_op_z, float(np.max(np.abs(r1))))
        r_op_p = max(r_op_p, float(np.max(np.abs(r2))))
        r_first = max(r_first, float(np.max(np.abs(fd_derivative(z, h) - dz))))
        scale = max(scale, float(np.max(np.abs(ddz))), float(np.max(np.abs(ddp))))
    i_s = grid.index_of(sol.target.s)
    a = sol.target.a[n:]
    jump = zt.left(i_s)[n:] - zt.right(i_s)[n:] - a
    z0 = -zt.start_value()[:n]
    zT = -zt.end_value()[:n]
    dz0 = zt.start_value()[n:]
    dzT = zt.end_value()[n:]
    bc_p0 = pt.start_value()[n:] - np.linalg.inv(np.atleast_2d(Q0)) @ dz0
    bc_pT = pt.end_value()[n:] + np.linalg.inv(np.atleast_2d(Q1)) @ dzT
    return {
        "operator_z": r_op_z / scale,
        "operator_p": r_op_p / scale,
        "first_order": r_first,
        "jump": float(np.max(np.abs(jump))),
        "dirichlet": float(max(np.max(np.abs(z0)), np.max(np.abs(zT)))),
        "p_boundary": float(max(np.max(np.abs(bc_p0)), np.max(np.abs(bc_pT)))),
    }
