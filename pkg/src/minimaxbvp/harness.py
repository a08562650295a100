"""Simulation harness: saturating elements, admissible draws, Monte Carlo.

Every random quantity comes from a counter-based Philox stream keyed by
(seed, sample index), so any sample can be regenerated on its own and
results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .boundary import BoundaryAlgebra, BvpSpec, build_boundary_algebra
from .continuous import (
    EllipsoidG,
    IntervalObservation,
    MinimaxSolution,
    in_window,
    noise_quadratic,
    prior_quadratic,
)
from .errors import DegenerateDirection, SingularSystem
from .functions import MatrixFunction, as_function
from .linear_bvp import Border, Grid, MultipointProblem, PiecewiseTrajectory, simpson, solve_multipoint
from .ordern import (
    OrderNProblem,
    OrderNSolution,
    OrderNWeights,
    _end_jets,
    _node_function,
    _scalar,
    companion,
    solvability_residual,
)
from .point import PointMinimaxSolution, PointObservationSet

DEGENERATE_TOL = 1e-14


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one sample, keyed by (seed, index)."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


COIN_BLOCK = 4096
COIN_SPACE = 1 << 63


def rademacher(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Fair +-1 coins for sample indices offset .. offset + count - 1.

    Coins come in fixed blocks, each from its own Philox key, so the coin of
    a given index does not depend on how the range is split.
    """
    if count <= 0:
        return np.zeros(0)
    first, last = offset // COIN_BLOCK, (offset + count - 1) // COIN_BLOCK
    bits = np.concatenate([sample_rng(seed, COIN_SPACE | b).integers(0, 2, COIN_BLOCK) for b in range(first, last + 1)])
    start = offset - first * COIN_BLOCK
    return 2.0 * bits[start : start + count] - 1.0


# ------------------------------------------------------ continuous models


@dataclass
class RhsElement:
    """A right-hand side (f, f0, f1) of the first-order system."""

    f: MatrixFunction
    f0: np.ndarray
    f1: np.ndarray
    g_form: float = float("nan")
    q: float = float("nan")
    pieces: Optional[Callable] = None  # (k, ts) -> f on interval k of ``grid``
    grid: Optional[Grid] = None

    def on_interval(self, grid: Grid, k: int, ts) -> np.ndarray:
        """f on interval k, using one-sided limits at the interval ends."""
        if self.pieces is not None and self.grid is grid:
            return self.pieces(k, ts)
        return self.f(ts)


def g_form(G: EllipsoidG, F: RhsElement, grid: Grid) -> float:
    """Ellipsoid quadratic form of F - F_nominal, by Simpson quadrature.

    Weights are applied through pseudo-inverses of the stored inverse
    weights, so components known exactly contribute nothing.
    """
    d0 = F.f0 - G.f0_nom
    d1 = F.f1 - G.f1_nom
    total = d0 @ np.linalg.pinv(G.Q0_inv) @ d0 + d1 @ np.linalg.pinv(G.Q1_inv) @ d1
    for k in range(grid.K):
        ts = grid.nodes(k)
        df = F.on_interval(grid, k, ts) - G.f_nom(ts)
        Q2 = np.linalg.pinv(G.Q2_inv(ts), hermitian=True)
        total += simpson(np.einsum("ti,tij,tj->t", df, Q2, df), grid.h(k))
    return float(total)


def _direction_function(z: PiecewiseTrajectory, G: EllipsoidG, scale: float) -> MatrixFunction:
    """Q2^{-1} z / scale + f_nom, with z interpolated by its interval splines."""
    n = z.values[0].shape[1]

    def fn(ts):
        ts = np.atleast_1d(ts)
        zs = np.array([z.at(t) for t in ts])
        return np.einsum("tij,tj->ti", G.Q2_inv(ts), zs) / scale + G.f_nom(ts)

    return as_function(fn, (n,))


def worst_case_F(solution, alg: BoundaryAlgebra, G: EllipsoidG) -> RhsElement:
    """Saturating element of the ellipsoid for a continuous or point solution."""
    z = solution.z
    q2 = prior_quadratic(alg, G, z)
    if q2 <= DEGENERATE_TOL:
        raise DegenerateDirection("z vanishes: every admissible F gives the same estimate")
    q = float(np.sqrt(q2))
    f0 = G.Q0_inv @ (alg.B0_bar @ z.start_value()) / q + G.f0_nom
    f1 = -G.Q1_inv @ (alg.B1_bar @ z.end_value()) / q + G.f1_nom
    def pieces(k, ts):
        return np.einsum("tij,tj->ti", G.Q2_inv(ts), z._spline(k)(ts)) / q + G.f_nom(ts)

    F = RhsElement(_direction_function(z, G, q), f0, f1, q=q, pieces=pieces, grid=z.grid)
    F.g_form = g_form(G, F, solution.grid)
    return F


def nominal_element(G: EllipsoidG) -> RhsElement:
    return RhsElement(G.f_nom, G.f0_nom.copy(), G.f1_nom.copy(), 0.0, 0.0)


def forward_solve(spec: BvpSpec, F: RhsElement, grid: Grid) -> PiecewiseTrajectory:
    """phi' = -A phi + f with B0 phi(0) = f0, B1 phi(T) = f1."""
    n, m = spec.n, spec.m
    R0 = np.zeros((n, n))
    R1 = np.zeros((n, n))
    R0[:m] = spec.B0
    R1[m:] = spec.B1
    prob = MultipointProblem(
        grid=grid,
        dim=n,
        drift=lambda k, ts: -spec.A(ts),
        R0=R0,
        R1=R1,
        b=np.concatenate([F.f0, F.f1]),
        forcing=lambda k, ts: F.on_interval(grid, k, ts),
    )
    return solve_multipoint(prob).x


def deterministic_error(spec: BvpSpec, solution: MinimaxSolution, obs: IntervalObservation, F: RhsElement) -> float:
    """(a, phi(s)) - int (u_hat, H phi) - c_hat for noise-free data from F."""
    grid = solution.grid
    phi = forward_solve(spec, F, grid)
    i_s = grid.index_of(solution.target.s)
    truth = float(solution.target.a @ phi.left(i_s))
    est = solution.c_hat
    for k in range(grid.K):
        if not in_window(grid, k, obs.alpha, obs.beta):
            continue
        ts = grid.nodes(k)
        y = np.einsum("tij,tj->ti", obs.H(ts), phi.values[k])
        est += simpson(np.sum(solution.u_hat.values[k] * y, axis=1), grid.h(k))
    return truth - est


def point_deterministic_error(spec: BvpSpec, solution: PointMinimaxSolution, obsP: PointObservationSet, F: RhsElement) -> float:
    grid = solution.grid
    phi = forward_solve(spec, F, grid)
    truth = float(solution.a @ phi.left(grid.index_of(solution.s)))
    est = solution.c_hat + sum(float(u @ phi.left(grid.index_of(t))) for u, t in zip(solution.u_hat, obsP.times))
    return truth - est


# ---------------------------------------------------------------- noise


@dataclass
class NoiseDirection:
    """Noise realizations ``eta * direction`` with E eta = 0, E eta^2 = 1.

    ``response`` is the estimate's linear response to one unit of eta;
    ``constraint`` is the noise-class functional of the direction.
    """

    response: float
    constraint: float
    values: object = None

    def constraint_per_sample(self, eta: np.ndarray) -> np.ndarray:
        return eta**2 * self.constraint


def worst_case_noise(solution: MinimaxSolution, obs: IntervalObservation) -> NoiseDirection:
    """xi = eta Q^{-1} u_hat / sqrt(int (u_hat, Q^{-1} u_hat))."""
    grid = solution.grid
    nu2 = noise_quadratic(grid, obs, solution.u_hat)
    if nu2 <= DEGENERATE_TOL:
        raise DegenerateDirection("u_hat vanishes: no noise enters the estimate")
    nu = float(np.sqrt(nu2))
    response = 0.0
    constraint = 0.0
    values = []
    for k in range(grid.K):
        ts = grid.nodes(k)
        if not in_window(grid, k, obs.alpha, obs.beta):
            values.append(np.zeros((len(ts), obs.l)))
            continue
        u = solution.u_hat.values[k]
        xi = np.linalg.solve(obs.Q(ts), u[:, :, None])[:, :, 0] / nu
        values.append(xi)
        response += simpson(np.sum(u * xi, axis=1), grid.h(k))
        constraint += simpson(np.einsum("ti,tij,tj->t", xi, obs.Q(ts), xi), grid.h(k))
    return NoiseDirection(float(response), float(constraint), values)


def point_worst_case_noise(solution: PointMinimaxSolution, obsP: PointObservationSet) -> NoiseDirection:
    """xi_i = eta Qt_i^{-1} u_i / sqrt(sum_i (u_i, Qt_i^{-1} u_i))."""
    dirs = [np.linalg.solve(W, u) for u, W in zip(solution.u_hat, obsP.weights)]
    nu2 = sum(float(u @ d) for u, d in zip(solution.u_hat, dirs))
    if nu2 <= DEGENERATE_TOL:
        raise DegenerateDirection("u_hat vanishes: no noise enters the estimate")
    nu = np.sqrt(nu2)
    xs = [d / nu for d in dirs]
    response = sum(float(u @ x) for u, x in zip(solution.u_hat, xs))
    constraint = sum(float(x @ W @ x) for x, W in zip(xs, obsP.weights))
    return NoiseDirection(response, constraint, xs)


# ------------------------------------------------------------ Monte Carlo


@dataclass
class MonteCarloResult:
    mse: float
    stderr: float
    samples: int
    deterministic: float
    constraint_mean: float
    errors: np.ndarray = field(repr=False, default=None)

    @property
    def lower(self) -> float:
        return self.mse - 3.0 * self.stderr

    @property
    def upper(self) -> float:
        return self.mse + 3.0 * self.stderr


def monte_carlo(deterministic: float, noises, samples: int, seed: int) -> MonteCarloResult:
    """Squared errors ``(e0 - sum_j eta_j r_j)^2`` with one eta stream per direction.

    The estimate is linear in the data, so the error of one sample is the
    noise-free error minus the estimate's response to the noise.
    """
    noises = list(noises)
    errs = np.full(samples, float(deterministic))
    cons = np.zeros(samples)
    for j, nd in enumerate(noises):
        eta = rademacher(seed, samples, offset=j * samples)
        errs -= eta * nd.response
        cons += nd.constraint_per_sample(eta)
    sq = errs**2
    stderr = float(np.std(sq, ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return MonteCarloResult(float(np.mean(sq)), stderr, samples, float(deterministic), float(np.mean(cons)) if noises else 0.0, errs)


def monte_carlo_error(
    spec: BvpSpec,
    solution: MinimaxSolution,
    obs: IntervalObservation,
    F: RhsElement,
    noises,
    samples: int,
    seed: int,
) -> MonteCarloResult:
    e0 = deterministic_error(spec, solution, obs, F)
    return monte_carlo(e0, noises, samples, seed)


# ------------------------------------------------------ admissible draws


def _smooth_profile(rng: np.random.Generator, T: float, dim: int, modes: int = 4) -> Callable:
    """Random low-frequency trigonometric profile on [0, T], one per component."""
    c = rng.standard_normal((modes, dim))
    s = rng.standard_normal((modes, dim))
    ks = np.arange(modes)

    def fn(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        arg = np.pi * np.outer(ts / T, ks)
        return np.cos(arg) @ c + np.sin(arg) @ s

    return fn


def random_admissible_F(
    rng: np.random.Generator, G: EllipsoidG, T: float, grid: Grid, free_boundary: bool = False
) -> RhsElement:
    """Random element with G-form r^2, r uniform on [0, 1].

    Directions are drawn inside the range of the inverse weights. With
    ``free_boundary`` the boundary data are arbitrary and drawn at scale 10.
    """
    n = G.f_nom.shape[0]
    prof = _smooth_profile(rng, T, n)

    def direction(ts):
        ts = np.atleast_1d(ts)
        return np.einsum("tij,tj->ti", G.Q2_inv(ts), prof(ts))

    d0 = G.Q0_inv @ rng.standard_normal(G.f0_nom.shape)
    d1 = G.Q1_inv @ rng.standard_normal(G.f1_nom.shape)
    base = RhsElement(as_function(lambda ts: direction(ts) + G.f_nom(ts), (n,)), d0 + G.f0_nom, d1 + G.f1_nom)
    scale = np.sqrt(g_form(G, base, grid))
    r = rng.random()
    c = r / scale if scale > 0 else 0.0
    f0 = c * d0 + G.f0_nom
    f1 = c * d1 + G.f1_nom
    if free_boundary:
        f0 = f0 + 10.0 * rng.standard_normal(f0.shape)
        f1 = f1 + 10.0 * rng.standard_normal(f1.shape)
    F = RhsElement(as_function(lambda ts: c * direction(ts) + G.f_nom(ts), (n,)), f0, f1)
    F.g_form = g_form(G, F, grid) if not free_boundary else float(c * c * scale * scale)
    return F


def random_admissible_noise(
    rng: np.random.Generator, solution: MinimaxSolution, obs: IntervalObservation, directions: int = 3
) -> list:
    """Independent profiles xi_j, each driven by its own eta_j, with total budget r <= 1."""
    grid = solution.grid
    profs = [_smooth_profile(rng, grid.end, obs.l) for _ in range(directions)]
    budget = rng.dirichlet(np.ones(directions)) * rng.random()
    out = []
    for prof, b in zip(profs, budget):
        resp = 0.0
        cons = 0.0
        for k in range(grid.K):
            if not in_window(grid, k, obs.alpha, obs.beta):
                continue
            ts = grid.nodes(k)
            xi = prof(ts)
            resp += simpson(np.sum(solution.u_hat.values[k] * xi, axis=1), grid.h(k))
            cons += simpson(np.einsum("ti,tij,tj->t", xi, obs.Q(ts), xi), grid.h(k))
        c = np.sqrt(b / cons) if cons > 0 else 0.0
        out.append(NoiseDirection(float(resp * c), float(cons * c * c)))
    return out


@dataclass
class GuaranteeReport:
    draws: int
    worst_excess: float  # max over draws of mse - (sigma^2 + 3 stderr)
    mse: np.ndarray
    stderr: np.ndarray
    g_forms: np.ndarray
    noise_budgets: np.ndarray

    @property
    def holds(self) -> bool:
        return self.worst_excess <= 0.0


def guarantee_check(
    spec: BvpSpec,
    solution: MinimaxSolution,
    obs: IntervalObservation,
    G: EllipsoidG,
    draws: int = 200,
    samples: int = 2000,
    seed: int = 0,
    free_boundary: bool = False,
) -> GuaranteeReport:
    """Empirical MSE over random admissible (F, noise) pairs against sigma^2."""
    mse = np.zeros(draws)
    se = np.zeros(draws)
    gf = np.zeros(draws)
    nb = np.zeros(draws)
    for i in range(draws):
        rng = sample_rng(seed, 1_000_000 + i)
        F = random_admissible_F(rng, G, spec.T, solution.grid, free_boundary)
        noises = random_admissible_noise(rng, solution, obs)
        res = monte_carlo_error(spec, solution, obs, F, noises, samples, seed + 7919 * (i + 1))
        mse[i], se[i] = res.mse, res.stderr
        gf[i] = F.g_form
        nb[i] = sum(nd.constraint for nd in noises)
    excess = float(np.max(mse - (solution.sigma2 + 3.0 * se)))
    return GuaranteeReport(draws, excess, mse, se, gf, nb)


# --------------------------------------------------------- order-n models


@dataclass
class OrderNElement:
    """Right-hand data (f, alpha) of an order-n problem."""

    f: MatrixFunction
    alpha: np.ndarray
    g_form: float = float("nan")
    d: float = float("nan")


def ordern_g_form(W: OrderNWeights, F: OrderNElement, grid: Grid) -> float:
    da = F.alpha - W.alpha0
    total = da @ W.Q1 @ da
    for k in range(grid.K):
        ts = grid.nodes(k)
        total += simpson(W.Q(ts) * (F.f(ts) - W.f0(ts)) ** 2, grid.h(k))
    return float(total)


def ordern_worst_case_F(prob: OrderNProblem, solution: OrderNSolution, W: OrderNWeights, l0=None, lvec=None) -> OrderNElement:
    """Saturating element: Q^{-1} w / d + f0 with w = z (functional mode) or l0 + z (rhs mode)."""
    st = prob.structure
    z = solution.z
    zf = _node_function(z)
    Sz = st.Splus @ _end_jets(z)
    if solution.mode == "rhs":
        l0f = _scalar(0.0 if l0 is None else l0)
        lv = np.zeros(prob.spec.m) if lvec is None else np.asarray(lvec, dtype=float)
        w = lambda ts: l0f(ts) + zf(ts)  # noqa: E731
        e = lv + Sz
    else:
        w = zf
        e = Sz
    grid = solution.grid
    d2 = sum(simpson(W.Q_inv(grid.nodes(k)) * w(grid.nodes(k)) ** 2, grid.h(k)) for k in range(grid.K))
    d2 += float(e @ W.Q1_inv @ e)
    if d2 <= DEGENERATE_TOL:
        raise DegenerateDirection("saturating direction vanishes")
    d = float(np.sqrt(d2))
    f = as_function(lambda ts: W.Q_inv(np.atleast_1d(ts)) * w(ts) / d + W.f0(ts), ())
    F = OrderNElement(f, W.Q1_inv @ e / d + W.alpha0, d=d)
    F.g_form = ordern_g_form(W, F, grid)
    return F


def ordern_forward_solve(prob: OrderNProblem, F: OrderNElement, grid: Grid) -> PiecewiseTrajectory:
    """Jets of the solution of L phi = f, B(phi) = alpha orthogonal to N(A_B).

    Consistent data give vanishing multipliers on the adjoint null space.
    """
    spec, nulls = prob.spec, prob.nulls
    n, m = spec.n, spec.m
    kphi, kpsi = nulls.phi.k, nulls.psi.k
    if m != n or kphi != kpsi:
        raise SingularSystem("forward simulation needs n boundary forms and index zero")

    def drift(k, ts):
        return companion(spec.primal_coefficients(ts))

    def forcing(k, ts):
        g = np.zeros((len(ts), n))
        g[:, n - 1] = F.f(ts) / spec.primal_coefficients(ts)[:, n]
        return g

    border = None
    if kphi:

        def bforcing(k, ts):
            B = np.zeros((len(ts), n, kpsi))
            B[:, n - 1, :] = nulls.psi.values(ts) / spec.primal_coefficients(ts)[:, n : n + 1]
            return B

        def bweights(k, ts):
            Wt = np.zeros((len(ts), kphi, n))
            Wt[:, :, 0] = nulls.phi.values(ts)
            return Wt

        border = Border(q=kpsi, r=kphi, forcing=bforcing, weights=bweights, w=np.zeros(kphi))
    sol = solve_multipoint(
        MultipointProblem(
            grid=grid,
            dim=n,
            drift=drift,
            R0=spec.forms[:, :n],
            R1=spec.forms[:, n:],
            b=np.asarray(F.alpha, dtype=float),
            forcing=forcing,
            border=border,
        )
    )
    return sol.x


def ordern_target(prob: OrderNProblem, solution: OrderNSolution, F: OrderNElement, phi, l0, lvec=None) -> float:
    l0f = _scalar(l0)
    if solution.mode == "rhs":
        lv = np.zeros(prob.spec.m) if lvec is None else np.asarray(lvec, dtype=float)
        grid = solution.grid
        fpart = sum(simpson(l0f(grid.nodes(k)) * F.f(grid.nodes(k)), grid.h(k)) for k in range(grid.K))
        return float(fpart + lv @ F.alpha)
    return float(phi.integral(lambda k, ts, v: v[:, 0] * l0f(ts)))


def ordern_observe(solution: OrderNSolution, phi: PiecewiseTrajectory):
    """Noise-free observation C phi in the form the estimate expects."""
    obs = solution.obs
    if obs.kind == "K":
        return obs.apply(solution.grid, [v[:, 0] for v in phi.values])
    return _node_function(phi)


def ordern_deterministic_error(prob: OrderNProblem, solution: OrderNSolution, F: OrderNElement, l0, lvec=None) -> float:
    phi = ordern_forward_solve(prob, F, solution.grid)
    return ordern_target(prob, solution, F, phi, l0, lvec) - solution.estimate(ordern_observe(solution, phi))


def ordern_worst_case_noise(solution: OrderNSolution) -> NoiseDirection:
    """eta Q0^{-1} u_hat / sqrt((Q0^{-1} u_hat, u_hat)) in the observation space."""
    obs, grid, u = solution.obs, solution.grid, solution.u_hat
    nu2 = obs.noise_form(grid, u)
    if nu2 <= DEGENERATE_TOL:
        raise DegenerateDirection("u_hat vanishes: no noise enters the estimate")
    nu = float(np.sqrt(nu2))
    if obs.kind == "K":
        xi = np.linalg.solve(obs.Q0, np.asarray(u).reshape(obs.Q0.shape[0], -1, 1))[:, :, 0].reshape(np.shape(u)) / nu
        resp = obs.inner(xi, u)
        cons = obs.inner(xi, (obs.Q0 @ xi.reshape(obs.Q0.shape[0], -1, 1))[:, :, 0].reshape(np.shape(u)))
        return NoiseDirection(float(resp), float(cons), xi)
    resp = 0.0
    cons = 0.0
    values = []
    for k in range(grid.K):
        if u[k] is None:
            values.append(None)
            continue
        ts, w = grid.nodes(k), grid.simpson_weights(k)
        xi = u[k] / obs.q0(ts) / nu
        values.append(xi)
        resp += w @ (xi * u[k])
        cons += w @ (obs.q0(ts) * xi**2)
    return NoiseDirection(float(resp), float(cons), values)


def ordern_monte_carlo(prob, solution: OrderNSolution, F: OrderNElement, noises, samples: int, seed: int, l0, lvec=None) -> MonteCarloResult:
    return monte_carlo(ordern_deterministic_error(prob, solution, F, l0, lvec), noises, samples, seed)


def ordern_random_F(rng: np.random.Generator, prob: OrderNProblem, W: OrderNWeights, grid: Grid) -> OrderNElement:
    """Random consistent element with G-form r^2, r uniform on [0, 1].

    The raw direction is corrected along (Q^{-1} psi_j, Q1^{-1} S+(psi_j))
    so that the perturbed data stay in the range of the operator.
    """
    spec, st, nulls = prob.spec, prob.structure, prob.nulls
    prof = _smooth_profile(rng, spec.length, 1)
    shift = spec.a

    def g(ts):
        return prof(np.atleast_1d(ts) - shift)[:, 0]

    e = rng.standard_normal(spec.m)
    coef = np.zeros(nulls.psi.k)
    Spsi = st.Splus @ nulls.psi.end_jets() if nulls.psi.k else np.zeros((spec.m, 0))
    if nulls.psi.k:

        def resid(fn, vec):
            return solvability_residual(spec, st, nulls, as_function(fn, ()), vec)

        M = np.column_stack(
            [resid(lambda ts, j=j: W.Q_inv(np.atleast_1d(ts)) * nulls.psi.values(ts)[:, j], W.Q1_inv @ Spsi[:, j]) for j in range(nulls.psi.k)]
        )
        coef = np.linalg.solve(M, resid(g, e))

    def direction(ts):
        ts = np.atleast_1d(ts)
        out = g(ts)
        if nulls.psi.k:
            out = out - W.Q_inv(ts) * (nulls.psi.values(ts) @ coef)
        return out

    evec = e - W.Q1_inv @ (Spsi @ coef)
    unit = OrderNElement(as_function(lambda ts: direction(ts) + W.f0(ts), ()), evec + W.alpha0)
    scale = np.sqrt(ordern_g_form(W, unit, grid))
    c = rng.random() / scale if scale > 0 else 0.0
    F = OrderNElement(as_function(lambda ts: c * direction(ts) + W.f0(ts), ()), c * evec + W.alpha0)
    F.g_form = ordern_g_form(W, F, grid)
    return F


def ordern_random_noise(rng: np.random.Generator, solution: OrderNSolution, directions: int = 3) -> list:
    """Independent admissible noise directions in the observation space, total budget r <= 1."""
    obs, grid, u = solution.obs, solution.grid, solution.u_hat
    budget = rng.dirichlet(np.ones(directions)) * rng.random()
    out = []
    for b in budget:
        if obs.kind == "K":
            xi = rng.standard_normal(np.shape(u))
            resp = obs.inner(xi, u)
            Qxi = (obs.Q0 @ xi.reshape(obs.Q0.shape[0], -1, 1))[:, :, 0].reshape(np.shape(u))
            cons = obs.inner(xi, Qxi)
        else:
            prof = _smooth_profile(rng, grid.end - grid.start, 1)
            fn = lambda ts, prof=prof: prof(np.atleast_1d(ts) - grid.start)[:, 0]  # noqa: E731
            resp = obs.pair(grid, fn, u)
            cons = sum(
                grid.simpson_weights(k) @ (obs.q0(grid.nodes(k)) * fn(grid.nodes(k)) ** 2) for k in range(grid.K) if u[k] is not None
            )
        c = np.sqrt(b / cons) if cons > 0 else 0.0
        out.append(NoiseDirection(float(resp * c), float(cons * c * c)))
    return out


def ordern_guarantee_check(prob, solution: OrderNSolution, W: OrderNWeights, l0, lvec=None, draws: int = 200, samples: int = 2000, seed: int = 0) -> GuaranteeReport:
    mse, se, gf, nb = (np.zeros(draws) for _ in range(4))
    for i in range(draws):
        rng = sample_rng(seed, 1_000_000 + i)
        F = ordern_random_F(rng, prob, W, solution.grid)
        noises = ordern_random_noise(rng, solution)
        res = ordern_monte_carlo(prob, solution, F, noises, samples, seed + 7919 * (i + 1), l0, lvec)
        mse[i], se[i], gf[i] = res.mse, res.stderr, F.g_form
        nb[i] = sum(nd.constraint for nd in noises)
    return GuaranteeReport(draws, float(np.max(mse - (solution.sigma2 + 3.0 * se))), mse, se, gf, nb)


# ------------------------------------------------------------ point mode


def point_random_noise(rng: np.random.Generator, solution: PointMinimaxSolution, obsP: PointObservationSet, directions: int = 3) -> list:
    budget = rng.dirichlet(np.ones(directions)) * rng.random()
    out = []
    for b in budget:
        xs = [rng.standard_normal(len(u)) for u in solution.u_hat]
        resp = sum(float(u @ x) for u, x in zip(solution.u_hat, xs))
        cons = sum(float(x @ W @ x) for x, W in zip(xs, obsP.weights))
        c = np.sqrt(b / cons) if cons > 0 else 0.0
        out.append(NoiseDirection(resp * c, cons * c * c))
    return out


def point_guarantee_check(spec, solution: PointMinimaxSolution, obsP: PointObservationSet, G: EllipsoidG, draws: int = 200, samples: int = 2000, seed: int = 0) -> GuaranteeReport:
    mse, se, gf, nb = (np.zeros(draws) for _ in range(4))
    for i in range(draws):
        rng = sample_rng(seed, 1_000_000 + i)
        F = random_admissible_F(rng, G, spec.T, solution.grid)
        noises = point_random_noise(rng, solution, obsP)
        res = monte_carlo(point_deterministic_error(spec, solution, obsP, F), noises, samples, seed + 7919 * (i + 1))
        mse[i], se[i], gf[i] = res.mse, res.stderr, F.g_form
        nb[i] = sum(nd.constraint for nd in noises)
    return GuaranteeReport(draws, float(np.max(mse - (solution.sigma2 + 3.0 * se))), mse, se, gf, nb)


# ------------------------------------------------------------ summaries


def saturation_summary(sigma2: float, res: MonteCarloResult) -> dict:
    return {
        "sigma2": sigma2,
        "mse": res.mse,
        "stderr": res.stderr,
        "within_3se": abs(res.mse - sigma2) <= 3.0 * res.stderr,
        "ratio": res.mse / sigma2 if sigma2 > 0 else float("nan"),
        "deterministic": res.deterministic,
        "constraint_mean": res.constraint_mean,
    }


def continuous_saturation(
    spec: BvpSpec,
    alg: Optional[BoundaryAlgebra],
    G: EllipsoidG,
    obs: IntervalObservation,
    solution: MinimaxSolution,
    samples: int = 10_000,
    seed: int = 0,
) -> tuple:
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    F = worst_case_F(solution, alg, G)
    noise = worst_case_noise(solution, obs)
    res = monte_carlo_error(spec, solution, obs, F, [noise], samples, seed)
    return F, noise, res
