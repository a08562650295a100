"""Order-n scalar boundary value problems and their minimax estimators.

``L phi = sum_k p_k(t) phi^{(n-k)}`` on [a, b] with m boundary forms acting
on the 2n jet values ``(phi(a), ..., phi^{(n-1)}(a), phi(b), ..., phi^{(n-1)}(b))``.
The formal adjoint is ``L+ psi = sum_k (-1)^{n-k} (p_k psi)^{(n-k)}`` and the
adjoint forms come from the Green identity

    int (L phi) psi + B(phi).S+(psi) = S(phi).B+(psi) + int phi (L+ psi)

with the boundary concomitant evaluated numerically on a Hermite jet basis.
Coupled estimator and filter systems are solved by multiple shooting on the
companion first-order systems. Null-space corrections enter as bordering
unknowns: the z equation gets ``sum nu_i phi_i`` and the p equation
``sum nu'_i psi_i``; the orthogonality rows force both to vanish in the limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from numpy.polynomial import Polynomial as NpPoly
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from .errors import (
    CoefficientRoughness,
    InjectivityFailure,
    NegativeVariance,
    SingularCompletion,
)
from .functions import Constant, MatrixFunction, Polynomial, _FiniteDifference, as_function
from .linear_bvp import Border, Grid, MultipointProblem, PiecewiseTrajectory, rk4_propagate, solve_multipoint

RANK_TOL = 1e-10
BASIS_STEPS = 2048
GL_PANELS = 32
GL_POINTS = 12
GREEN_TOL = 1e-7
NULL_TOL = 1e-8
NOMINAL_TOL = 1e-6
DEFAULT_NODES = 513


# ------------------------------------------------------------------ spec


def _scalar(value) -> MatrixFunction:
    F = as_function(value, () if callable(value) and not isinstance(value, MatrixFunction) else None)
    if F.shape != ():
        raise ValueError("order-n coefficients and data must be scalar functions")
    return F


def _derivative(F: MatrixFunction, order: int) -> MatrixFunction:
    if order == 0:
        return F
    if isinstance(F, (Constant, Polynomial)):
        return F.derivative(order)
    step = 1e-3 if order <= 2 else 1e-2
    return _FiniteDifference(F, order, step)


def _check_smooth(F: MatrixFunction, order: int, ts: np.ndarray, what: str):
    """Finite-difference derivatives must agree under step halving."""
    if order == 0 or isinstance(F, (Constant, Polynomial)):
        return
    step = 1e-3 if order <= 2 else 1e-2
    d1 = _FiniteDifference(F, order, step)(ts)
    d2 = _FiniteDifference(F, order, step / 2)(ts)
    scale = 1.0 + float(np.max(np.abs(d2)))
    if float(np.max(np.abs(d1 - d2))) > 1e-4 * scale:
        raise CoefficientRoughness(f"derivative of order {order} of {what} is not resolved")


class OrderNSpec:
    """Scalar order-n operator with m boundary forms and right-hand data."""

    def __init__(self, n: int, interval, coefficients: Sequence, forms, f=0.0, alpha=None):
        self.n = int(n)
        if self.n < 1:
            raise ValueError("order must be at least 1")
        a, b = (float(v) for v in interval)
        if not b > a:
            raise ValueError("interval must satisfy a < b")
        self.a, self.b = a, b
        if len(coefficients) != self.n + 1:
            raise ValueError(f"expected {self.n + 1} coefficients p_0..p_n, got {len(coefficients)}")
        self.coefficients = tuple(_scalar(c) for c in coefficients)
        forms = np.atleast_2d(np.asarray(forms, dtype=float))
        if forms.shape[1] != 2 * self.n:
            raise ValueError(f"boundary form rows need {2 * self.n} jet columns")
        if np.linalg.matrix_rank(forms, tol=RANK_TOL * max(1.0, np.abs(forms).max())) != forms.shape[0]:
            raise ValueError("boundary forms must be linearly independent")
        self.forms = forms
        self.f = _scalar(f)
        self.alpha = np.zeros(self.m) if alpha is None else np.asarray(alpha, dtype=float).reshape(self.m)
        ts = np.linspace(a, b, 1025)
        p0 = self.coefficients[0](ts)
        if np.min(np.abs(p0)) <= 1e-12 * max(1.0, np.max(np.abs(p0))) or np.min(p0) * np.max(p0) <= 0:
            raise ValueError("leading coefficient p_0 must not vanish on [a, b]")
        # derivatives needed by the adjoint expansion: p_k up to order n - k
        inner = ts[(ts > a + 0.02 * (b - a)) & (ts < b - 0.02 * (b - a))]
        self._derivs = []
        for k, p in enumerate(self.coefficients):
            _check_smooth(p, self.n - k, inner, f"p_{k}")
            self._derivs.append([_derivative(p, i) for i in range(self.n - k + 1)])

    @property
    def m(self) -> int:
        return self.forms.shape[0]

    @property
    def length(self) -> float:
        return self.b - self.a

    def primal_coefficients(self, ts) -> np.ndarray:
        """(len, n+1): coefficient of phi^{(j)} in L phi, j = 0..n."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty((len(ts), self.n + 1))
        for k, p in enumerate(self.coefficients):
            out[:, self.n - k] = p(ts)
        return out

    def adjoint_coefficients(self, ts) -> np.ndarray:
        """(len, n+1): coefficient of psi^{(j)} in L+ psi (Leibniz expansion)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = self.n
        out = np.zeros((len(ts), n + 1))
        for k in range(n + 1):
            order = n - k
            sign = (-1.0) ** order
            for j in range(order + 1):
                out[:, j] += sign * comb(order, j) * self._derivs[k][order - j](ts)
        return out

    def apply(self, jets_full: np.ndarray, ts) -> np.ndarray:
        """L phi from derivative samples (len, n+1)."""
        return np.sum(self.primal_coefficients(ts) * jets_full, axis=1)

    def apply_adjoint(self, jets_full: np.ndarray, ts) -> np.ndarray:
        return np.sum(self.adjoint_coefficients(ts) * jets_full, axis=1)

    def with_forms(self, forms, alpha=None) -> "OrderNSpec":
        return OrderNSpec(self.n, (self.a, self.b), self.coefficients, forms, self.f, alpha)


def companion(coeffs: np.ndarray) -> np.ndarray:
    """Companion drift (len, n, n) of ``sum_j c_j y^{(j)} = 0``."""
    n = coeffs.shape[1] - 1
    M = np.zeros((coeffs.shape[0], n, n))
    for i in range(n - 1):
        M[:, i, i + 1] = 1.0
    M[:, n - 1, :] = -coeffs[:, :n] / coeffs[:, n : n + 1]
    return M


# --------------------------------------------------------- quadrature


def _gauss(a: float, b: float, panels: int = GL_PANELS, points: int = GL_POINTS):
    x, w = leggauss(points)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    ts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    ws = (half[:, None] * w[None, :]).ravel()
    return ts, ws


def hermite_jet_basis(n: int, a: float, b: float):
    """2n polynomials of degree 2n-1 with unit jets at one end, zero at the other.

    Returned as numpy Polynomials in t; index I < n is the I-th jet at a,
    index n + I the I-th jet at b.
    """
    L = b - a
    deg = 2 * n - 1
    rows = []
    for s in (0.0, 1.0):
        for i in range(n):
            row = [factorial(k) / factorial(k - i) * s ** (k - i) if k >= i else 0.0 for k in range(deg + 1)]
            rows.append(row)
    V = np.array(rows)
    scale = np.concatenate([L ** np.arange(n), L ** np.arange(n)])
    coeffs = np.linalg.solve(V, np.diag(scale))
    out = []
    for I in range(2 * n):
        ps = NpPoly(coeffs[:, I])
        # substitute s = (t - a) / L
        out.append(ps(NpPoly([-a / L, 1.0 / L])))
    return out


def _poly_jets(P: NpPoly, ts: np.ndarray, upto: int) -> np.ndarray:
    return np.stack([P.deriv(j)(ts) if j else P(ts) for j in range(upto + 1)], axis=1)


def end_jets_of(P: NpPoly, n: int, a: float, b: float) -> np.ndarray:
    return np.concatenate([_poly_jets(P, np.array([a]), n - 1)[0], _poly_jets(P, np.array([b]), n - 1)[0]])


def green_pairing(spec: OrderNSpec, phi: NpPoly, psi: NpPoly) -> tuple:
    """(int (L phi) psi, int phi (L+ psi)) by composite Gauss quadrature."""
    ts, ws = _gauss(spec.a, spec.b)
    Lphi = spec.apply(_poly_jets(phi, ts, spec.n), ts)
    Lpsi = spec.apply_adjoint(_poly_jets(psi, ts, spec.n), ts)
    return float(ws @ (Lphi * psi(ts))), float(ws @ (phi(ts) * Lpsi))


# ------------------------------------------------------ adjoint structure


@dataclass
class AdjointStructure:
    S: np.ndarray  # (2n - m, 2n) completion rows
    Bplus: np.ndarray  # (2n - m, 2n) adjoint forms on psi jets
    Splus: np.ndarray  # (m, 2n)
    Pc: np.ndarray  # concomitant: jets(phi)^T Pc jets(psi)
    green_residual: float = 0.0

    def S_plus(self, jets: np.ndarray) -> np.ndarray:
        return self.Splus @ jets

    def B_plus(self, jets: np.ndarray) -> np.ndarray:
        return self.Bplus @ jets


def complete_forms(forms: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of the form rows."""
    S = scipy.linalg.null_space(forms, rcond=RANK_TOL).T
    if S.shape[0] != forms.shape[1] - forms.shape[0]:
        raise SingularCompletion("boundary forms do not have full row rank")
    return S


def concomitant_matrix(spec: OrderNSpec) -> np.ndarray:
    basis = hermite_jet_basis(spec.n, spec.a, spec.b)
    N2 = 2 * spec.n
    ts, ws = _gauss(spec.a, spec.b)
    Lphi = np.stack([spec.apply(_poly_jets(P, ts, spec.n), ts) for P in basis])
    Lpsi = np.stack([spec.apply_adjoint(_poly_jets(P, ts, spec.n), ts) for P in basis])
    vals = np.stack([P(ts) for P in basis])
    Pc = (Lphi * ws) @ vals.T - (vals * ws) @ Lpsi.T
    return Pc.reshape(N2, N2)


def build_adjoint_structure(spec: OrderNSpec, completion: Optional[np.ndarray] = None, pairs: int = 50, seed: int = 0):
    S = complete_forms(spec.forms) if completion is None else np.atleast_2d(np.asarray(completion, dtype=float))
    M = np.vstack([spec.forms, S])
    if M.shape[0] != M.shape[1] or np.linalg.matrix_rank(M, tol=RANK_TOL * np.abs(M).max()) != M.shape[0]:
        raise SingularCompletion("forms and completion do not span the jet space")
    Pc = concomitant_matrix(spec)
    m = spec.m
    D = np.concatenate([-np.ones(m), np.ones(M.shape[0] - m)])
    Nrows = D[:, None] * np.linalg.solve(M.T, Pc)
    st = AdjointStructure(S=S, Bplus=Nrows[m:], Splus=Nrows[:m], Pc=Pc)
    st.green_residual = green_residual(spec, st, pairs=pairs, seed=seed)
    if st.green_residual > GREEN_TOL:
        raise SingularCompletion(f"Green identity residual {st.green_residual:.2e} exceeds {GREEN_TOL:g}")
    return st


def random_smooth_polynomial(rng: np.random.Generator, spec: OrderNSpec, degree: Optional[int] = None) -> NpPoly:
    degree = degree or 2 * spec.n + 3
    c = rng.standard_normal(degree + 1) / np.arange(1, degree + 2)
    return NpPoly(c)(NpPoly([-spec.a / spec.length, 1.0 / spec.length]))


def green_residual(spec: OrderNSpec, st: AdjointStructure, pairs: int = 50, seed: int = 0) -> float:
    """Largest scaled residual of the Green identity over random polynomial pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = spec.n
    for _ in range(pairs):
        phi = random_smooth_polynomial(rng, spec)
        psi = random_smooth_polynomial(rng, spec)
        ip, pi = green_pairing(spec, phi, psi)
        jp = end_jets_of(phi, n, spec.a, spec.b)
        jq = end_jets_of(psi, n, spec.a, spec.b)
        lhs = ip + (spec.forms @ jp) @ (st.Splus @ jq)
        rhs = (st.S @ jp) @ (st.Bplus @ jq) + pi
        scale = max(1.0, abs(ip), abs(pi))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


# ------------------------------------------------------------ null spaces


class JetBasis:
    """Solutions of a companion system tabulated on a dense grid."""

    def __init__(self, ts: np.ndarray, jets: np.ndarray):
        self.ts = ts  # (S+1,)
        self.jets = jets  # (S+1, n, k)
        self.k = jets.shape[2]
        self._cs = CubicSpline(ts, jets, axis=0) if self.k else None

    def values(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if not self.k:
            return np.zeros((len(ts), 0))
        return self._cs(ts)[:, 0, :]

    def jets_at(self, ts) -> np.ndarray:
        return self._cs(np.atleast_1d(np.asarray(ts, dtype=float)))

    def end_jets(self) -> np.ndarray:
        """(2n, k): jets at a stacked over jets at b."""
        return np.vstack([self.jets[0], self.jets[-1]])

    def transformed(self, T: np.ndarray) -> "JetBasis":
        return JetBasis(self.ts, self.jets @ T)


@dataclass
class NullSpaces:
    r: int
    phi: JetBasis  # basis of N(A_B), n - r functions
    psi: JetBasis  # basis of the adjoint null space, m - r functions
    adjoint_rank: int
    residuals: dict = field(default_factory=dict)

    @property
    def dim_primal(self) -> int:
        return self.phi.k

    @property
    def dim_adjoint(self) -> int:
        return self.psi.k

    def transformed(self, Tphi: np.ndarray, Tpsi: np.ndarray) -> "NullSpaces":
        return NullSpaces(self.r, self.phi.transformed(Tphi), self.psi.transformed(Tpsi), self.adjoint_rank, self.residuals)


def fundamental_table(spec: OrderNSpec, adjoint: bool, steps: int = BASIS_STEPS):
    ts_half = np.linspace(spec.a, spec.b, 2 * steps + 1)
    c = spec.adjoint_coefficients(ts_half) if adjoint else spec.primal_coefficients(ts_half)
    Y = rk4_propagate(spec.length / steps, companion(c), np.eye(spec.n))
    return ts_half[::2], Y


def _null_vectors(R: np.ndarray):
    if R.size == 0:
        return 0, np.eye(R.shape[1])
    U, s, Vt = np.linalg.svd(R)
    rank = int(np.sum(s > RANK_TOL * max(s[0], 1e-300))) if s.size and s[0] > 0 else 0
    return rank, Vt[rank:].T


def _orthonormalize(ts: np.ndarray, jets: np.ndarray) -> np.ndarray:
    if jets.shape[2] == 0:
        return jets
    h = ts[1] - ts[0]
    w = np.ones(len(ts))
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= h / 3.0
    v = jets[:, 0, :]
    G = (v * w[:, None]).T @ v
    Lc = np.linalg.cholesky(G)
    T = np.linalg.inv(Lc).T
    # deterministic sign: first nonzero jet at a positive
    out = jets @ T
    for j in range(out.shape[2]):
        lead = out[0, :, j]
        idx = int(np.argmax(np.abs(lead) > 1e-8 * max(1e-300, np.abs(lead).max()))) if np.any(lead) else 0
        if lead[idx] < 0:
            out[:, :, j] *= -1.0
    return out


def _operator_residual(spec: OrderNSpec, ts, jets, adjoint: bool) -> float:
    if jets.shape[2] == 0:
        return 0.0
    n = spec.n
    top = CubicSpline(ts, jets[:, n - 1, :], axis=0).derivative()(ts)
    full = np.concatenate([jets, top[:, None, :]], axis=1)
    c = spec.adjoint_coefficients(ts) if adjoint else spec.primal_coefficients(ts)
    res = np.einsum("tj,tjk->tk", c, full)
    sl = slice(4, -4)  # spline derivative is one-sided at the ends
    scale = max(1.0, float(np.max(np.abs(c))) * float(np.max(np.abs(jets))))
    return float(np.max(np.abs(res[sl]))) / scale


def null_space_bases(spec: OrderNSpec, st: AdjointStructure, steps: int = BASIS_STEPS) -> NullSpaces:
    n = spec.n
    ts, Y = fundamental_table(spec, adjoint=False, steps=steps)
    Bf = spec.forms[:, :n] + spec.forms[:, n:] @ Y[-1]
    r, V = _null_vectors(Bf)
    phi_jets = _orthonormalize(ts, Y @ V)
    tsa, Ya = fundamental_table(spec, adjoint=True, steps=steps)
    Ba = st.Bplus[:, :n] + st.Bplus[:, n:] @ Ya[-1]
    ra, W = _null_vectors(Ba)
    psi_jets = _orthonormalize(tsa, Ya @ W)
    phi, psi = JetBasis(ts, phi_jets), JetBasis(tsa, psi_jets)
    res = {
        "phi_boundary": float(np.max(np.abs(spec.forms @ phi.end_jets()))) if phi.k else 0.0,
        "psi_boundary": float(np.max(np.abs(st.Bplus @ psi.end_jets()))) if psi.k else 0.0,
        "phi_operator": _operator_residual(spec, ts, phi_jets, adjoint=False),
        "psi_operator": _operator_residual(spec, tsa, psi_jets, adjoint=True),
        "index_mismatch": (n - ra) - (spec.m - r),
    }
    return NullSpaces(r, phi, psi, ra, res)


def solvability_residual(spec: OrderNSpec, st: AdjointStructure, nulls: NullSpaces, f=None, alpha=None) -> np.ndarray:
    """Component i: int f psi_i + sum_j alpha_j S+_j(psi_i)."""
    f = spec.f if f is None else _scalar(f)
    alpha = spec.alpha if alpha is None else np.asarray(alpha, dtype=float)
    if nulls.psi.k == 0:
        return np.zeros(0)
    ts, ws = _gauss(spec.a, spec.b)
    integral = (ws * f(ts)) @ nulls.psi.values(ts)
    return integral + alpha @ (st.Splus @ nulls.psi.end_jets())


@dataclass
class OrderNProblem:
    """A spec with its adjoint structure and null spaces, built once."""

    spec: OrderNSpec
    structure: AdjointStructure
    nulls: NullSpaces

    @classmethod
    def build(cls, spec: OrderNSpec, completion=None) -> "OrderNProblem":
        st = build_adjoint_structure(spec, completion)
        return cls(spec, st, null_space_bases(spec, st))


# ---------------------------------------------------------- observations


def _simpson_nodes(grid: Grid):
    """All grid nodes (breakpoints repeated per interval) and Simpson weights."""
    return [(grid.nodes(k), grid.simpson_weights(k)) for k in range(grid.K)]


class WindowObservation:
    """``C phi = h(t) phi(t)`` on a window [alpha, beta]; H0 = L2(window).

    The weight q0(t) > 0 plays the role of Q0; realized on the solve grid by
    Simpson weights, so H0 is a weighted Euclidean space over grid nodes.
    """

    kind = "M"

    def __init__(self, window, h=1.0, q0=1.0):
        self.alpha, self.beta = (float(v) for v in window)
        if not self.beta > self.alpha:
            raise ValueError("observation window must have positive length")
        self.h = _scalar(h)
        self.q0 = _scalar(q0)
        self.dim_kernel = 0

    @property
    def breakpoints(self):
        return [self.alpha, self.beta]

    def active(self, grid: Grid, k: int) -> bool:
        mid = 0.5 * (grid.breakpoints[k] + grid.breakpoints[k + 1])
        return self.alpha <= mid <= self.beta

    def coupling(self, grid: Grid, k: int, ts) -> np.ndarray:
        """Local part of C* J Q0 C: h^2 q0 on the window."""
        if not self.active(grid, k):
            return np.zeros(len(ts))
        return self.h(ts) ** 2 * self.q0(ts)

    def adjoint_data(self, y) -> Callable:
        """(k, ts) -> C* J Q0 y."""
        yf = _scalar(y)
        return lambda grid, k, ts: (self.h(ts) * self.q0(ts) * yf(ts)) if self.active(grid, k) else np.zeros(len(ts))

    def u_hat(self, grid: Grid, p: PiecewiseTrajectory) -> list:
        """Q0 C p on the window nodes (one array per active interval)."""
        return [self.q0(grid.nodes(k)) * self.h(grid.nodes(k)) * p.values[k][:, 0] if self.active(grid, k) else None for k in range(grid.K)]

    def pair(self, grid: Grid, y, u: list) -> float:
        """(y, u)_H0."""
        yf = _scalar(y)
        return float(sum(grid.simpson_weights(k) @ (yf(grid.nodes(k)) * u[k]) for k in range(grid.K) if u[k] is not None))

    def noise_form(self, grid: Grid, u: list) -> float:
        """(Q0^{-1} u, u)_H0."""
        return float(sum(grid.simpson_weights(k) @ (u[k] ** 2 / self.q0(grid.nodes(k))) for k in range(grid.K) if u[k] is not None))

    def gram(self, grid: Grid, basis: JetBasis) -> np.ndarray:
        G = np.zeros((basis.k, basis.k))
        for k in range(grid.K):
            if self.active(grid, k):
                ts = grid.nodes(k)
                v = basis.values(ts) * self.h(ts)[:, None]
                G += (v * grid.simpson_weights(k)[:, None]).T @ v
        return G


class KernelObservation:
    """``(C phi)_{k,j} = int K_j(t'_k, xi) phi(xi) dxi`` at nodes t'_k.

    H0 = R^{M x N} with inner product ``sum_k w_k u_k . v_k``; Q0 is an
    N x N SPD matrix per node.
    """

    kind = "K"

    def __init__(self, kernel: Callable, t_nodes, weights=None, Q0=None, N: Optional[int] = None):
        self.t_nodes = np.asarray(t_nodes, dtype=float)
        M = len(self.t_nodes)
        self._kernel = kernel  # xi array -> (len(xi), M, N)
        probe = np.asarray(kernel(np.array([self.t_nodes.mean()])), dtype=float)
        self.N = probe.shape[2] if N is None else int(N)
        if weights is None:
            weights = _trapezoid(self.t_nodes) if M > 1 else np.ones(1)
        self.weights = np.asarray(weights, dtype=float)
        if Q0 is None:
            Q0 = np.broadcast_to(np.eye(self.N), (M, self.N, self.N))
        Q0 = np.asarray(Q0, dtype=float)
        if Q0.ndim == 0:
            Q0 = Q0 * np.broadcast_to(np.eye(self.N), (M, self.N, self.N))
        elif Q0.ndim == 2:
            Q0 = np.broadcast_to(Q0, (M, self.N, self.N))
        self.Q0 = np.array(Q0)
        for q in self.Q0:
            if np.any(np.linalg.eigvalsh(0.5 * (q + q.T)) <= 0):
                raise ValueError("Q0 must be SPD at every observation node")
        self.dim_kernel = M * self.N
        self.breakpoints = []

    @property
    def M(self) -> int:
        return len(self.t_nodes)

    def K(self, xi) -> np.ndarray:
        """(len(xi), M, N) kernel values K_j(t'_k, xi)."""
        return np.asarray(self._kernel(np.atleast_1d(np.asarray(xi, dtype=float))), dtype=float)

    def coupling(self, grid: Grid, k: int, ts) -> np.ndarray:
        return np.zeros(len(ts))

    def adjoint_columns(self, xi) -> np.ndarray:
        """(len, M*N): column (k, j) is C* J e_{k,j} = w_k K_j(t'_k, .)."""
        Kv = self.K(xi) * self.weights[None, :, None]
        return Kv.reshape(len(np.atleast_1d(xi)), -1)

    def apply(self, grid: Grid, values: list) -> np.ndarray:
        """C v for node samples of v on the grid; returns (M, N)."""
        out = np.zeros((self.M, self.N))
        for k in range(grid.K):
            ts = grid.nodes(k)
            out += np.einsum("t,tkj->kj", grid.simpson_weights(k) * values[k], self.K(ts))
        return out

    def adjoint(self, w: np.ndarray) -> Callable:
        w = np.asarray(w, dtype=float).reshape(-1)
        return lambda xi: self.adjoint_columns(xi) @ w

    def inner(self, u, v) -> float:
        u = np.asarray(u, dtype=float).reshape(self.M, self.N)
        v = np.asarray(v, dtype=float).reshape(self.M, self.N)
        return float(self.weights @ np.sum(u * v, axis=1))

    def adjoint_data(self, y) -> Callable:
        y = np.asarray(y, dtype=float).reshape(self.M, self.N)
        Qy = np.einsum("kij,kj->ki", self.Q0, y).reshape(-1)
        return lambda grid, k, ts: self.adjoint_columns(ts) @ Qy

    def pair(self, grid: Grid, y, u) -> float:
        return self.inner(y, u)

    def noise_form(self, grid: Grid, u) -> float:
        u = np.asarray(u, dtype=float).reshape(self.M, self.N)
        Qinv_u = np.stack([np.linalg.solve(q, x) for q, x in zip(self.Q0, u)])
        return self.inner(Qinv_u, u)

    def gram(self, grid: Grid, basis: JetBasis) -> np.ndarray:
        cols = [self.apply(grid, [basis.values(grid.nodes(k))[:, i] for k in range(grid.K)]) for i in range(basis.k)]
        return np.array([[self.inner(a, b) for b in cols] for a in cols]).reshape(basis.k, basis.k)

    def composite_kernel(self, t, xi) -> np.ndarray:
        """K~(t, xi) = sum_k w_k K(t'_k, t)^T Q0_k K(t'_k, xi)."""
        Kt, Kx = self.K(t), self.K(xi)
        return np.einsum("k,akj,kji,bki->ab", self.weights, Kt, self.Q0, Kx)


def _trapezoid(ts: np.ndarray) -> np.ndarray:
    w = np.zeros(len(ts))
    d = np.diff(ts)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def kernel_observation(kernels, t_nodes, Q0=None, weights=None, xi_nodes=None) -> KernelObservation:
    """Kernel stack from callables ``K_j(t', xi)`` or tables over (t_nodes, xi_nodes).

    Tables have shape (N, M, P) for M observation nodes and P xi nodes and
    are interpolated along xi by cubic splines.
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    if callable(kernels) or (isinstance(kernels, (list, tuple)) and all(callable(k) for k in kernels)):
        ks = [kernels] if callable(kernels) else list(kernels)

        def kernel(xi):
            return np.stack([np.asarray(Kj(t_nodes[None, :], xi[:, None]), dtype=float) * np.ones((len(xi), len(t_nodes))) for Kj in ks], axis=2)

        return KernelObservation(kernel, t_nodes, weights, Q0, N=len(ks))
    tables = np.asarray(kernels, dtype=float)
    if tables.ndim == 2:
        tables = tables[None]
    if xi_nodes is None or tables.shape[1] != len(t_nodes) or tables.shape[2] != len(xi_nodes):
        raise ValueError("kernel tables must have shape (N, len(t_nodes), len(xi_nodes))")
    if not np.all(np.isfinite(tables)):
        raise ValueError("kernel tables must be finite")
    cs = CubicSpline(np.asarray(xi_nodes, dtype=float), np.moveaxis(tables, 2, 0), axis=0)
    return KernelObservation(lambda xi: np.moveaxis(cs(xi), 1, 2), t_nodes, weights, Q0, N=tables.shape[0])


def adjoint_identity_residual(obs: KernelObservation, grid: Grid, v: Callable, w) -> float:
    """|<C v, w>_H0 - int v C* w| scaled."""
    vals = [np.asarray(v(grid.nodes(k)), dtype=float) for k in range(grid.K)]
    lhs = obs.inner(obs.apply(grid, vals), w)
    Cw = obs.adjoint(w)
    rhs = sum(float(grid.simpson_weights(k) @ (vals[k] * Cw(grid.nodes(k)))) for k in range(grid.K))
    return abs(lhs - rhs) / max(1.0, abs(lhs))


# ------------------------------------------------------------- weights


@dataclass
class OrderNWeights:
    """Ellipsoid weights around the nominal data: Q(t) > 0 and SPD Q1."""

    Q: MatrixFunction
    Q1: np.ndarray
    f0: MatrixFunction
    alpha0: np.ndarray

    def __init__(self, Q=1.0, Q1=None, f0=0.0, alpha0=None, m: Optional[int] = None):
        self.Q = _scalar(Q)
        if Q1 is None:
            Q1 = np.eye(m)
        self.Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
        if np.any(np.linalg.eigvalsh(0.5 * (self.Q1 + self.Q1.T)) <= 0):
            raise ValueError("Q1 must be SPD")
        self.f0 = _scalar(f0)
        mm = self.Q1.shape[0]
        self.alpha0 = np.zeros(mm) if alpha0 is None else np.asarray(alpha0, dtype=float).reshape(mm)

    @property
    def Q1_inv(self) -> np.ndarray:
        return np.linalg.inv(self.Q1)

    def Q_inv(self, ts) -> np.ndarray:
        q = self.Q(ts)
        if np.any(q <= 0):
            raise ValueError("Q must be positive")
        return 1.0 / q


# ---------------------------------------------------------- coupled solve


@dataclass
class CoupledSolution:
    grid: Grid
    z: PiecewiseTrajectory  # jets of the adjoint-side unknown
    p: PiecewiseTrajectory  # jets of the primal-side unknown
    lam: np.ndarray  # Q0 C p for kernel observations
    nu: np.ndarray
    nu_prime: np.ndarray
    condition: float


def ordern_grid(spec: OrderNSpec, obs=None, points=(), total_nodes: int = DEFAULT_NODES) -> Grid:
    pts = [spec.a, spec.b] + list(points) + (list(obs.breakpoints) if obs is not None else [])
    pts = [p for p in pts if spec.a <= p <= spec.b]
    return Grid.from_total(pts, total_nodes)


def _grid_integral(grid: Grid, fn) -> np.ndarray:
    """Simpson integral of ``fn(k, ts)`` over the grid."""
    return sum(np.tensordot(grid.simpson_weights(k), np.asarray(fn(k, grid.nodes(k)), dtype=float), axes=(0, 0)) for k in range(grid.K))


def _coupled_solve(
    prob: OrderNProblem,
    obs,
    W: OrderNWeights,
    grid: Grid,
    z_forcing: Callable,
    p_forcing: Callable,
    bc_rhs: np.ndarray,
    psi_rhs: np.ndarray,
) -> CoupledSolution:
    """Solve the common coupled system

        L+ z = z_forcing - C*J Q0 C p + sum nu_i phi_i,   B+(z) = 0
        L p = Q^{-1} z + p_forcing + sum nu'_i psi_i,     B(p) - Q1^{-1} S+(z) = bc_rhs
        int Q^{-1} z psi_i + (Q1^{-1} S+(z), S+(psi_i)) = psi_rhs_i
        int (z_forcing - C*J Q0 C p) phi_i = 0

    Forcing callables take (grid, k, ts).
    """
    spec, st, nulls = prob.spec, prob.structure, prob.nulls
    n, m = spec.n, spec.m
    d = 2 * n
    kphi, kpsi, kl = nulls.phi.k, nulls.psi.k, obs.dim_kernel
    q = kphi + kpsi + kl
    Q1inv = W.Q1_inv
    cache = {}

    def coeffs(ts):
        key = (ts[0], ts[-1], len(ts))
        if key not in cache:
            cache[key] = (spec.adjoint_coefficients(ts), spec.primal_coefficients(ts))
        return cache[key]

    def drift(k, ts):
        cz, cp = coeffs(ts)
        Mx = np.zeros((len(ts), d, d))
        Mx[:, :n, :n] = companion(cz)
        Mx[:, n:, n:] = companion(cp)
        Mx[:, n - 1, n] = -obs.coupling(grid, k, ts) / cz[:, n]
        Mx[:, d - 1, 0] = W.Q_inv(ts) / cp[:, n]
        return Mx

    def forcing(k, ts):
        cz, cp = coeffs(ts)
        g = np.zeros((len(ts), d))
        g[:, n - 1] = z_forcing(grid, k, ts) / cz[:, n]
        g[:, d - 1] = p_forcing(grid, k, ts) / cp[:, n]
        return g

    R0 = np.zeros((d, d))
    R1 = np.zeros((d, d))
    nb = 2 * n - m
    R0[:nb, :n] = st.Bplus[:, :n]
    R1[:nb, :n] = st.Bplus[:, n:]
    R0[nb:, n:] = spec.forms[:, :n]
    R1[nb:, n:] = spec.forms[:, n:]
    R0[nb:, :n] = -Q1inv @ st.Splus[:, :n]
    R1[nb:, :n] = -Q1inv @ st.Splus[:, n:]
    b = np.concatenate([np.zeros(nb), np.asarray(bc_rhs, dtype=float)])

    border = None
    if q:
        Spsi = st.Splus @ nulls.psi.end_jets() if kpsi else np.zeros((m, 0))

        def bforcing(k, ts):
            cz, cp = coeffs(ts)
            F = np.zeros((len(ts), d, q))
            if kphi:
                F[:, n - 1, :kphi] = nulls.phi.values(ts) / cz[:, n : n + 1]
            if kpsi:
                F[:, d - 1, kphi : kphi + kpsi] = nulls.psi.values(ts) / cp[:, n : n + 1]
            if kl:
                F[:, n - 1, kphi + kpsi :] = -obs.adjoint_columns(ts) / cz[:, n : n + 1]
            return F

        def bweights(k, ts):
            Wt = np.zeros((len(ts), q, d))
            if kphi:
                Wt[:, :kphi, n] = obs.coupling(grid, k, ts)[:, None] * nulls.phi.values(ts)
            if kpsi:
                Wt[:, kphi : kphi + kpsi, 0] = W.Q_inv(ts)[:, None] * nulls.psi.values(ts)
            if kl:
                Kv = obs.K(ts)  # (len, M, N)
                Wt[:, kphi + kpsi :, n] = -np.einsum("kij,tkj->tki", obs.Q0, Kv).reshape(len(ts), -1)
            return Wt

        E0 = np.zeros((q, d))
        E1 = np.zeros((q, d))
        if kpsi:
            E0[kphi : kphi + kpsi, :n] = Spsi.T @ Q1inv @ st.Splus[:, :n]
            E1[kphi : kphi + kpsi, :n] = Spsi.T @ Q1inv @ st.Splus[:, n:]
        V = np.zeros((q, q))
        w = np.zeros(q)
        if kl:
            V[kphi + kpsi :, kphi + kpsi :] = np.eye(kl)
            if kphi:
                V[:kphi, kphi + kpsi :] = _grid_integral(grid, lambda k, ts: nulls.phi.values(ts)[:, :, None] * obs.adjoint_columns(ts)[:, None, :])
        if kphi:
            w[:kphi] = _grid_integral(grid, lambda k, ts: nulls.phi.values(ts) * z_forcing(grid, k, ts)[:, None])
        if kpsi:
            w[kphi : kphi + kpsi] = psi_rhs
        border = Border(q=q, r=q, forcing=bforcing, weights=bweights, E0=E0, E1=E1, V=V, w=w)

    sol = solve_multipoint(
        MultipointProblem(grid=grid, dim=d, drift=drift, R0=R0, R1=R1, b=b, forcing=forcing, border=border)
    )
    lam = sol.lam[:, 0]
    return CoupledSolution(
        grid,
        sol.x.components(slice(0, n)),
        sol.x.components(slice(n, d)),
        lam[kphi + kpsi :],
        lam[:kphi],
        lam[kphi : kphi + kpsi],
        sol.condition,
    )


def _zero(grid, k, ts):
    return np.zeros(len(ts))


def _of_t(F: MatrixFunction) -> Callable:
    return lambda grid, k, ts: F(ts)


def _end_jets(traj: PiecewiseTrajectory) -> np.ndarray:
    return np.concatenate([traj.start_value(), traj.end_value()])


def _integral(traj: PiecewiseTrajectory, fn: Callable) -> float:
    """Simpson integral of traj_0(t) * fn(t)."""
    return float(traj.integral(lambda k, ts, v: v[:, 0] * fn(ts)))


def _check_preconditions(prob: OrderNProblem, obs, W: OrderNWeights, grid: Grid):
    spec, nulls = prob.spec, prob.nulls
    if W.Q1.shape != (spec.m, spec.m):
        raise ValueError(f"Q1 must be {spec.m} x {spec.m}")
    kphi = nulls.phi.k
    if kphi:
        if obs.dim_kernel and obs.dim_kernel <= kphi:
            raise InjectivityFailure("observation space dimension must exceed dim N(A_B)")
        G = obs.gram(grid, nulls.phi)
        ev = np.linalg.eigvalsh(0.5 * (G + G.T))
        if ev[0] <= RANK_TOL * max(1.0, ev[-1]):
            raise InjectivityFailure("observation operator is not injective on N(A_B)")
    res = solvability_residual(spec, prob.structure, nulls, W.f0, W.alpha0)
    if res.size and np.max(np.abs(res)) > NOMINAL_TOL:
        raise ValueError(f"nominal data violate the solvability condition (residual {np.max(np.abs(res)):.2e})")


def _u_hat(obs, grid, cs: CoupledSolution):
    if obs.kind == "K":
        return cs.lam.copy()
    return obs.u_hat(grid, cs.p)


def _constraint_residuals(prob, obs, W, grid, cs, z_forcing, psi_shift, Q1inv, l0=None):
    """Orthogonality residuals evaluated on the solution (Simpson)."""
    nulls, st = prob.nulls, prob.structure
    out = {}
    z = cs.z
    Sz = st.Splus @ _end_jets(z)
    if nulls.psi.k:
        Spsi = st.Splus @ nulls.psi.end_jets()
        vals = []
        for i in range(nulls.psi.k):
            def integrand(k, ts, v, i=i):
                base = v[:, 0] if l0 is None else v[:, 0] + l0(ts)
                return W.Q_inv(ts) * base * nulls.psi.values(ts)[:, i]
            vals.append(float(z.integral(integrand)) + (Q1inv @ (Sz + psi_shift)) @ Spsi[:, i])
        out["psi_orthogonality"] = float(np.max(np.abs(vals)))
    if nulls.phi.k:
        p = cs.p
        vals = []
        for i in range(nulls.phi.k):
            def g(k, ts, i=i):
                pv = p.values[k][:, 0]
                r = z_forcing(grid, k, ts) - obs.coupling(grid, k, ts) * pv
                if obs.kind == "K":
                    r = r - obs.adjoint_columns(ts) @ cs.lam
                return r * nulls.phi.values(ts)[:, i]
            vals.append(float(_grid_integral(grid, g)))
        out["phi_orthogonality"] = float(np.max(np.abs(vals)))
    out["nu"] = float(np.max(np.abs(cs.nu))) if cs.nu.size else 0.0
    out["nu_prime"] = float(np.max(np.abs(cs.nu_prime))) if cs.nu_prime.size else 0.0
    return out


# ------------------------------------------------------------ estimators


@dataclass
class OrderNSolution:
    grid: Grid
    z: PiecewiseTrajectory
    p: PiecewiseTrajectory
    u_hat: object  # per-interval node arrays (window) or H0 vector (kernel)
    c_hat: float
    sigma: float
    sigma2: float
    cost: float
    mode: str
    obs: object
    condition: float
    diagnostics: dict = field(default_factory=dict)

    def estimate(self, y) -> float:
        """(y, u_hat)_H0 + c_hat."""
        return self.obs.pair(self.grid, y, self.u_hat) + self.c_hat


def _sigma(sigma2: float, scale: float) -> float:
    if sigma2 < -1e-10 * max(1.0, scale):
        raise NegativeVariance(f"sigma^2 = {sigma2:.3e} is negative")
    return float(np.sqrt(max(sigma2, 0.0)))


def solve_functional_estimator(prob: OrderNProblem, l0, obs, W: OrderNWeights, grid: Optional[Grid] = None) -> OrderNSolution:
    """Minimax estimate of int l0 phi from y = C phi + eta."""
    spec, st = prob.spec, prob.structure
    grid = grid or ordern_grid(spec, obs)
    _check_preconditions(prob, obs, W, grid)
    l0f = _scalar(l0)
    cs = _coupled_solve(prob, obs, W, grid, _of_t(l0f), _zero, np.zeros(spec.m), np.zeros(prob.nulls.psi.k))
    Q1inv = W.Q1_inv
    z, p = cs.z, cs.p
    Sz = st.Splus @ _end_jets(z)
    u = _u_hat(obs, grid, cs)
    c_hat = _integral(z, W.f0) + Sz @ W.alpha0
    sigma2 = _integral(p, l0f)
    noise = obs.noise_form(grid, u)
    cost = float(z.integral(lambda k, ts, v: W.Q_inv(ts) * v[:, 0] ** 2)) + Sz @ Q1inv @ Sz + noise
    diag = _constraint_residuals(prob, obs, W, grid, cs, _of_t(l0f), np.zeros(spec.m), Q1inv)
    diag["duality_gap"] = abs(cost - sigma2)
    return OrderNSolution(grid, z, p, u, float(c_hat), _sigma(sigma2, cost), sigma2, cost, "functional", obs, cs.condition, diag)


def solve_rhs_estimator(prob: OrderNProblem, l0, lvec, obs, W: OrderNWeights, grid: Optional[Grid] = None) -> OrderNSolution:
    """Minimax estimate of int l0 f + sum l_j alpha_j from y = C phi + eta."""
    spec, st, nulls = prob.spec, prob.structure, prob.nulls
    grid = grid or ordern_grid(spec, obs)
    _check_preconditions(prob, obs, W, grid)
    l0f = _scalar(l0)
    lvec = np.zeros(spec.m) if lvec is None else np.asarray(lvec, dtype=float).reshape(spec.m)
    Q1inv = W.Q1_inv
    psi_rhs = np.zeros(nulls.psi.k)
    if nulls.psi.k:
        ts, ws = _gauss(spec.a, spec.b)
        psi_rhs = -((ws * W.Q_inv(ts) * l0f(ts)) @ nulls.psi.values(ts)) - (Q1inv @ lvec) @ (st.Splus @ nulls.psi.end_jets())
    p_forcing = lambda grid_, k, ts: W.Q_inv(ts) * l0f(ts)  # noqa: E731
    cs = _coupled_solve(prob, obs, W, grid, _zero, p_forcing, Q1inv @ lvec, psi_rhs)
    z, p = cs.z, cs.p
    Sz = st.Splus @ _end_jets(z)
    u = _u_hat(obs, grid, cs)
    c_hat = float(z.integral(lambda k, ts, v: (v[:, 0] + l0f(ts)) * W.f0(ts))) + (lvec + Sz) @ W.alpha0
    e = lvec + Sz
    sigma2 = float(z.integral(lambda k, ts, v: l0f(ts) * W.Q_inv(ts) * (l0f(ts) + v[:, 0]))) + lvec @ Q1inv @ e
    noise = obs.noise_form(grid, u)
    cost = float(z.integral(lambda k, ts, v: W.Q_inv(ts) * (l0f(ts) + v[:, 0]) ** 2)) + e @ Q1inv @ e + noise
    diag = _constraint_residuals(prob, obs, W, grid, cs, _zero, lvec, Q1inv, l0=l0f)
    diag["duality_gap"] = abs(cost - sigma2)
    sol = OrderNSolution(grid, z, p, u, float(c_hat), _sigma(sigma2, cost), sigma2, cost, "rhs", obs, cs.condition, diag)
    sol.diagnostics["P_hat_alpha"] = Q1inv @ e
    return sol


# --------------------------------------------------------------- filters


@dataclass
class OrderNFilter:
    grid: Grid
    p_hat: PiecewiseTrajectory
    phi_hat: PiecewiseTrajectory
    f_hat: MatrixFunction  # Q^{-1} p_hat + f0
    alpha_hat: np.ndarray
    condition: float
    diagnostics: dict = field(default_factory=dict)

    def functional(self, l0) -> float:
        return _integral(self.phi_hat, _scalar(l0))

    def rhs_functional(self, l0, lvec, W: OrderNWeights) -> float:
        l0f = _scalar(l0)
        fpart = float(self.p_hat.integral(lambda k, ts, v: l0f(ts) * (W.Q_inv(ts) * v[:, 0] + W.f0(ts))))
        return fpart + np.asarray(lvec, dtype=float) @ self.alpha_hat


def _node_function(traj: PiecewiseTrajectory) -> MatrixFunction:
    """Cubic spline through the first component of a continuous trajectory."""
    grid = traj.grid
    ts = np.concatenate([grid.nodes(k)[:-1] for k in range(grid.K)] + [[grid.end]])
    vs = np.concatenate([traj.values[k][:-1, 0] for k in range(grid.K)] + [[traj.end_value()[0]]])
    cs = CubicSpline(ts, vs)
    return as_function(lambda t: cs(np.atleast_1d(t)), ())


def solve_filter(prob: OrderNProblem, obs, W: OrderNWeights, y, grid: Grid) -> OrderNFilter:
    """(p_hat, phi_hat) from observed data; serves functionals of phi and of F."""
    st = prob.structure
    _check_preconditions(prob, obs, W, grid)
    cs = _coupled_solve(prob, obs, W, grid, obs.adjoint_data(y), _of_t(W.f0), W.alpha0, np.zeros(prob.nulls.psi.k))
    alpha_hat = W.Q1_inv @ (st.Splus @ _end_jets(cs.z)) + W.alpha0
    p_fn = _node_function(cs.z)
    f_hat = as_function(lambda t: W.Q_inv(np.atleast_1d(t)) * p_fn(t) + W.f0(t), ())
    diag = {
        "nu": float(np.max(np.abs(cs.nu))) if cs.nu.size else 0.0,
        "nu_prime": float(np.max(np.abs(cs.nu_prime))) if cs.nu_prime.size else 0.0,
    }
    return OrderNFilter(grid, cs.z, cs.p, f_hat, alpha_hat, cs.condition, diag)


def solve_functional_filter(prob: OrderNProblem, obs, W: OrderNWeights, y, l0, grid: Grid):
    filt = solve_filter(prob, obs, W, y, grid)
    return filt, filt.functional(l0)


def solve_rhs_filter(prob: OrderNProblem, obs, W: OrderNWeights, y, l0, lvec, grid: Grid):
    """Returns the filter with F_hat = (f_hat, alpha_hat) and l(F_hat)."""
    filt = solve_filter(prob, obs, W, y, grid)
    filt.diagnostics["solvability"] = solvability_residual(prob.spec, prob.structure, prob.nulls, filt.f_hat, filt.alpha_hat)
    return filt, filt.rhs_functional(l0, lvec, W)
