"""Brute-force finite-dimensional minimax oracle.

The forward problem is discretized directly (trapezoid collocation for
first-order systems, central differences for second-order scalar problems)
so that the state is an explicit linear image of the data vector F. The
estimation error for weights u is then ``(g - K^T u) . F - c`` plus noise,
its worst case over the discretized ellipsoid is a quadratic form in u,
and the optimal u solves one dense (possibly constrained) linear system.
None of the adjoint machinery used by the solvers is involved, so the
oracle is an independent second route to sigma.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InfeasibleU, SingularKKT, SingularSystem, TooLarge

MAX_CONTROLS = 4096


@dataclass
class OracleResult:
    sigma: float
    sigma2: float
    u: np.ndarray  # optimal weights, one row per observation node
    c: float  # optimal offset (nominal part of the error)
    condition: float
    min_eig: float
    nodes: Optional[np.ndarray] = None


@dataclass
class PrimalModel:
    """Discrete forward model ``M x = N F`` plus the functionals of interest.

    target: row acting on x (the estimated quantity is ``target @ x + tF @ F``).
    obs: rows acting on x, one per scalar observation weight.
    Winv: inverse ellipsoid weight on F (PSD; zero rows mean exact data).
    R: noise quadratic form on u.
    free: indices of F components that are unconstrained (unbounded).
    F0: nominal data vector.
    right_null, left_null: expected null dimensions of M (resonant problems).
    """

    M: object
    N: np.ndarray
    target: np.ndarray
    obs: np.ndarray
    Winv: np.ndarray
    R: np.ndarray
    F0: Optional[np.ndarray] = None
    free: Optional[np.ndarray] = None
    target_F: Optional[np.ndarray] = None
    right_null: int = 0
    left_null: int = 0
    nodes: Optional[np.ndarray] = None


def solve_primal_minimax(model: PrimalModel) -> OracleResult:
    nu = model.obs.shape[0]
    if nu > MAX_CONTROLS:
        raise TooLarge(f"{nu} control unknowns exceed the cap {MAX_CONTROLS}")
    rows = np.vstack([model.target[None, :], model.obs])  # acting on x
    N = np.asarray(model.N, dtype=float)
    eq_rows = []
    eq_rhs = []
    F_constraint = None
    if model.right_null == 0 and model.left_null == 0:
        Mt = sp.csc_matrix(model.M).T.tocsc()
        try:
            lu = spla.splu(Mt)
        except RuntimeError as exc:
            raise SingularSystem("discrete forward operator is singular") from exc
        X = lu.solve(np.ascontiguousarray(rows.T))
        if not np.all(np.isfinite(X)):
            raise SingularSystem("discrete forward operator is singular")
        GK = (N.T @ X).T  # (1 + nu, nF)
    else:
        Md = model.M.toarray() if sp.issparse(model.M) else np.asarray(model.M, dtype=float)
        U, s, Vt = np.linalg.svd(Md, full_matrices=True)
        ncol = Md.shape[1]
        rank = ncol - model.right_null
        Vr = Vt[rank:].T  # right null basis
        Ul = U[:, rank:]  # left null basis
        if Ul.shape[1] != model.left_null:
            raise SingularSystem("null-space counts inconsistent with the discrete operator")
        Mpinv = (Vt[:rank].T / s[:rank]) @ U[:, :rank].T
        GK = rows @ Mpinv @ N
        # free null coefficients: error must not depend on them
        RV = rows @ Vr  # (1 + nu, kr)
        eq_rows.append(RV[1:].T)
        eq_rhs.append(RV[0])
        if model.left_null:
            F_constraint = Ul.T @ N
    g = GK[0]
    if model.target_F is not None:
        g = g + model.target_F
    K = GK[1:]
    Winv = np.asarray(model.Winv, dtype=float)
    P = Winv
    if F_constraint is not None:
        CW = F_constraint @ Winv
        S = CW @ F_constraint.T
        P = Winv - CW.T @ np.linalg.solve(S, CW)
    if model.free is not None and len(model.free):
        fr = np.asarray(model.free)
        eq_rows.append(K[:, fr].T)
        eq_rhs.append(g[fr])
        P = P.copy()
        P[fr, :] = 0.0
        P[:, fr] = 0.0
    KP = K @ P
    Hq = KP @ K.T + model.R
    rhs = KP @ g
    ev = np.linalg.eigvalsh(0.5 * (Hq + Hq.T))
    min_eig = float(ev[0])
    if eq_rows:
        E = np.vstack(eq_rows)
        e = np.concatenate(eq_rhs)
        if E.shape[0]:
            # feasibility of E u = e
            u_ls, *_ = np.linalg.lstsq(E, e, rcond=None)
            if np.linalg.norm(E @ u_ls - e) > 1e-8 * max(1.0, np.linalg.norm(e)):
                raise InfeasibleU("oracle constraints on the weights are inconsistent")
            kkt = np.block([[Hq, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
            sol = _solve_sym(kkt, np.concatenate([rhs, e]))
            u = sol[:nu]
        else:
            u = _solve_sym(Hq, rhs)
    else:
        u = _solve_sym(Hq, rhs)
    v = g - K.T @ u
    sigma2 = float(v @ P @ v + u @ model.R @ u)
    c = float(v @ model.F0) if model.F0 is not None else 0.0
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
    return OracleResult(float(np.sqrt(max(sigma2, 0.0))), sigma2, u, c, cond, min_eig, model.nodes)


def _solve_sym(A, b):
    try:
        lu, piv = scipy.linalg.lu_factor(A)
    except Exception as exc:  # pragma: no cover
        raise SingularKKT(str(exc)) from exc
    x = scipy.linalg.lu_solve((lu, piv), b)
    if not np.all(np.isfinite(x)):
        raise SingularKKT("oracle KKT system is singular")
    return x


# ------------------------------------------------------------ helpers


def global_nodes(grid) -> np.ndarray:
    pts = [grid.nodes(0)]
    for k in range(1, grid.K):
        pts.append(grid.nodes(k)[1:])
    return np.concatenate(pts)


def trapezoid_weights(ts: np.ndarray) -> np.ndarray:
    h = np.diff(ts)
    w = np.zeros(len(ts))
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def window_weights(ts: np.ndarray, a: float, b: float) -> np.ndarray:
    """Trapezoid weights of the sub-interval [a, b] (nodes must include a, b)."""
    tol = 1e-12 * max(1.0, ts[-1] - ts[0])
    inside = (ts >= a - tol) & (ts <= b + tol)
    w = np.zeros(len(ts))
    idx = np.flatnonzero(inside)
    w[idx] = trapezoid_weights(ts[idx])
    return w


def node_index(ts: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(ts - t)))
    if abs(ts[i] - t) > 1e-10 * max(1.0, ts[-1] - ts[0]):
        raise SingularSystem(f"{t} is not an oracle node")
    return i


def trapezoid_first_order(ts, A_fn, B0, B1):
    """Collocation matrices for ``phi' + A phi = f``, ``B0 phi(0) = f0``, ``B1 phi(T) = f1``.

    Unknown x stacks phi at the nodes. F stacks f at the step midpoints
    (so forcing jumps at nodes cost no accuracy), then f0 and f1.
    """
    n = B0.shape[1]
    m = B0.shape[0]
    Np = len(ts)
    A = A_fn(ts)
    rows, cols, vals = [], [], []
    nF = n * (Np - 1) + n
    Nmat = sp.lil_matrix((n * Np, nF))
    eye = np.eye(n)
    for j in range(Np - 1):
        h = ts[j + 1] - ts[j]
        r0 = j * n
        for blk, cj in ((-eye / h + 0.5 * A[j], j), (eye / h + 0.5 * A[j + 1], j + 1)):
            ii, jj = np.nonzero(blk)
            rows.extend(r0 + ii)
            cols.extend(cj * n + jj)
            vals.extend(blk[ii, jj])
        for i in range(n):
            Nmat[r0 + i, r0 + i] = 1.0
    r0 = (Np - 1) * n
    for i in range(m):
        for c in range(n):
            if B0[i, c] != 0:
                rows.append(r0 + i)
                cols.append(c)
                vals.append(B0[i, c])
        Nmat[r0 + i, n * (Np - 1) + i] = 1.0
    for i in range(n - m):
        for c in range(n):
            if B1[i, c] != 0:
                rows.append(r0 + m + i)
                cols.append((Np - 1) * n + c)
                vals.append(B1[i, c])
        Nmat[r0 + m + i, n * (Np - 1) + m + i] = 1.0
    M = sp.csc_matrix((vals, (rows, cols)), shape=(n * Np, n * Np))
    return M, Nmat.toarray()


def midpoints(ts):
    return 0.5 * (ts[:-1] + ts[1:])


def _ellipsoid_inverse(ts, Q2_inv_fn, Q0_inv, Q1_inv, n):
    h = np.diff(ts)
    Q2i = Q2_inv_fn(midpoints(ts))
    S = len(h)
    m = Q0_inv.shape[0]
    k = Q1_inv.shape[0]
    Winv = np.zeros((n * S + m + k, n * S + m + k))
    for j in range(S):
        Winv[j * n : (j + 1) * n, j * n : (j + 1) * n] = Q2i[j] / h[j]
    Winv[n * S : n * S + m, n * S : n * S + m] = Q0_inv
    Winv[n * S + m :, n * S + m :] = Q1_inv
    return Winv


def _nominal_vector(ts, G, n):
    return np.concatenate([G.f_nom(midpoints(ts)).reshape(-1), G.f0_nom, G.f1_nom])


def _window_observation(ts, obs, n):
    """Rows for int (u, H phi) over the window, plus the noise form."""
    ww = window_weights(ts, obs.alpha, obs.beta)
    idx = np.flatnonzero(ww > 0)
    l = obs.l
    H = obs.H(ts[idx])
    Qi = np.linalg.inv(obs.Q(ts[idx]))
    O = np.zeros((len(idx) * l, n * len(ts)))
    R = np.zeros((len(idx) * l, len(idx) * l))
    for r, j in enumerate(idx):
        O[r * l : (r + 1) * l, j * n : (j + 1) * n] = ww[j] * H[r]
        R[r * l : (r + 1) * l, r * l : (r + 1) * l] = ww[j] * Qi[r]
    return O, R, ts[idx]


# ------------------------------------------------------------- builders


def continuous_oracle(spec, G, obs, target, grid) -> OracleResult:
    """Oracle for interval observations with the full ellipsoid."""
    ts = global_nodes(grid)
    n = spec.n
    M, N = trapezoid_first_order(ts, spec.A, spec.B0, spec.B1)
    trow = np.zeros(n * len(ts))
    js = node_index(ts, target.s)
    trow[js * n : (js + 1) * n] = target.a
    O, R, onodes = _window_observation(ts, obs, n)
    Winv = _ellipsoid_inverse(ts, G.Q2_inv, G.Q0_inv, G.Q1_inv, n)
    model = PrimalModel(M, N, trow, O, Winv, R, F0=_nominal_vector(ts, G, n), nodes=onodes)
    return solve_primal_minimax(model)


def constrained_oracle(spec, Q2, obs, target, grid) -> OracleResult:
    """Oracle when only f is bounded and the boundary data are arbitrary."""
    from .functions import as_function

    ts = global_nodes(grid)
    n, m = spec.n, spec.m
    M, N = trapezoid_first_order(ts, spec.A, spec.B0, spec.B1)
    trow = np.zeros(n * len(ts))
    js = node_index(ts, target.s)
    trow[js * n : (js + 1) * n] = target.a
    O, R, onodes = _window_observation(ts, obs, n)
    Q2i = as_function(Q2, (n, n)).inverse()
    Winv = _ellipsoid_inverse(ts, Q2i, np.zeros((m, m)), np.zeros((n - m, n - m)), n)
    free = np.arange(n * (len(ts) - 1), n * (len(ts) - 1) + n)
    model = PrimalModel(M, N, trow, O, Winv, R, free=free, nodes=onodes)
    return solve_primal_minimax(model)


def point_oracle(spec, G, points, weights, a, s, grid) -> OracleResult:
    """Oracle for point observations ``y_i = phi(t_i) + xi_i``."""
    ts = global_nodes(grid)
    n = spec.n
    M, N = trapezoid_first_order(ts, spec.A, spec.B0, spec.B1)
    trow = np.zeros(n * len(ts))
    js = node_index(ts, s)
    trow[js * n : (js + 1) * n] = a
    O = np.zeros((n * len(points), n * len(ts)))
    R = np.zeros((n * len(points), n * len(points)))
    for i, (t, Wq) in enumerate(zip(points, weights)):
        j = node_index(ts, t)
        O[i * n : (i + 1) * n, j * n : (j + 1) * n] = np.eye(n)
        R[i * n : (i + 1) * n, i * n : (i + 1) * n] = np.linalg.inv(Wq)
    Winv = _ellipsoid_inverse(ts, G.Q2_inv, G.Q0_inv, G.Q1_inv, n)
    model = PrimalModel(M, N, trow, O, Winv, R, F0=_nominal_vector(ts, G, n), nodes=np.asarray(points))
    return solve_primal_minimax(model)


def second_order_oracle(q, T, H, Q, Q0, Q1, Q2, a, s, nodes: int) -> OracleResult:
    """Scalar ``-phi'' + q phi = f`` with Dirichlet data, central differences.

    Observations ``y = H phi + xi`` on the whole of (0, T).
    """
    from .functions import as_function

    ts = np.linspace(0.0, T, nodes)
    h = ts[1] - ts[0]
    Np = len(ts)
    qv = as_function(q)(ts).reshape(Np)
    main = 2.0 / h**2 + qv
    M = sp.lil_matrix((Np, Np))
    N = np.zeros((Np, Np + 2))
    M[0, 0] = 1.0
    N[0, Np] = 1.0
    M[Np - 1, Np - 1] = 1.0
    N[Np - 1, Np + 1] = 1.0
    for j in range(1, Np - 1):
        M[j, j - 1] = -1.0 / h**2
        M[j, j] = main[j]
        M[j, j + 1] = -1.0 / h**2
        N[j, j] = 1.0
    trow = np.zeros(Np)
    trow[node_index(ts, s)] = float(np.asarray(a).reshape(-1)[0])
    w = trapezoid_weights(ts)
    Hv = as_function(H)(ts).reshape(Np)
    Qv = as_function(Q)(ts).reshape(Np)
    O = np.diag(w * Hv)
    R = np.diag(w / Qv)
    Q2v = as_function(Q2)(ts).reshape(Np)
    Winv = np.zeros((Np + 2, Np + 2))
    Winv[:Np, :Np] = np.diag(1.0 / (w * Q2v))
    Winv[Np, Np] = 1.0 / float(np.asarray(Q0).reshape(-1)[0])
    Winv[Np + 1, Np + 1] = 1.0 / float(np.asarray(Q1).reshape(-1)[0])
    model = PrimalModel(M.tocsc(), N, trow, O, Winv, R, F0=np.zeros(Np + 2), nodes=ts)
    return solve_primal_minimax(model)


def _stencil(offsets: np.ndarray, upto: int) -> np.ndarray:
    """Rows d = 0..upto: weights of the d-th derivative at offset 0."""
    k = np.arange(len(offsets))
    fact = np.array([np.prod(np.arange(1, j + 1)) for j in k], dtype=float)
    V = offsets[None, :] ** k[:, None] / fact[:, None]
    return np.linalg.solve(V, np.eye(len(offsets)))[:, : upto + 1].T


def ordern_primal(spec, nodes: int):
    """Collocation of ``L phi = f`` on a uniform grid plus the boundary forms.

    floor(n/2) ghost nodes are added beyond each end. Each window of n + 1
    consecutive nodes gives one row at its centre (symmetric stencils,
    second order) and the boundary jets use the centred window at each
    end, so the discrete left null vectors keep trapezoid-like weights.
    F stacks f at the window centres, then alpha.
    Returns (real nodes, centres, centre weights, M, N, ghost count).
    """
    n, m = spec.n, spec.m
    ts = np.linspace(spec.a, spec.b, nodes)
    h = ts[1] - ts[0]
    g = n // 2
    Ne = nodes + 2 * g
    nw = Ne - n
    centres = spec.a + (np.arange(nw) - g + 0.5 * n) * h
    W = _stencil((np.arange(n + 1) - 0.5 * n) * h, n)
    coef = spec.primal_coefficients(centres)
    M = np.zeros((nw + m, Ne))
    for j in range(nw):
        M[j, j : j + n + 1] = coef[j] @ W
    J = np.zeros((2 * n, Ne))
    # jets at the end nodes from the window that has the end node at offset g
    ends = _stencil((np.arange(n + 1) - g) * h, n - 1)
    J[:n, : n + 1] = ends
    J[n:, Ne - n - 1 :] = _stencil((np.arange(n + 1) - n + g) * h, n - 1)
    M[nw:] = spec.forms @ J
    cw = trapezoid_weights(centres) if n % 2 == 0 else np.full(nw, h)
    return ts, centres, cw, M, np.eye(nw + m), g


def ordern_oracle(spec, obs, weights, nodes: int, l0=None, lvec=None, mode: str = "functional") -> OracleResult:
    """Oracle for the order-n estimators (functional of phi or of F).

    Uses only the forward operator L, the forms and the observation data;
    the resonant case goes through the SVD route with null counts taken
    from the discrete operator.
    """
    from .functions import as_function

    ts, centres, cw, M, N, g = ordern_primal(spec, nodes)
    Np, nw, m = len(ts), len(centres), spec.m
    Ne = M.shape[1]
    l0f = as_function(0.0 if l0 is None else l0)
    Qv = weights.Q(centres)
    Winv = np.zeros((nw + m, nw + m))
    Winv[:nw, :nw] = np.diag(1.0 / (cw * Qv))
    Winv[nw:, nw:] = np.linalg.inv(weights.Q1)
    F0 = np.concatenate([weights.f0(centres), weights.alpha0])
    real = np.arange(g, g + Np)
    trow = np.zeros(Ne)
    target_F = None
    if mode == "functional":
        trow[real] = trapezoid_weights(ts) * l0f(ts)
    elif mode == "rhs":
        lv = np.zeros(m) if lvec is None else np.asarray(lvec, dtype=float)
        target_F = np.concatenate([cw * l0f(centres), lv])
    else:
        raise ValueError(f"unknown oracle mode {mode!r}")
    if obs.kind == "M":
        ww = window_weights(ts, obs.alpha, obs.beta)
        idx = np.flatnonzero(ww > 0)
        O = np.zeros((len(idx), Ne))
        O[np.arange(len(idx)), real[idx]] = ww[idx] * obs.h(ts[idx])
        R = np.diag(ww[idx] / obs.q0(ts[idx]))
        onodes = ts[idx]
    else:
        tw = trapezoid_weights(ts)
        Kv = obs.K(ts)  # (Np, M, N)
        rows, blocks = [], []
        for k in range(obs.M):
            for j in range(obs.N):
                row = np.zeros(Ne)
                row[real] = obs.weights[k] * tw * Kv[:, k, j]
                rows.append(row)
            blocks.append(obs.weights[k] * np.linalg.inv(obs.Q0[k]))
        O = np.array(rows)
        R = scipy.linalg.block_diag(*blocks)
        onodes = obs.t_nodes
    s = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    model = PrimalModel(
        M, N, trow, O, Winv, R, F0=F0, target_F=target_F,
        right_null=Ne - rank, left_null=M.shape[0] - rank, nodes=onodes,
    )
    return solve_primal_minimax(model)
