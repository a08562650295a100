"""Boundary-matrix algebra for split two-point conditions.

A problem ``phi' + A(t) phi = f`` on (0, T) with ``B0 phi(0) = f0`` (m rows)
and ``B1 phi(T) = f1`` (n - m rows). The algebra provides the complementary
matrices that split endpoint pairings into a "data" part and a "free" part:

    (w, v) = (B0_bar w, B0 v) + (B0_hat w, B0_tilde v)
    (w, v) = (B1_bar w, B1 v) + (B1_hat w, B1_tilde v)

and the adjoint problem ``-psi' + A^T psi = g`` with ``B0_hat psi(0) = 0``,
``B1_hat psi(T) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import GridMismatch, RankDeficient, SingularSystem
from .functions import MatrixFunction, as_function, zeros
from .linear_bvp import PiecewiseTrajectory, fundamental_matrix, simpson

RANK_TOL = 1e-10
SOLVABILITY_TOL = 1e-8


def numerical_rank(M: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class BvpSpec:
    """First-order system with split boundary conditions."""

    A: MatrixFunction
    B0: np.ndarray
    B1: np.ndarray
    T: float
    f: MatrixFunction = None
    f0: np.ndarray = None
    f1: np.ndarray = None

    def __post_init__(self):
        B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        B1 = np.atleast_2d(np.asarray(self.B1, dtype=float))
        n = B0.shape[1]
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "B1", B1)
        object.__setattr__(self, "A", as_function(self.A, (n, n)))
        if self.f is None:
            object.__setattr__(self, "f", zeros((n,)))
        else:
            object.__setattr__(self, "f", as_function(self.f, (n,)))
        object.__setattr__(self, "f0", np.zeros(B0.shape[0]) if self.f0 is None else np.asarray(self.f0, float))
        object.__setattr__(self, "f1", np.zeros(B1.shape[0]) if self.f1 is None else np.asarray(self.f1, float))
        if B1.shape[1] != n:
            raise RankDeficient("B0 and B1 must have the same column count")
        if B0.shape[0] + B1.shape[0] != n:
            raise RankDeficient("row counts of B0 and B1 must add up to n")
        if not 1 <= B0.shape[0] <= n - 1:
            raise RankDeficient("B0 must have between 1 and n-1 rows")
        if self.A.shape != (n, n):
            raise RankDeficient("A(t) has the wrong shape")
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if numerical_rank(B0) < B0.shape[0] or numerical_rank(B1) < B1.shape[0]:
            raise RankDeficient("boundary matrices must have full row rank")

    @property
    def n(self) -> int:
        return self.B0.shape[1]

    @property
    def m(self) -> int:
        return self.B0.shape[0]

    def drift(self) -> MatrixFunction:
        """Coefficient of ``x' = -A x``."""
        return as_function(lambda ts: -self.A(ts), (self.n, self.n))


@dataclass(frozen=True)
class BoundaryAlgebra:
    left_columns: tuple
    right_columns: tuple
    B0_hat: np.ndarray
    B0_bar: np.ndarray
    B0_tilde: np.ndarray
    B1_hat: np.ndarray
    B1_bar: np.ndarray
    B1_tilde: np.ndarray


@dataclass(frozen=True)
class AdjointBvpSpec:
    """``-psi' + A^T psi = g`` with ``B0_hat psi(0) = 0``, ``B1_hat psi(T) = 0``."""

    A: MatrixFunction
    B0_hat: np.ndarray
    B1_hat: np.ndarray
    T: float

    @property
    def n(self) -> int:
        return self.B0_hat.shape[1]

    def drift_matrix(self, ts) -> np.ndarray:
        """Coefficient of ``psi' = A^T psi`` (homogeneous form)."""
        return np.swapaxes(self.A(ts), -1, -2)


def select_basis_submatrix(B: np.ndarray, tol: float = RANK_TOL) -> tuple:
    """Columns of a well-conditioned invertible k x k submatrix of B (k x n).

    Column-pivoted QR gives the initial choice; single-column exchanges that
    strictly increase |det| are then applied until none is left.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    k, n = B.shape
    if numerical_rank(B, tol) < k:
        raise RankDeficient("matrix does not have full row rank")
    _, _, piv = scipy.linalg.qr(B, pivoting=True, mode="economic")
    cols = sorted(int(c) for c in piv[:k])

    def vol(cs):
        return abs(np.linalg.det(B[:, cs]))

    best = vol(cols)
    improved = True
    while improved:
        improved = False
        for i in range(k):
            for j in range(n):
                if j in cols:
                    continue
                trial = sorted(cols[:i] + [j] + cols[i + 1 :])
                v = vol(trial)
                if v > best * (1 + 1e-12):
                    cols, best, improved = trial, v, True
                    break
            if improved:
                break
    if best <= tol * np.linalg.norm(B, 2) ** k:
        raise RankDeficient("no invertible column subset found")
    return tuple(cols)


def _blocks(B: np.ndarray, cols: tuple):
    k, n = B.shape
    rest = tuple(j for j in range(n) if j not in cols)
    B1 = B[:, cols]
    B2 = B[:, rest]
    B1T_inv = np.linalg.inv(B1.T)
    hat = np.zeros((n - k, n))
    hat[:, cols] = -B2.T @ B1T_inv
    hat[:, rest] = np.eye(n - k)
    bar = np.zeros((k, n))
    bar[:, cols] = B1T_inv
    tilde = np.zeros((n - k, n))
    tilde[:, rest] = np.eye(n - k)
    return hat, bar, tilde


def build_boundary_algebra(B0, B1, left_columns=None, right_columns=None) -> BoundaryAlgebra:
    """Assemble the six complementary matrices.

    Column subsets may be forced (used to check that estimates do not depend
    on the choice); by default they come from ``select_basis_submatrix``.
    """
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    lc = tuple(left_columns) if left_columns is not None else select_basis_submatrix(B0)
    rc = tuple(right_columns) if right_columns is not None else select_basis_submatrix(B1)
    for B, cs in ((B0, lc), (B1, rc)):
        if len(cs) != B.shape[0] or numerical_rank(B[:, list(cs)]) < B.shape[0]:
            raise RankDeficient("chosen columns do not form an invertible submatrix")
    h0, b0, t0 = _blocks(B0, lc)
    h1, b1, t1 = _blocks(B1, rc)
    return BoundaryAlgebra(lc, rc, h0, b0, t0, h1, b1, t1)


def valid_column_choices(B: np.ndarray) -> list:
    """All invertible column subsets (brute force; small n only)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    k, n = B.shape
    return [cs for cs in combinations(range(n), k) if numerical_rank(B[:, list(cs)]) == k]


def pairing_residual(alg: BoundaryAlgebra, B0, B1, v, w) -> float:
    """Largest violation of the two endpoint pairing identities."""
    B0 = np.atleast_2d(B0)
    B1 = np.atleast_2d(B1)
    r0 = w @ v - (alg.B0_bar @ w) @ (B0 @ v) - (alg.B0_hat @ w) @ (alg.B0_tilde @ v)
    r1 = w @ v - (alg.B1_bar @ w) @ (B1 @ v) - (alg.B1_hat @ w) @ (alg.B1_tilde @ v)
    return float(max(abs(r0), abs(r1)))


def adjoint_bvp(spec: BvpSpec, alg: Optional[BoundaryAlgebra] = None) -> AdjointBvpSpec:
    alg = alg or build_boundary_algebra(spec.B0, spec.B1)
    return AdjointBvpSpec(spec.A, alg.B0_hat, alg.B1_hat, spec.T)


def _solvability_matrix(R0, R1, Phi) -> np.ndarray:
    return np.vstack([R0, R1 @ Phi])


def check_unique_solvability(spec, steps: int = 1024, tol: float = SOLVABILITY_TOL) -> bool:
    """True iff the homogeneous problem has only the trivial solution.

    Works for a primal ``BvpSpec`` and for an ``AdjointBvpSpec``.
    """
    return smallest_singular_value(spec, steps) > tol


def require_unique_solvability(spec, steps: int = 1024, tol: float = SOLVABILITY_TOL) -> None:
    """Raise ``SingularSystem`` when the homogeneous problem has a nontrivial solution."""
    smin = smallest_singular_value(spec, steps)
    if not smin > tol:
        raise SingularSystem(f"boundary problem is not uniquely solvable (relative smallest singular value {smin:.2e})")


def smallest_singular_value(spec, steps: int = 1024) -> float:
    """Relative smallest singular value of the boundary-on-fundamental-system matrix."""
    if isinstance(spec, AdjointBvpSpec):
        M = lambda ts: spec.drift_matrix(ts)
        R0, R1 = spec.B0_hat, spec.B1_hat
    else:
        M = lambda ts: -spec.A(ts)
        R0, R1 = spec.B0, spec.B1
    Phi = fundamental_matrix(M, 0.0, spec.T, steps)
    # scale columns of the fundamental system so that growth does not hide rank
    S = _solvability_matrix(R0, R1, Phi)
    s = np.linalg.svd(S, compute_uv=False)
    return float(s[-1] / s[0])


def pairing_identity_residual(
    spec: BvpSpec, alg: BoundaryAlgebra, phi: PiecewiseTrajectory, psi: PiecewiseTrajectory
) -> float:
    """|int (L phi, psi) - [boundary pairings + int (phi, L* psi)]|.

    Derivatives come from fourth-order differences of the node values, so the
    residual measures the discretization error of the Green identity.
    """
    if not phi.grid.same_as(psi.grid):
        raise GridMismatch("phi and psi must share a grid")
    grid = phi.grid
    dphi = phi.derivative()
    dpsi = psi.derivative()
    lhs = 0.0
    rhs_int = 0.0
    for k in range(grid.K):
        ts = grid.nodes(k)
        A = spec.A(ts)
        p, q = phi.values[k], psi.values[k]
        Lp = dphi.values[k] + np.einsum("tij,tj->ti", A, p)
        Lsq = -dpsi.values[k] + np.einsum("tji,tj->ti", A, q)
        lhs += simpson(np.sum(Lp * q, axis=1), grid.h(k))
        rhs_int += simpson(np.sum(p * Lsq, axis=1), grid.h(k))
    p0, pT = phi.start_value(), phi.end_value()
    q0, qT = psi.start_value(), psi.end_value()
    bnd = (
        (alg.B1_bar @ qT) @ (spec.B1 @ pT)
        + (alg.B1_hat @ qT) @ (alg.B1_tilde @ pT)
        - (alg.B0_bar @ q0) @ (spec.B0 @ p0)
        - (alg.B0_hat @ q0) @ (alg.B0_tilde @ p0)
    )
    return float(abs(lhs - bnd - rhs_int))
