"""Linear multipoint boundary value engine.

The engine integrates ``x' = M(t) x + g(t)`` with classical RK4 on a grid
whose breakpoints carry interface conditions ``x(tau+) = J x(tau-) + d``.
Unknowns are the interval-initial states (multiple shooting); the boundary
rows ``R0 x(tau_0) + R1 x(tau_K) = b`` (split, or mixed when both R0 and R1
carry d rows) and the interface rows close a dense
linear system. Optional "bordering" unknowns ``lam`` enter the forcing
linearly and are fixed by extra integral rows, which is how integral side
conditions (orthogonality to null spaces, nonlocal couplings) are imposed.

Several right-hand sides are solved at once: forcing, jumps, boundary data
and border data may carry a trailing column axis of length ``c``.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GridMismatch, IntegrationFailure, SingularSystem

COND_WARN = 1e12
RCOND_FAIL = 1e-14


# --------------------------------------------------------------------- grid


class Grid:
    """Breakpoints ``tau_0 < ... < tau_K`` with an even step count per interval."""

    def __init__(self, breakpoints, steps):
        bp = np.asarray(breakpoints, dtype=float)
        steps = tuple(int(s) for s in np.atleast_1d(steps))
        if len(steps) == 1 and len(bp) > 2:
            steps = steps * (len(bp) - 1)
        if len(steps) != len(bp) - 1:
            raise GridMismatch("one step count per interval is required")
        if np.any(np.diff(bp) <= 0):
            raise GridMismatch("breakpoints must be strictly increasing")
        if any(s < 2 or s % 2 for s in steps):
            raise GridMismatch("step counts must be even and at least 2")
        self.breakpoints = bp
        self.steps = steps

    # construction helpers

    @staticmethod
    def merge_points(points, tol=1e-12):
        pts = np.sort(np.asarray(points, dtype=float))
        span = max(pts[-1] - pts[0], 1.0)
        keep = [pts[0]]
        for p in pts[1:]:
            if p - keep[-1] > tol * span:
                keep.append(p)
        return np.array(keep)

    @classmethod
    def uniform(cls, points, nodes_per_interval: int = 129) -> "Grid":
        """Same node count on every interval (odd, e.g. 2**k + 1)."""
        if nodes_per_interval < 3 or nodes_per_interval % 2 == 0:
            raise GridMismatch("nodes per interval must be odd and at least 3")
        bp = cls.merge_points(points)
        return cls(bp, [nodes_per_interval - 1] * (len(bp) - 1))

    @classmethod
    def from_total(cls, points, total_nodes: int) -> "Grid":
        """Spread about ``total_nodes`` nodes over [tau_0, tau_K] by length."""
        bp = cls.merge_points(points)
        lengths = np.diff(bp)
        total_steps = max(total_nodes - 1, 2 * len(lengths))
        raw = lengths / lengths.sum() * total_steps
        steps = [max(2, 2 * int(round(r / 2))) for r in raw]
        return cls(bp, steps)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.breakpoints, [s * factor for s in self.steps])

    # queries

    @property
    def K(self) -> int:
        return len(self.steps)

    @property
    def start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def end(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def total_nodes(self) -> int:
        return sum(self.steps) + 1

    def h(self, k: int) -> float:
        return (self.breakpoints[k + 1] - self.breakpoints[k]) / self.steps[k]

    def nodes(self, k: int) -> np.ndarray:
        return np.linspace(self.breakpoints[k], self.breakpoints[k + 1], self.steps[k] + 1)

    def half_nodes(self, k: int) -> np.ndarray:
        return np.linspace(self.breakpoints[k], self.breakpoints[k + 1], 2 * self.steps[k] + 1)

    def simpson_weights(self, k: int) -> np.ndarray:
        return simpson_weights(self.steps[k], self.h(k))

    def index_of(self, t: float, tol: float = 1e-10) -> int:
        """Index of the breakpoint equal to ``t``."""
        d = np.abs(self.breakpoints - t)
        i = int(np.argmin(d))
        if d[i] > tol * max(1.0, abs(self.end - self.start)):
            raise GridMismatch(f"{t} is not a breakpoint of the grid")
        return i

    def interval_of(self, t: float) -> int:
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(max(k, 0), self.K - 1)

    def same_as(self, other: "Grid") -> bool:
        return self.steps == other.steps and np.allclose(self.breakpoints, other.breakpoints, rtol=0, atol=1e-14)

    def describe(self) -> str:
        return "breakpoints=" + ";".join(f"{b:.12g}" for b in self.breakpoints) + " steps=" + ";".join(
            str(s) for s in self.steps
        )


def simpson_weights(steps: int, h: float) -> np.ndarray:
    w = np.ones(steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def simpson(values: np.ndarray, h: float) -> np.ndarray:
    """Composite Simpson over the leading axis."""
    values = np.asarray(values, dtype=float)
    w = simpson_weights(values.shape[0] - 1, h)
    return np.tensordot(w, values, axes=(0, 0))


def quadrature(grid: Grid, samples) -> np.ndarray:
    """Integral of node samples (list per interval, leading axis = nodes)."""
    if len(samples) != grid.K:
        raise GridMismatch("one sample array per interval is required")
    total = 0.0
    for k, v in enumerate(samples):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != grid.steps[k] + 1:
            raise GridMismatch("sample count does not match the grid")
        total = total + simpson(v, grid.h(k))
    return total


# -------------------------------------------------------------- trajectory


class PiecewiseTrajectory:
    """Node values per interval; breakpoints are stored on both sides."""

    def __init__(self, grid: Grid, values):
        self.grid = grid
        self.values = [np.asarray(v, dtype=float) for v in values]
        for k, v in enumerate(self.values):
            if v.shape[0] != grid.steps[k] + 1:
                raise GridMismatch("trajectory values do not match the grid")
        self.dim = self.values[0].shape[1] if self.values[0].ndim > 1 else 1
        self._splines: dict = {}

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "PiecewiseTrajectory":
        vals = []
        for k in range(grid.K):
            v = np.asarray(fn(grid.nodes(k)), dtype=float)
            vals.append(v.reshape(grid.steps[k] + 1, -1))
        return cls(grid, vals)

    def components(self, sl) -> "PiecewiseTrajectory":
        return PiecewiseTrajectory(self.grid, [v[:, sl] for v in self.values])

    def map(self, fn) -> "PiecewiseTrajectory":
        """Apply ``fn(k, ts, values)`` per interval."""
        return PiecewiseTrajectory(
            self.grid, [fn(k, self.grid.nodes(k), v) for k, v in enumerate(self.values)]
        )

    def __add__(self, other):
        self._check(other)
        return PiecewiseTrajectory(self.grid, [a + b for a, b in zip(self.values, other.values)])

    def __sub__(self, other):
        self._check(other)
        return PiecewiseTrajectory(self.grid, [a - b for a, b in zip(self.values, other.values)])

    def scaled(self, c: float) -> "PiecewiseTrajectory":
        return PiecewiseTrajectory(self.grid, [c * v for v in self.values])

    def _check(self, other):
        if not self.grid.same_as(other.grid):
            raise GridMismatch("trajectories live on different grids")

    def left(self, i: int) -> np.ndarray:
        """Left limit at breakpoint ``i`` (``i >= 1``)."""
        return self.values[i - 1][-1].copy()

    def right(self, i: int) -> np.ndarray:
        """Right limit at breakpoint ``i`` (``i <= K - 1``)."""
        return self.values[i][0].copy()

    def start_value(self) -> np.ndarray:
        return self.values[0][0].copy()

    def end_value(self) -> np.ndarray:
        return self.values[-1][-1].copy()

    def _spline(self, k):
        if k not in self._splines:
            self._splines[k] = CubicSpline(self.grid.nodes(k), self.values[k], axis=0)
        return self._splines[k]

    def at(self, t: float, side: str = "L") -> np.ndarray:
        """Value at ``t``; at a breakpoint ``side`` selects the limit."""
        bp = self.grid.breakpoints
        hit = np.flatnonzero(np.abs(bp - t) <= 1e-12 * max(1.0, bp[-1] - bp[0]))
        if hit.size:
            i = int(hit[0])
            if i == 0:
                return self.right(0)
            if i == self.grid.K:
                return self.left(i)
            return self.left(i) if side == "L" else self.right(i)
        k = self.grid.interval_of(t)
        return self._spline(k)(t)

    def half_values(self, k: int) -> np.ndarray:
        """Values on the half grid of interval ``k`` (spline at midpoints)."""
        v = self.values[k]
        out = np.empty((2 * v.shape[0] - 1,) + v.shape[1:])
        out[0::2] = v
        out[1::2] = self._spline(k)(self.grid.half_nodes(k)[1::2])
        return out

    def integral(self, weight=None) -> np.ndarray:
        """Simpson integral of the values, optionally after ``weight(k, ts, v)``."""
        total = 0.0
        for k, v in enumerate(self.values):
            w = v if weight is None else weight(k, self.grid.nodes(k), v)
            total = total + simpson(w, self.grid.h(k))
        return total

    def inner(self, other: "PiecewiseTrajectory", weight=None) -> float:
        """Simpson integral of ``(W x, y)`` with optional matrix weight."""
        self._check(other)
        total = 0.0
        for k, (a, b) in enumerate(zip(self.values, other.values)):
            if weight is not None:
                W = weight(self.grid.nodes(k))
                a = np.einsum("tij,tj->ti", W, a)
            total += simpson(np.sum(a * b, axis=1), self.grid.h(k))
        return float(total)

    def derivative(self) -> "PiecewiseTrajectory":
        """Fourth-order finite-difference derivative per interval."""
        return PiecewiseTrajectory(
            self.grid, [fd_derivative(v, self.grid.h(k)) for k, v in enumerate(self.values)]
        )

    def to_csv(self, stream=None, names=None) -> str:
        buf = io.StringIO()
        d = self.values[0].shape[1]
        names = names or [f"x{j}" for j in range(d)]
        buf.write("t,side," + ",".join(names) + "\n")
        for k, v in enumerate(self.values):
            ts = self.grid.nodes(k)
            for j, t in enumerate(ts):
                side = "R" if j == 0 else "L"
                buf.write(f"{t:.17g},{side}," + ",".join(f"{x:.17g}" for x in v[j]) + "\n")
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text


def fd_derivative(v: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite differences along axis 0 (needs >= 5 nodes)."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if n < 5:
        raise GridMismatch("at least 5 nodes are needed for the derivative")
    d = np.empty_like(v)
    d[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    d[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * h)
    d[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * h)
    d[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * h)
    d[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * h)
    return d


def half_grid_samples(grid: Grid, k: int, data) -> np.ndarray:
    """Sample ``data`` on the half grid of interval ``k``.

    ``data`` is a callable of t, a PiecewiseTrajectory on ``grid`` or a
    ``(times, values)`` table (interpolated by a cubic spline).
    """
    ts = grid.half_nodes(k)
    if isinstance(data, PiecewiseTrajectory):
        if not data.grid.same_as(grid):
            raise GridMismatch("trajectory grid differs from the solve grid")
        return data.half_values(k)
    if isinstance(data, tuple):
        times, vals = data
        return CubicSpline(np.asarray(times, float), np.asarray(vals, float), axis=0)(ts)
    return np.asarray(data(ts), dtype=float)


# ----------------------------------------------------------------- RK4


def rk4_propagate(h: float, M_half: np.ndarray, X0: np.ndarray, G_half: Optional[np.ndarray] = None) -> np.ndarray:
    """RK4 for ``X' = M X + G`` with M and G given on the half grid.

    ``M_half``: (2S+1, d, d); ``G_half``: (2S+1, d, c) or None; ``X0``: (d, c).
    Returns node values (S+1, d, c). A negative ``h`` integrates backwards
    (the half grid is then ordered in the direction of integration).
    """
    S = (M_half.shape[0] - 1) // 2
    out = np.empty((S + 1,) + X0.shape)
    out[0] = X0
    X = X0
    hh = 0.5 * h
    for j in range(S):
        M0, Mm, M1 = M_half[2 * j], M_half[2 * j + 1], M_half[2 * j + 2]
        k1 = M0 @ X
        if G_half is not None:
            g0, gm, g1 = G_half[2 * j], G_half[2 * j + 1], G_half[2 * j + 2]
            k1 = k1 + g0
            k2 = Mm @ (X + hh * k1) + gm
            k3 = Mm @ (X + hh * k2) + gm
            k4 = M1 @ (X + h * k3) + g1
        else:
            k2 = Mm @ (X + hh * k1)
            k3 = Mm @ (X + hh * k2)
            k4 = M1 @ (X + h * k3)
        X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[j + 1] = X
    if not np.all(np.isfinite(out[-1])):
        raise IntegrationFailure("integration produced non-finite values")
    return out


def fundamental_matrix(M, t0: float, t1: float, steps: int = 512) -> np.ndarray:
    """Phi(t1, t0) for ``x' = M(t) x``; ``M`` maps an array of t to (len, d, d)."""
    if t1 == t0:
        d = np.asarray(M(np.array([t0]))).shape[-1]
        return np.eye(d)
    ts = np.linspace(t0, t1, 2 * steps + 1)
    Mh = np.asarray(M(ts), dtype=float)
    d = Mh.shape[-1]
    return rk4_propagate((t1 - t0) / steps, Mh, np.eye(d))[-1]


# ------------------------------------------------------- multipoint solve


@dataclass
class Border:
    """Extra unknowns ``lam`` (q of them) and extra rows (r of them).

    forcing(k, ts) -> (len, d, q): contribution of ``lam`` to x'.
    weights(k, ts) -> (len, r, d): integrand of the rows, integrated by Simpson.
    E0, E1: (r, d) endpoint terms; V: (r, q); w: (r,) or (r, c) right side.
    """

    q: int
    r: int
    forcing: Optional[Callable] = None
    weights: Optional[Callable] = None
    E0: Optional[np.ndarray] = None
    E1: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None


@dataclass
class MultipointProblem:
    """``x' = M_k(t) x + g_k(t)`` on each grid interval with interface jumps.

    drift(k, ts) -> (len, d, d); forcing(k, ts) -> (len, d) or (len, d, c);
    jumps maps an interior breakpoint index i to (J, dvec) with
    x(tau_i+) = J x(tau_i-) + dvec (J None means identity).
    """

    grid: Grid
    dim: int
    drift: Callable
    R0: np.ndarray
    R1: np.ndarray
    b: np.ndarray
    forcing: Optional[Callable] = None
    jumps: dict = field(default_factory=dict)
    border: Optional[Border] = None


@dataclass
class MultipointSolution:
    trajectory: list  # per column: PiecewiseTrajectory
    lam: np.ndarray  # (q, c)
    condition: float
    initial_states: np.ndarray  # (K, d, c)

    @property
    def x(self) -> PiecewiseTrajectory:
        return self.trajectory[0]


def solve_multipoint(problem: MultipointProblem) -> MultipointSolution:
    """Solve the multipoint problem by multiple shooting (dense solve)."""
    grid, d = problem.grid, problem.dim
    K = grid.K
    R0 = np.atleast_2d(np.asarray(problem.R0, dtype=float)).reshape(-1, d)
    R1 = np.atleast_2d(np.asarray(problem.R1, dtype=float)).reshape(-1, d)
    b = np.asarray(problem.b, dtype=float)
    b = b.reshape(len(b), -1) if b.size else np.zeros((0, 1))
    if R0.shape[0] == d and R1.shape[0] == d:
        mixed = True  # rows couple both ends: R0 x(a) + R1 x(b) = b
    elif R0.shape[0] + R1.shape[0] == d:
        mixed = False
    else:
        raise SingularSystem(f"boundary rows: expected {d}, got {R0.shape[0]} + {R1.shape[0]}")
    if b.shape[0] != d:
        raise SingularSystem(f"boundary data: expected {d} rows, got {b.shape[0]}")
    c = b.shape[1]
    bd = problem.border
    q = bd.q if bd is not None else 0
    r = bd.r if bd is not None else 0
    if r != q:
        raise SingularSystem("border rows must match border unknowns")

    # integrate per interval: [Phi | P | G]
    Phi, Par, Lam = [], [], []
    for k in range(K):
        ts = grid.half_nodes(k)
        Mh = np.asarray(problem.drift(k, ts), dtype=float)
        cols = d + c + q
        F = np.zeros((len(ts), d, cols))
        if problem.forcing is not None:
            g = np.asarray(problem.forcing(k, ts), dtype=float)
            if g.ndim == 2:
                g = g[:, :, None]
            if g.shape[2] == 1 and c > 1:
                g = np.repeat(g, c, axis=2)
            F[:, :, d : d + c] = g
        if q:
            if bd.forcing is not None:
                F[:, :, d + c :] = np.asarray(bd.forcing(k, ts), dtype=float).reshape(len(ts), d, q)
        X0 = np.zeros((d, cols))
        X0[:, :d] = np.eye(d)
        X = rk4_propagate(grid.h(k), Mh, X0, F)
        Phi.append(X[:, :, :d])
        Par.append(X[:, :, d : d + c])
        Lam.append(X[:, :, d + c :])

    n_unk = K * d + q
    A = np.zeros((n_unk, n_unk))
    rhs = np.zeros((n_unk, c))
    row = 0
    # boundary rows
    nr0 = 0 if mixed else R0.shape[0]
    A[row : row + R0.shape[0], 0:d] = R0
    A[row + nr0 : row + d, (K - 1) * d : K * d] += R1 @ Phi[-1][-1]
    if q:
        A[row + nr0 : row + d, K * d :] = R1 @ Lam[-1][-1]
    rhs[row : row + d] = b
    rhs[row + nr0 : row + d] -= R1 @ Par[-1][-1]
    row += d
    # interfaces
    for i in range(1, K):
        J, dv = problem.jumps.get(i, (None, None))
        J = np.eye(d) if J is None else np.asarray(J, dtype=float)
        dv = np.zeros((d, c)) if dv is None else np.asarray(dv, dtype=float).reshape(d, -1)
        A[row : row + d, i * d : (i + 1) * d] = np.eye(d)
        A[row : row + d, (i - 1) * d : i * d] = -J @ Phi[i - 1][-1]
        if q:
            A[row : row + d, K * d :] = -J @ Lam[i - 1][-1]
        rhs[row : row + d] = J @ Par[i - 1][-1] + dv
        row += d
    # border rows
    if q:
        wv = np.zeros((r, c)) if bd.w is None else np.asarray(bd.w, dtype=float).reshape(r, -1)
        rhs[row : row + r] = wv
        if bd.V is not None:
            A[row : row + r, K * d :] += np.asarray(bd.V, dtype=float)
        if bd.weights is not None:
            for k in range(K):
                W = np.asarray(bd.weights(k, grid.nodes(k)), dtype=float).reshape(-1, r, d)
                wq = grid.simpson_weights(k)
                A[row : row + r, k * d : (k + 1) * d] += np.einsum("t,trd,tde->re", wq, W, Phi[k])
                A[row : row + r, K * d :] += np.einsum("t,trd,tde->re", wq, W, Lam[k])
                rhs[row : row + r] -= np.einsum("t,trd,tde->re", wq, W, Par[k])
        if bd.E0 is not None:
            A[row : row + r, 0:d] += np.asarray(bd.E0, dtype=float)
        if bd.E1 is not None:
            E1 = np.asarray(bd.E1, dtype=float)
            A[row : row + r, (K - 1) * d : K * d] += E1 @ Phi[-1][-1]
            A[row : row + r, K * d :] += E1 @ Lam[-1][-1]
            rhs[row : row + r] -= E1 @ Par[-1][-1]
        row += r

    cond = _condition(A)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_FAIL:
        raise SingularSystem(f"shooting matrix is singular (condition {cond:.3g})")
    if cond > COND_WARN:
        warnings.warn(f"shooting matrix condition estimate {cond:.3g}", RuntimeWarning, stacklevel=2)
    sol = np.linalg.solve(A, rhs)
    x0 = sol[: K * d].reshape(K, d, c)
    lam = sol[K * d :]

    trajs = []
    for j in range(c):
        vals = []
        for k in range(K):
            v = Phi[k] @ x0[k, :, j] + Par[k][:, :, j]
            if q:
                v = v + Lam[k] @ lam[:, j]
            vals.append(v)
        trajs.append(PiecewiseTrajectory(grid, vals))
    return MultipointSolution(trajs, lam, cond, x0)


def _condition(A: np.ndarray) -> float:
    """2-norm condition number after row and column equilibration."""
    if A.size == 0:
        return 1.0
    rs = np.max(np.abs(A), axis=1)
    rs[rs == 0] = 1.0
    B = A / rs[:, None]
    cs = np.max(np.abs(B), axis=0)
    cs[cs == 0] = 1.0
    B = B / cs[None, :]
    s = np.linalg.svd(B, compute_uv=False)
    if s[-1] == 0:
        return np.inf
    return float(s[0] / s[-1])


def constant_drift(M) -> Callable:
    M = np.asarray(M, dtype=float)
    return lambda k, ts: np.broadcast_to(M, (len(ts),) + M.shape)
