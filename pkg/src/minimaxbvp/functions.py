"""Matrix-valued functions of time.

Every coefficient in the package (drift A(t), weights Q(t), observation
matrices H(t), nominal forcing f(t)) is wrapped as a ``MatrixFunction``.
Evaluation is vectorized: ``F(ts)`` returns an array of shape
``(len(ts), *shape)`` and ``F.at(t)`` returns a single value.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline


class MatrixFunction:
    """Base class: subclasses implement ``_eval(ts)``."""

    shape: tuple

    def __call__(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return self._eval(ts)

    def at(self, t: float) -> np.ndarray:
        return self._eval(np.array([float(t)]))[0]

    def _eval(self, ts: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def derivative(self, order: int = 1) -> "MatrixFunction":
        """Derivative of the given order (finite differences unless overridden)."""
        return _FiniteDifference(self, order)

    def inverse(self) -> "MatrixFunction":
        return Transformed(self, np.linalg.inv, self.shape)

    def transpose(self) -> "MatrixFunction":
        return Transformed(self, lambda m: np.swapaxes(m, -1, -2), self.shape[::-1])


class Constant(MatrixFunction):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.shape = self.value.shape

    def _eval(self, ts):
        return np.broadcast_to(self.value, (len(ts),) + self.shape).copy()

    def derivative(self, order: int = 1):
        return Constant(np.zeros(self.shape))

    def inverse(self):
        return Constant(np.linalg.inv(self.value))

    def transpose(self):
        return Constant(self.value.T)


class Polynomial(MatrixFunction):
    """``sum_k C_k t**k`` with coefficient arrays ``C_k`` of a common shape."""

    def __init__(self, coefficients: Sequence):
        coeffs = np.asarray(coefficients, dtype=float)
        if coeffs.ndim == 0:
            coeffs = coeffs.reshape(1)
        self.coefficients = coeffs
        self.shape = coeffs.shape[1:]

    def _eval(self, ts):
        out = np.zeros((len(ts),) + self.shape)
        for c in self.coefficients[::-1]:
            out = out * ts.reshape((-1,) + (1,) * len(self.shape)) + c
        return out

    def derivative(self, order: int = 1):
        coeffs = self.coefficients
        for _ in range(order):
            if len(coeffs) <= 1:
                coeffs = np.zeros((1,) + self.shape)
                break
            k = np.arange(1, len(coeffs)).reshape((-1,) + (1,) * len(self.shape))
            coeffs = coeffs[1:] * k
        return Polynomial(coeffs)


class Sampled(MatrixFunction):
    """Piecewise-linear interpolation of tabulated values."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != len(self.times):
            raise ValueError("sample table: times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample table: times must be strictly increasing")
        self.shape = self.values.shape[1:]

    def _eval(self, ts):
        flat = self.values.reshape(len(self.times), -1)
        cols = [np.interp(ts, self.times, flat[:, j]) for j in range(flat.shape[1])]
        return np.stack(cols, axis=-1).reshape((len(ts),) + self.shape)


class FromCallable(MatrixFunction):
    """Wraps ``t -> array``; tries a vectorized call first."""

    def __init__(self, fn: Callable, shape=None):
        self.fn = fn
        if shape is None:
            shape = np.shape(fn(0.0))
        self.shape = tuple(shape)

    def _eval(self, ts):
        try:
            out = np.asarray(self.fn(ts), dtype=float)
            if out.shape == (len(ts),) + self.shape:
                return out
            if self.shape == () and out.shape == ts.shape:
                return out
        except Exception:
            pass
        return np.array([np.asarray(self.fn(t), dtype=float) for t in ts]).reshape(
            (len(ts),) + self.shape
        )


class Transformed(MatrixFunction):
    def __init__(self, base: MatrixFunction, op: Callable, shape):
        self.base = base
        self.op = op
        self.shape = tuple(shape)

    def _eval(self, ts):
        return self.op(self.base(ts))


class _FiniteDifference(MatrixFunction):
    """Central-difference derivative, step tied to the function scale."""

    def __init__(self, base: MatrixFunction, order: int, step: float = 1e-3):
        self.base = base
        self.order = order
        self.step = step
        self.shape = base.shape

    def _eval(self, ts):
        h = self.step
        # central stencils for orders 1-4 (fourth-order accurate)
        stencils = {
            1: ([-2, -1, 1, 2], [1 / 12, -8 / 12, 8 / 12, -1 / 12]),
            2: ([-2, -1, 0, 1, 2], [-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12]),
            3: ([-3, -2, -1, 1, 2, 3], [1 / 8, -1, 13 / 8, -13 / 8, 1, -1 / 8]),
            4: ([-3, -2, -1, 0, 1, 2, 3], [-1 / 6, 2, -13 / 2, 28 / 3, -13 / 2, 2, -1 / 6]),
        }
        if self.order == 0:
            return self.base(ts)
        if self.order not in stencils:
            raise ValueError("finite-difference derivatives limited to order 4")
        offs, wts = stencils[self.order]
        out = np.zeros((len(ts),) + self.shape)
        for o, w in zip(offs, wts):
            out += w * self.base(ts + o * h)
        return out / h**self.order


def as_function(value, shape=None) -> MatrixFunction:
    """Coerce scalars, arrays, callables and MatrixFunctions."""
    if isinstance(value, MatrixFunction):
        return value
    if callable(value):
        return FromCallable(value, shape)
    return Constant(value)


def zeros(shape) -> Constant:
    return Constant(np.zeros(shape))


class Spline(MatrixFunction):
    """Cubic-spline interpolation of tabulated values (not-a-knot ends)."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != len(self.times):
            raise ValueError("sample table: times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample table: times must be strictly increasing")
        self.shape = self.values.shape[1:]
        self._cs = CubicSpline(self.times, self.values, axis=0)

    def _eval(self, ts):
        return self._cs(ts)


def as_matrix(value) -> MatrixFunction:
    """Like ``as_function`` but scalars and vectors become 2-D (1 x 1, k x 1)."""
    F = as_function(value)
    if len(F.shape) == 2:
        return F
    if len(F.shape) == 0:
        return Transformed(F, lambda v: v.reshape(-1, 1, 1), (1, 1))
    k = F.shape[0]
    return Transformed(F, lambda v: v.reshape(-1, k, 1), (k, 1))
