"""Scenario files: TOML with inline matrix tables.

A coefficient is given as a plain number or nested list (constant), as
``{polynomial = [C0, C1, ...]}`` meaning ``sum_k C_k t**k``, or as
``{samples = {times = [...], values = [...], interpolation = "spline"}}``.
The parsed document is kept verbatim so a config writes back unchanged.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli_w

from .boundary import BvpSpec, build_boundary_algebra
from .continuous import EllipsoidG, FunctionalTarget, IntervalObservation, estimator_grid
from .errors import ParseError
from .functions import Constant, MatrixFunction, Polynomial, Sampled, Spline
from .linear_bvp import Grid
from .ordern import OrderNProblem, OrderNSpec, OrderNWeights, WindowObservation, kernel_observation, ordern_grid
from .point import PointObservationSet, point_grid
from .riccati import eliminate, elimination_grid, riccati_sweep

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("continuous", "constrained", "elimination", "point", "ordern-functional", "ordern-rhs")
VARIANTS = ("q1", "q1sq")
DEFAULT_NODES = 513


# ------------------------------------------------------------- values


def _array(value, path: str, ndim: Optional[int] = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: expected a number or a rectangular numeric array ({exc})") from None
    if ndim is not None and arr.ndim != ndim:
        raise ParseError(f"{path}: expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{path}: values must be finite")
    return arr


def parse_function(value, path: str, shape: Optional[tuple] = None) -> MatrixFunction:
    """Constant, polynomial or sampled coefficient, checked against ``shape``."""
    if isinstance(value, dict):
        kinds = [k for k in ("constant", "polynomial", "samples") if k in value]
        if len(kinds) != 1 or len(value) != 1:
            raise ParseError(f"{path}: a function table needs exactly one of constant, polynomial, samples")
        kind = kinds[0]
        body = value[kind]
        if kind == "constant":
            F = Constant(_array(body, f"{path}.constant"))
        elif kind == "polynomial":
            if not isinstance(body, list) or not body:
                raise ParseError(f"{path}.polynomial: expected a non-empty list of coefficients")
            F = Polynomial(_array(body, f"{path}.polynomial"))
        else:
            if not isinstance(body, dict) or "times" not in body or "values" not in body:
                raise ParseError(f"{path}.samples: needs times and values")
            interp = body.get("interpolation", "spline")
            times = _array(body["times"], f"{path}.samples.times", 1)
            vals = _array(body["values"], f"{path}.samples.values")
            try:
                if interp == "spline":
                    F = Spline(times, vals)
                elif interp == "linear":
                    F = Sampled(times, vals)
                else:
                    raise ParseError(f"{path}.samples.interpolation: expected spline or linear, got {interp!r}")
            except ValueError as exc:
                raise ParseError(f"{path}.samples: {exc}") from None
    else:
        F = Constant(_array(value, path))
    if shape is not None and tuple(F.shape) != tuple(shape):
        raise ParseError(f"{path}: expected shape {tuple(shape)}, got {tuple(F.shape)}")
    return F


def _get(table: dict, key: str, path: str, default: Any = ...):
    if key in table:
        return table[key]
    if default is ...:
        raise ParseError(f"{path}.{key}: required field is missing")
    return default


def _table(doc: dict, key: str, path: str = "", required: bool = True) -> dict:
    full = f"{path}.{key}" if path else key
    if key not in doc:
        if required:
            raise ParseError(f"[{full}]: required table is missing")
        return {}
    t = doc[key]
    if not isinstance(t, dict):
        raise ParseError(f"[{full}]: expected a table")
    return t


def _float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _matrix(value, path: str, shape: Optional[tuple] = None) -> np.ndarray:
    M = np.atleast_2d(_array(value, path))
    if M.ndim != 2:
        raise ParseError(f"{path}: expected a matrix")
    if shape is not None and M.shape != tuple(shape):
        raise ParseError(f"{path}: expected shape {tuple(shape)}, got {M.shape}")
    return M


def _vector(value, path: str, length: Optional[int] = None) -> np.ndarray:
    v = np.atleast_1d(_array(value, path))
    if v.ndim != 1:
        raise ParseError(f"{path}: expected a vector")
    if length is not None and len(v) != length:
        raise ParseError(f"{path}: expected length {length}, got {len(v)}")
    return v


# ------------------------------------------------------------ config


@dataclass
class ProblemConfig:
    """One scenario; ``document`` holds the parsed TOML verbatim."""

    document: dict
    source: Optional[str] = None
    overrides: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.document["mode"]

    def _setting(self, key: str, default):
        if key in self.overrides and self.overrides[key] is not None:
            return self.overrides[key]
        return self.document.get(key, default)

    @property
    def seed(self) -> int:
        return int(self._setting("seed", 0))

    @property
    def nodes(self) -> int:
        return int(self._setting("nodes", DEFAULT_NODES))

    @property
    def tol(self) -> float:
        return float(self._setting("tol", 1e-6))

    @property
    def samples(self) -> int:
        return int(self._setting("samples", 10_000))

    @property
    def variant(self) -> str:
        v = self._setting("variant", None)
        if v is None:
            v = self.document.get("elimination", {}).get("variant", "q1sq")
        if v not in VARIANTS:
            raise ParseError(f"variant: expected one of {VARIANTS}, got {v!r}")
        return v

    def with_overrides(self, **kw) -> "ProblemConfig":
        o = dict(self.overrides)
        o.update({k: v for k, v in kw.items() if v is not None})
        return ProblemConfig(self.document, self.source, o)

    def dumps(self) -> str:
        return tomli_w.dumps(self.document)

    # -------------------------------------------------- builders

    def first_order(self):
        """Spec, boundary algebra and target for the first-order modes."""
        doc = self.document
        sysd = _table(doc, "system")
        B0 = _matrix(_get(sysd, "B0", "system"), "system.B0")
        B1 = _matrix(_get(sysd, "B1", "system"), "system.B1")
        n = B0.shape[1]
        if B1.shape[1] != n or B0.shape[0] + B1.shape[0] != n:
            raise ParseError(f"system.B0/B1: shapes {B0.shape} and {B1.shape} do not split n = {n} conditions")
        T = _float(_get(sysd, "T", "system", 1.0), "system.T")
        A = parse_function(_get(sysd, "A", "system"), "system.A", (n, n))
        f = parse_function(sysd.get("f", [0.0] * n), "system.f", (n,))
        f0 = _vector(sysd.get("f0", [0.0] * B0.shape[0]), "system.f0", B0.shape[0])
        f1 = _vector(sysd.get("f1", [0.0] * B1.shape[0]), "system.f1", B1.shape[0])
        try:
            spec = BvpSpec(A=A, B0=B0, B1=B1, T=T, f=f, f0=f0, f1=f1)
        except Exception as exc:
            raise ParseError(f"[system]: {exc}") from None
        alg = build_boundary_algebra(spec.B0, spec.B1)
        return spec, alg

    def _target(self, n: int, T: float):
        tg = _table(self.document, "target")
        a = _vector(_get(tg, "a", "target"), "target.a", n)
        s = _float(_get(tg, "s", "target"), "target.s")
        if not 0.0 < s < T:
            raise ParseError(f"target.s: {s} must lie inside (0, {T})")
        return a, s

    def ellipsoid(self, spec: BvpSpec) -> EllipsoidG:
        u = _table(self.document, "uncertainty")
        n, m = spec.n, spec.m
        Q0 = _matrix(_get(u, "Q0", "uncertainty"), "uncertainty.Q0", (m, m))
        Q1 = _matrix(_get(u, "Q1", "uncertainty"), "uncertainty.Q1", (n - m, n - m))
        if "Q2_inv" in u:
            Q2i = parse_function(u["Q2_inv"], "uncertainty.Q2_inv", (n, n))
            return EllipsoidG.from_inverse_weights(np.linalg.inv(Q0), np.linalg.inv(Q1), Q2i, spec.f, spec.f0, spec.f1)
        Q2 = parse_function(_get(u, "Q2", "uncertainty"), "uncertainty.Q2", (n, n))
        return EllipsoidG.from_spec(spec, Q0, Q1, Q2)

    def interval_observation(self, n: int, T: float) -> IntervalObservation:
        ob = _table(self.document, "observation")
        H = parse_function(_get(ob, "H", "observation"), "observation.H")
        if len(H.shape) != 2 or H.shape[1] != n:
            raise ParseError(f"observation.H: expected an l x {n} matrix, got shape {H.shape}")
        l = H.shape[0]
        Q = parse_function(_get(ob, "Q", "observation"), "observation.Q", (l, l))
        win = _vector(_get(ob, "window", "observation"), "observation.window", 2)
        if not 0.0 <= win[0] < win[1] <= T:
            raise ParseError(f"observation.window: need 0 <= alpha < beta <= {T}")
        return IntervalObservation(H, float(win[0]), float(win[1]), Q)

    def continuous(self):
        """(spec, alg, G, obs, target, grid)."""
        spec, alg = self.first_order()
        G = self.ellipsoid(spec)
        obs = self.interval_observation(spec.n, spec.T)
        a, s = self._target(spec.n, spec.T)
        grid = estimator_grid(spec.T, [obs.alpha, obs.beta, s], total_nodes=self.nodes)
        return spec, alg, G, obs, FunctionalTarget(a, s), grid

    def constrained(self):
        """(spec, alg, Q2, Q2_inv, obs, target, grid)."""
        spec, alg = self.first_order()
        u = _table(self.document, "uncertainty")
        n = spec.n
        Q2 = Q2i = None
        if "Q2_inv" in u:
            Q2i = parse_function(u["Q2_inv"], "uncertainty.Q2_inv", (n, n))
        else:
            Q2 = parse_function(_get(u, "Q2", "uncertainty"), "uncertainty.Q2", (n, n))
        obs = self.interval_observation(n, spec.T)
        a, s = self._target(n, spec.T)
        grid = estimator_grid(spec.T, [obs.alpha, obs.beta, s], total_nodes=self.nodes)
        return spec, alg, Q2, Q2i, obs, FunctionalTarget(a, s), grid

    def point(self):
        """(spec, alg, G, obsP, a, s, grid)."""
        spec, alg = self.first_order()
        G = self.ellipsoid(spec)
        ob = _table(self.document, "observation")
        times = _vector(_get(ob, "times", "observation"), "observation.times")
        raw = _get(ob, "weights", "observation", None)
        n = spec.n
        if raw is None:
            weights = [np.eye(n)] * len(times)
        else:
            W = _array(raw, "observation.weights")
            if W.ndim == 2:
                weights = [_matrix(W, "observation.weights", (n, n))] * len(times)
            elif W.ndim == 3 and W.shape == (len(times), n, n):
                weights = list(W)
            else:
                raise ParseError(f"observation.weights: expected one {n} x {n} matrix or one per point, got shape {W.shape}")
        try:
            obsP = PointObservationSet(times, weights)
        except ValueError as exc:
            raise ParseError(f"observation.times: {exc}") from None
        a, s = self._target(n, spec.T)
        grid = point_grid(spec.T, obsP, s, total_nodes=self.nodes)
        return spec, alg, G, obsP, a, s, grid

    def elimination(self):
        """(elim, a1, a2, s, grid, variant)."""
        el = _table(self.document, "elimination")
        A = parse_function(_get(el, "A", "elimination"), "elimination.A")
        if len(A.shape) == 0:
            A = parse_function([[_float(el["A"], "elimination.A")]], "elimination.A")
        if len(A.shape) != 2 or A.shape[0] != A.shape[1]:
            raise ParseError(f"elimination.A: expected a square matrix, got shape {A.shape}")
        n = A.shape[0]
        B = parse_function(el.get("B", np.eye(n).tolist()), "elimination.B")
        C11 = parse_function(_get(el, "C11", "elimination"), "elimination.C11")
        C21 = parse_function(_get(el, "C21", "elimination"), "elimination.C21")
        C12 = parse_function(el["C12"], "elimination.C12") if "C12" in el else None
        C22 = parse_function(el["C22"], "elimination.C22") if "C22" in el else None
        Q = parse_function(el.get("Q", np.eye(B.shape[-1] if B.shape else 1).tolist()), "elimination.Q")
        q1 = parse_function(el.get("q1", 1.0), "elimination.q1", ())
        tg = _table(self.document, "target")
        a1 = _vector(_get(tg, "a1", "target"), "target.a1", n)
        a2 = _vector(_get(tg, "a2", "target"), "target.a2", n)
        s = _float(_get(tg, "s", "target"), "target.s")
        if not 0.0 < s < 1.0:
            raise ParseError("target.s: must lie inside (0, 1)")
        try:
            sweep = riccati_sweep(A, B=B)
            elim = eliminate(sweep, B, C11, C21, Q, q1, C12, C22)
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(f"[elimination]: {exc}") from None
        grid = elimination_grid(s, total_nodes=self.nodes)
        return elim, a1, a2, s, grid, self.variant

    def ordern(self):
        """(prob, obs, W, l0, lvec, grid)."""
        od = _table(self.document, "ordern")
        n = int(_get(od, "n", "ordern"))
        interval = _vector(_get(od, "interval", "ordern"), "ordern.interval", 2)
        coeffs_raw = _get(od, "coefficients", "ordern")
        if not isinstance(coeffs_raw, list) or len(coeffs_raw) != n + 1:
            raise ParseError(f"ordern.coefficients: expected {n + 1} entries p_0..p_n")
        coeffs = [parse_function(c, f"ordern.coefficients[{i}]", ()) for i, c in enumerate(coeffs_raw)]
        forms = _matrix(_get(od, "forms", "ordern"), "ordern.forms")
        if forms.shape[1] != 2 * n:
            raise ParseError(f"ordern.forms: rows need {2 * n} jet columns, got {forms.shape[1]}")
        m = forms.shape[0]
        f = parse_function(od.get("f", 0.0), "ordern.f", ())
        alpha = _vector(od.get("alpha", [0.0] * m), "ordern.alpha", m)
        try:
            spec = OrderNSpec(n, interval, coeffs, forms, f, alpha)
        except ValueError as exc:
            raise ParseError(f"[ordern]: {exc}") from None
        wt = _table(od, "weights", "ordern", required=False)
        W = OrderNWeights(
            Q=parse_function(wt.get("Q", 1.0), "ordern.weights.Q", ()),
            Q1=_matrix(wt.get("Q1", np.eye(m).tolist()), "ordern.weights.Q1", (m, m)),
            f0=parse_function(wt.get("f0", 0.0), "ordern.weights.f0", ()),
            alpha0=_vector(wt.get("alpha0", [0.0] * m), "ordern.weights.alpha0", m),
            m=m,
        )
        obs = self._ordern_observation(_table(od, "observation", "ordern"), spec)
        tg = _table(od, "target", "ordern")
        l0 = parse_function(tg.get("l0", 0.0), "ordern.target.l0", ())
        lvec = _vector(tg.get("lvec", [0.0] * m), "ordern.target.lvec", m)
        prob = OrderNProblem.build(spec)
        grid = ordern_grid(spec, obs, total_nodes=self.nodes)
        return prob, obs, W, l0, lvec, grid

    def _ordern_observation(self, ob: dict, spec: OrderNSpec):
        kind = ob.get("kind", "window")
        if kind == "window":
            win = _vector(_get(ob, "window", "ordern.observation"), "ordern.observation.window", 2)
            if not spec.a <= win[0] < win[1] <= spec.b:
                raise ParseError("ordern.observation.window: must be an ordered sub-interval")
            return WindowObservation(
                win,
                parse_function(ob.get("h", 1.0), "ordern.observation.h", ()),
                parse_function(ob.get("q0", 1.0), "ordern.observation.q0", ()),
            )
        if kind == "kernel":
            tn = _vector(_get(ob, "t_nodes", "ordern.observation"), "ordern.observation.t_nodes")
            Q0 = _array(ob["Q0"], "ordern.observation.Q0") if "Q0" in ob else None
            if "gaussian_width" in ob:
                w = _float(ob["gaussian_width"], "ordern.observation.gaussian_width")
                if w <= 0:
                    raise ParseError("ordern.observation.gaussian_width: must be positive")
                return kernel_observation(lambda tp, xi, w=w: np.exp(-(((tp - xi) / w) ** 2)), tn, Q0=Q0)
            table = _array(_get(ob, "kernel_table", "ordern.observation"), "ordern.observation.kernel_table")
            xi = _vector(_get(ob, "xi_nodes", "ordern.observation"), "ordern.observation.xi_nodes")
            try:
                return kernel_observation(table, tn, Q0=Q0, xi_nodes=xi)
            except ValueError as exc:
                raise ParseError(f"ordern.observation: {exc}") from None
        raise ParseError(f"ordern.observation.kind: expected window or kernel, got {kind!r}")

    def grid(self) -> Grid:
        mode = self.mode
        if mode == "continuous":
            return self.continuous()[-1]
        if mode == "constrained":
            return self.constrained()[-1]
        if mode == "point":
            return self.point()[-1]
        if mode == "elimination":
            return self.elimination()[-2]
        return self.ordern()[-1]


def _validate(doc: dict, source: str):
    mode = doc.get("mode")
    if mode is None:
        raise ParseError(f"{source}: mode: required field is missing")
    if mode not in MODES:
        raise ParseError(f"{source}: mode: expected one of {', '.join(MODES)}, got {mode!r}")
    for key, kind in (("seed", int), ("nodes", int), ("samples", int)):
        if key in doc and (isinstance(doc[key], bool) or not isinstance(doc[key], kind)):
            raise ParseError(f"{source}: {key}: expected an integer, got {doc[key]!r}")
    if "nodes" in doc and doc["nodes"] < 9:
        raise ParseError(f"{source}: nodes: at least 9 grid nodes are required")


def loads(text: str, source: str = "<string>") -> ProblemConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{source}: {exc}") from None
    _validate(doc, source)
    cfg = ProblemConfig(doc, source)
    try:
        _check_build(cfg)
    except ParseError as exc:
        raise ParseError(f"{source}: {exc}") from None
    return cfg


def load(path) -> ProblemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from None
    return loads(text, str(path))


def dump(cfg: ProblemConfig, path) -> None:
    Path(path).write_text(cfg.dumps())


def _check_build(cfg: ProblemConfig):
    """Resolve the sections the mode needs so field errors surface at load time."""
    mode = cfg.mode
    if mode in ("continuous",):
        spec, _ = cfg.first_order()
        cfg.ellipsoid(spec)
        cfg.interval_observation(spec.n, spec.T)
        cfg._target(spec.n, spec.T)
    elif mode == "constrained":
        spec, _ = cfg.first_order()
        cfg.interval_observation(spec.n, spec.T)
        cfg._target(spec.n, spec.T)
    elif mode == "point":
        cfg.point()
    elif mode == "elimination":
        _table(cfg.document, "elimination")
        _table(cfg.document, "target")
    else:
        od = _table(cfg.document, "ordern")
        for key in ("n", "interval", "coefficients", "forms"):
            _get(od, key, "ordern")
        _table(od, "observation", "ordern")
