"""Command-line front end.

Every subcommand reads one scenario file and writes ``summary.txt`` plus
CSV tables into ``--out``. Output depends only on the config and the flags.
"""

from __future__ import annotations

import argparse
import io
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from . import harness as hs
from .boundary import build_boundary_algebra, pairing_residual
from .constrained import inverse_weight, solve_constrained_estimator, solve_constrained_filter
from .continuous import (
    EllipsoidG,
    FunctionalTarget,
    estimate_from_observation,
    evaluate_cost,
    noise_quadratic,
    prior_quadratic,
    solve_estimator,
    solve_filter,
)
from .errors import MinimaxError, ParseError
from .linear_bvp import PiecewiseTrajectory
from .oracle import constrained_oracle, continuous_oracle, ordern_oracle, point_oracle
from .ordern import solve_functional_estimator, solve_functional_filter, solve_rhs_estimator, solve_rhs_filter
from .point import point_cost, point_estimate, solve_point_estimator, solve_point_filter
from .riccati import (
    estimate_from_control,
    solve_elimination_estimator,
    solve_elimination_generic,
    solve_U_optimal,
    solve_U_optimal_filter,
)

COMMANDS = ("solve", "filter", "point", "eliminate", "ordern", "rhs", "oracle", "simulate", "verify")
REQUIRED_MODES = {
    "point": ("point",),
    "eliminate": ("elimination",),
    "ordern": ("ordern-functional", "ordern-rhs"),
    "rhs": ("ordern-functional", "ordern-rhs"),
}
ORDERN = ("ordern-functional", "ordern-rhs")


# ------------------------------------------------------------- reports


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in np.ravel(v)) + "]"
    return str(v)


@dataclass
class Report:
    """Ordered summary entries and named CSV tables."""

    command: str
    mode: str

    def __post_init__(self):
        self.entries = []
        self.tables = {}

    def add(self, key: str, value):
        self.entries.append((key, value))

    def table(self, name: str, description: str, header: list, rows):
        buf = io.StringIO()
        buf.write(f"# {description}\n")
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(x) for x in row) + "\n")
        self.tables[name] = buf.getvalue()

    def trajectory(self, name: str, description: str, traj: PiecewiseTrajectory, names: list):
        self.tables[name] = f"# {description}; side R marks the first node of an interval\n" + traj.to_csv(names=names)

    def summary(self) -> str:
        lines = [f"command = {self.command}", f"mode = {self.mode}"]
        lines += [f"{k} = {_fmt(v)}" for k, v in self.entries]
        return "\n".join(lines) + "\n"

    def write(self, out: Optional[Path]):
        if out is None:
            return
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(self.summary())
        for name, text in self.tables.items():
            (out / name).write_text(text)


def _names(prefix: str, d: int) -> list:
    return [f"{prefix}{j + 1}" for j in range(d)]


# ------------------------------------------------------------- solvers


def _solve_first_order(cfg):
    """Solution and context for the continuous-observation modes."""
    mode = cfg.mode
    if mode == "continuous":
        spec, alg, G, obs, target, grid = cfg.continuous()
        sol = solve_estimator(spec, alg, G, obs, target, grid)
        return dict(spec=spec, alg=alg, G=G, obs=obs, target=target, grid=grid, sol=sol, free=False)
    if mode == "constrained":
        spec, alg, Q2, Q2i, obs, target, grid = cfg.constrained()
        sol = solve_constrained_estimator(spec, alg, Q2, obs, target, grid, Q2_inv=Q2i)
        G = EllipsoidG.from_inverse_weights(
            np.zeros((spec.m, spec.m)), np.zeros((spec.n - spec.m, spec.n - spec.m)), inverse_weight(spec.n, Q2, Q2i), spec.f, spec.f0, spec.f1
        )
        return dict(spec=spec, alg=alg, G=G, obs=obs, target=target, grid=grid, sol=sol, free=True, Q2=Q2, Q2i=Q2i)
    if mode == "elimination":
        elim, a1, a2, s, grid, variant = cfg.elimination()
        sol = solve_elimination_generic(elim, a1, a2, s, grid)
        spec = elim.spec()
        alg = build_boundary_algebra(spec.B0, spec.B1)
        return dict(
            spec=spec, alg=alg, G=elim.ellipsoid(), obs=elim.observation("q1sq"), target=sol.target, grid=grid, sol=sol, free=False, elim=elim
        )
    raise ParseError(f"mode {mode} has no interval-observation solution")


def _report_first_order(rep: Report, ctx: dict):
    sol, spec = ctx["sol"], ctx["spec"]
    cost = evaluate_cost(sol, ctx["alg"], ctx["G"], ctx["obs"])
    rep.add("nodes", sol.grid.total_nodes)
    rep.add("sigma", sol.sigma)
    rep.add("sigma2", sol.sigma2)
    rep.add("c_hat", sol.c_hat)
    rep.add("cost_at_u_hat", cost)
    rep.add("duality_gap", abs(cost - sol.sigma2))
    rep.add("condition", sol.condition)
    for k, v in sorted(sol.diagnostics.items()):
        rep.add(f"diag.{k}", v)
    n = spec.n
    rep.trajectory("z.csv", "adjoint state z", sol.z, _names("z", n))
    rep.trajectory("p.csv", "dual state p", sol.p, _names("p", n))
    rep.trajectory("u_hat.csv", "optimal weight u_hat (zero off the window)", sol.u_hat, _names("u", ctx["obs"].l))


def cmd_solve(cfg, rep: Report):
    mode = cfg.mode
    if mode == "point":
        return cmd_point(cfg, rep)
    if mode == "elimination":
        return cmd_eliminate(cfg, rep)
    if mode in ORDERN:
        return cmd_ordern(cfg, rep, "rhs" if mode == "ordern-rhs" else "functional")
    _report_first_order(rep, _solve_first_order(cfg))


def cmd_point(cfg, rep: Report):
    spec, alg, G, obsP, a, s, grid = cfg.point()
    sol = solve_point_estimator(spec, alg, G, obsP, a, s, grid)
    cost = point_cost(sol, alg, G, obsP)
    rep.add("nodes", grid.total_nodes)
    rep.add("sigma", sol.sigma)
    rep.add("sigma2", sol.sigma2)
    rep.add("c_hat", sol.c_hat)
    rep.add("cost_at_u_hat", cost)
    rep.add("duality_gap", abs(cost - sol.sigma2))
    rep.add("gap_index", sol.i0)
    rep.add("condition", sol.condition)
    for k, v in sorted(sol.diagnostics.items()):
        rep.add(f"diag.{k}", v)
    rep.table("u_hat.csv", "optimal weight per observation point", ["t"] + _names("u", spec.n), [[t, *u] for t, u in zip(obsP.times, sol.u_hat)])
    rep.trajectory("z.csv", "adjoint state z", sol.z, _names("z", spec.n))
    rep.trajectory("p.csv", "dual state p", sol.p, _names("p", spec.n))


def cmd_eliminate(cfg, rep: Report):
    elim, a1, a2, s, grid, variant = cfg.elimination()
    est = solve_elimination_estimator(elim, a1, a2, s, grid)
    uopt = solve_U_optimal(elim, a1, a2, s, variant=variant)
    sw = elim.sweep
    rep.add("nodes", grid.total_nodes)
    rep.add("b", est.b)
    rep.add("sigma", est.sigma)
    rep.add("sigma2", est.sigma2)
    rep.add("cost_at_u_hat", est.cost)
    rep.add("duality_gap", abs(est.cost - est.sigma2))
    rep.add("variant", variant)
    rep.add("u_optimal.sigma2", uopt.sigma2)
    for k, v in sorted(uopt.diagnostics.items()):
        rep.add(f"u_optimal.{k}", v)
    n = elim.n
    rep.table("P.csv", "Riccati solution P(t), row-major entries", ["t"] + [f"P{i + 1}{j + 1}" for i in range(n) for j in range(n)],
              [[t, *P.ravel()] for t, P in zip(sw.ts, sw.P_values)])
    rep.trajectory("z.csv", "adjoint state z of the eliminated system", est.z, _names("z", 2 * n))
    rep.trajectory("u_hat.csv", "optimal weight u_hat", est.u_hat, _names("u", est.u_hat.values[0].shape[1]))


def _ordern_solution(cfg, kind: str):
    prob, obs, W, l0, lvec, grid = cfg.ordern()
    if kind == "rhs":
        sol = solve_rhs_estimator(prob, l0, lvec, obs, W, grid)
    else:
        sol = solve_functional_estimator(prob, l0, obs, W, grid)
    return prob, obs, W, l0, lvec, grid, sol


def cmd_ordern(cfg, rep: Report, kind: str = "functional"):
    prob, obs, W, l0, lvec, grid, sol = _ordern_solution(cfg, kind)
    nulls = prob.nulls
    rep.add("estimator", kind)
    rep.add("nodes", grid.total_nodes)
    rep.add("sigma", sol.sigma)
    rep.add("sigma2", sol.sigma2)
    rep.add("c_hat", sol.c_hat)
    rep.add("cost_at_u_hat", sol.cost)
    rep.add("condition", sol.condition)
    rep.add("dim_primal_null_space", nulls.dim_primal)
    rep.add("dim_adjoint_null_space", nulls.dim_adjoint)
    rep.add("green_residual", prob.structure.green_residual)
    for k, v in sorted(nulls.residuals.items()):
        rep.add(f"null.{k}", v)
    for k, v in sorted(sol.diagnostics.items()):
        rep.add(f"diag.{k}", v)
    n = prob.spec.n
    rep.trajectory("z.csv", "adjoint-side unknown and its derivatives", sol.z, [f"z_d{j}" for j in range(n)])
    rep.trajectory("p.csv", "primal-side unknown and its derivatives", sol.p, [f"p_d{j}" for j in range(n)])
    if obs.kind == "K":
        u = np.asarray(sol.u_hat).reshape(obs.M, -1)
        rep.table("u_hat.csv", "optimal weight per observation node and kernel", ["t_node"] + _names("u", u.shape[1]),
                  [[t, *row] for t, row in zip(obs.t_nodes, u)])
    else:
        rows = [[t, v] for k in range(grid.K) if sol.u_hat[k] is not None for t, v in zip(grid.nodes(k), sol.u_hat[k])]
        rep.table("u_hat.csv", "optimal weight on the window nodes", ["t", "u"], rows)


# --------------------------------------------------------------- filter


def _synthetic_observation(cfg, l: int, T0: float, T1: float):
    """Deterministic smooth data from the seed when the config has none."""
    rng = hs.sample_rng(cfg.seed, 0)
    prof = hs._smooth_profile(rng, T1 - T0, l)
    return lambda ts: prof(np.atleast_1d(ts) - T0)


def _data(cfg, path: str, shape=None):
    data = cfg.document.get("data", {})
    if "y" not in data:
        return None
    return cfgmod.parse_function(data["y"], "data.y", shape)


def cmd_filter(cfg, rep: Report):
    mode = cfg.mode
    if mode == "point":
        spec, alg, G, obsP, a, s, grid = cfg.point()
        sol = solve_point_estimator(spec, alg, G, obsP, a, s, grid)
        raw = cfg.document.get("data", {}).get("y")
        if raw is not None:
            ys = list(cfgmod._array(raw, "data.y").reshape(obsP.N, spec.n))
        else:
            rng = hs.sample_rng(cfg.seed, 0)
            ys = [rng.standard_normal(spec.n) for _ in range(obsP.N)]
        filt = solve_point_filter(spec, alg, G, obsP, ys, grid)
        _filter_report(rep, filt.estimate(a, s), point_estimate(sol, ys), filt, spec.n)
        return
    if mode in ORDERN:
        kind = "rhs" if mode == "ordern-rhs" else "functional"
        prob, obs, W, l0, lvec, grid, sol = _ordern_solution(cfg, kind)
        if obs.kind == "K":
            raw = cfg.document.get("data", {}).get("y")
            shape = (obs.M, obs.N)
            y = cfgmod._array(raw, "data.y").reshape(shape) if raw is not None else hs.sample_rng(cfg.seed, 0).standard_normal(shape)
        else:
            y = _data(cfg, "data.y", ()) or (lambda ts, f=_synthetic_observation(cfg, 1, grid.start, grid.end): f(ts)[:, 0])
        if kind == "rhs":
            filt, val = solve_rhs_filter(prob, obs, W, y, l0, lvec, grid)
        else:
            filt, val = solve_functional_filter(prob, obs, W, y, l0, grid)
        _filter_report(rep, val, sol.estimate(y), filt, prob.spec.n, jets=True)
        return
    ctx = _solve_first_order(cfg)
    obs, grid, sol = ctx["obs"], ctx["grid"], ctx["sol"]
    y = _data(cfg, "data.y", (obs.l,)) or _synthetic_observation(cfg, obs.l, grid.start, grid.end)
    if mode == "elimination":
        variant = cfg.variant
        elim = ctx["elim"]
        u = solve_U_optimal(elim, *_elim_target(cfg), variant=variant, grid=grid)
        filt = solve_U_optimal_filter(elim, y, grid, variant)
        _filter_report(rep, filt.estimate(u.b, u.s), estimate_from_control(u.u_hat, y), filt, 2 * elim.n)
        rep.add("variant", variant)
        return
    if mode == "constrained":
        filt = solve_constrained_filter(ctx["spec"], ctx["alg"], ctx["Q2"], obs, y, grid, Q2_inv=ctx["Q2i"])
    else:
        filt = solve_filter(ctx["spec"], ctx["alg"], ctx["G"], obs, y, grid)
    t = ctx["target"]
    _filter_report(rep, filt.estimate(t.a, t.s), estimate_from_observation(sol, obs, y), filt, ctx["spec"].n)


def _elim_target(cfg):
    _, a1, a2, s, _, _ = cfg.elimination()
    return a1, a2, s


def _filter_report(rep: Report, filt_value: float, rep_value: float, filt, n: int, jets: bool = False):
    rep.add("filter_estimate", filt_value)
    rep.add("weight_estimate", rep_value)
    rep.add("representation_difference", abs(filt_value - rep_value))
    rep.add("condition", filt.condition)
    names = [f"d{j}" for j in range(n)] if jets else [str(j + 1) for j in range(n)]
    rep.trajectory("phi_hat.csv", "filtered state", filt.phi_hat, ["phi_" + s for s in names])
    rep.trajectory("p_hat.csv", "filter multiplier", filt.p_hat, ["p_" + s for s in names])


# --------------------------------------------------------------- oracle


def oracle_minimax(cfg):
    """(sigma_solver, OracleResult, u_solver_nodes) for the configured mode."""
    mode = cfg.mode
    if mode == "continuous":
        spec, alg, G, obs, target, grid = cfg.continuous()
        sol = solve_estimator(spec, alg, G, obs, target, grid)
        return sol.sigma, continuous_oracle(spec, G, obs, target, grid)
    if mode == "constrained":
        spec, alg, Q2, Q2i, obs, target, grid = cfg.constrained()
        sol = solve_constrained_estimator(spec, alg, Q2, obs, target, grid, Q2_inv=Q2i)
        q2 = Q2 if Q2 is not None else inverse_weight(spec.n, None, Q2i).inverse()
        return sol.sigma, constrained_oracle(spec, q2, obs, target, grid)
    if mode == "point":
        spec, alg, G, obsP, a, s, grid = cfg.point()
        sol = solve_point_estimator(spec, alg, G, obsP, a, s, grid)
        return sol.sigma, point_oracle(spec, G, obsP.times, obsP.weights, a, s, grid)
    if mode == "elimination":
        elim, a1, a2, s, grid, _ = cfg.elimination()
        sol = solve_elimination_generic(elim, a1, a2, s, grid)
        return sol.sigma, continuous_oracle(elim.spec(), elim.ellipsoid(), elim.observation("q1sq"), sol.target, grid)
    kind = "rhs" if mode == "ordern-rhs" else "functional"
    prob, obs, W, l0, lvec, grid, sol = _ordern_solution(cfg, kind)
    return sol.sigma, ordern_oracle(prob.spec, obs, W, grid.total_nodes, l0=l0, lvec=lvec, mode=kind)


def cmd_oracle(cfg, rep: Report):
    sigma, orc = oracle_minimax(cfg)
    rel = abs(orc.sigma - sigma) / max(sigma, 1e-12)
    rep.add("nodes", cfg.nodes)
    rep.add("sigma_solver", sigma)
    rep.add("sigma_oracle", orc.sigma)
    rep.add("rel_diff", rel)
    rep.add("oracle_condition", orc.condition)
    rep.add("oracle_min_eig", orc.min_eig)
    rep.table("oracle.csv", "solver vs brute-force minimax", ["nodes", "sigma_solver", "sigma_oracle", "rel_diff"], [[cfg.nodes, sigma, orc.sigma, rel]])
    print(f"nodes={cfg.nodes} sigma_solver={sigma:.12g} sigma_oracle={orc.sigma:.12g} rel_diff={rel:.3e}")


# ------------------------------------------------------------- simulate


def cmd_simulate(cfg, rep: Report):
    samples, seed = cfg.samples, cfg.seed
    draws = int(cfg.document.get("draws", 200))
    mode = cfg.mode
    if mode == "point":
        spec, alg, G, obsP, a, s, grid = cfg.point()
        sol = solve_point_estimator(spec, alg, G, obsP, a, s, grid)
        F = hs.worst_case_F(sol, alg, G)
        nd = hs.point_worst_case_noise(sol, obsP)
        res = hs.monte_carlo(hs.point_deterministic_error(spec, sol, obsP, F), [nd], samples, seed)
        guar = hs.point_guarantee_check(spec, sol, obsP, G, draws=draws, samples=min(samples, 2000), seed=seed)
        g_val = F.g_form
    elif mode in ORDERN:
        kind = "rhs" if mode == "ordern-rhs" else "functional"
        prob, obs, W, l0, lvec, grid, sol = _ordern_solution(cfg, kind)
        F = hs.ordern_worst_case_F(prob, sol, W, l0, lvec)
        nd = hs.ordern_worst_case_noise(sol)
        res = hs.ordern_monte_carlo(prob, sol, F, [nd], samples, seed, l0, lvec)
        guar = hs.ordern_guarantee_check(prob, sol, W, l0, lvec, draws=draws, samples=min(samples, 2000), seed=seed)
        g_val = F.g_form
    else:
        ctx = _solve_first_order(cfg)
        spec, alg, G, obs, sol = ctx["spec"], ctx["alg"], ctx["G"], ctx["obs"], ctx["sol"]
        F = hs.worst_case_F(sol, alg, G)
        nd = hs.worst_case_noise(sol, obs)
        res = hs.monte_carlo_error(spec, sol, obs, F, [nd], samples, seed)
        guar = hs.guarantee_check(spec, sol, obs, G, draws=draws, samples=min(samples, 2000), seed=seed, free_boundary=ctx["free"])
        g_val = F.g_form
    summ = hs.saturation_summary(sol.sigma2, res)
    rep.add("samples", samples)
    rep.add("seed", seed)
    rep.add("sigma2", sol.sigma2)
    rep.add("worst_case_g_form", g_val)
    rep.add("worst_case_noise_constraint", nd.constraint)
    for k in ("mse", "stderr", "ratio", "within_3se", "deterministic", "constraint_mean"):
        rep.add(f"saturation.{k}", summ[k])
    rep.add("guarantee.draws", guar.draws)
    rep.add("guarantee.max_mse", float(np.max(guar.mse)))
    rep.add("guarantee.worst_excess", guar.worst_excess)
    rep.add("guarantee.holds", guar.holds)
    rep.table("guarantee.csv", "random admissible draws: empirical MSE against sigma^2", ["draw", "mse", "stderr", "g_form", "noise_budget"],
              [[i, m, s, g, b] for i, (m, s, g, b) in enumerate(zip(guar.mse, guar.stderr, guar.g_forms, guar.noise_budgets))])
    errs = res.errors
    rep.table("saturation.csv", "squared error per sample at the saturating pair", ["sample", "error", "squared_error"],
              [[i, e, e * e] for i, e in enumerate(errs)])


# --------------------------------------------------------------- verify


def _check(rows: list, name: str, value: float, tol: float):
    rows.append((name, value, tol, bool(value <= tol)))


def cmd_verify(cfg, rep: Report):
    """Invariant suite for the configured mode."""
    rows = []
    tol = cfg.tol
    seed = cfg.seed
    mode = cfg.mode
    if mode in ("continuous", "constrained", "elimination"):
        ctx = _solve_first_order(cfg)
        spec, alg, G, obs, sol, grid = ctx["spec"], ctx["alg"], ctx["G"], ctx["obs"], ctx["sol"], ctx["grid"]
        scale = max(1.0, sol.sigma2)
        cost = prior_quadratic(alg, G, sol.z) + noise_quadratic(grid, obs, sol.u_hat)
        _check(rows, "duality |sigma^2 - I(u_hat)|", abs(sol.sigma2 - cost) / scale, tol)
        rng = hs.sample_rng(seed, 0)
        v, w = rng.standard_normal(spec.n), rng.standard_normal(spec.n)
        _check(rows, "boundary pairing identity", pairing_residual(alg, spec.B0, spec.B1, v, w), 1e-12)
        worst = 0.0
        for i in range(5):
            y = _synthetic_observation(cfg.with_overrides(seed=seed + i + 1), obs.l, grid.start, grid.end)
            if mode == "constrained":
                filt = solve_constrained_filter(spec, alg, ctx["Q2"], obs, y, grid, Q2_inv=ctx["Q2i"])
            else:
                filt = solve_filter(spec, alg, G, obs, y, grid)
            t: FunctionalTarget = sol.target
            worst = max(worst, abs(filt.estimate(t.a, t.s) - estimate_from_observation(sol, obs, y)))
        _check(rows, "representation equivalence (5 draws)", worst / max(1.0, sol.sigma), tol)
    elif mode == "point":
        spec, alg, G, obsP, a, s, grid = cfg.point()
        sol = solve_point_estimator(spec, alg, G, obsP, a, s, grid)
        _check(rows, "duality |sigma^2 - I(u_hat)|", abs(sol.sigma2 - point_cost(sol, alg, G, obsP)) / max(1.0, sol.sigma2), tol)
        _check(rows, "p continuity at points", sol.diagnostics["p_continuity"], 1e-9)
        _check(rows, "z jump = u_hat", sol.diagnostics["jump_residual"], 1e-9)
        worst = 0.0
        for i in range(5):
            ys = [hs.sample_rng(seed, i + 1).standard_normal(spec.n) + j for j in range(obsP.N)]
            filt = solve_point_filter(spec, alg, G, obsP, ys, grid)
            worst = max(worst, abs(filt.estimate(a, s) - point_estimate(sol, ys)))
        _check(rows, "representation equivalence (5 draws)", worst / max(1.0, sol.sigma), tol)
    else:
        kind = "rhs" if mode == "ordern-rhs" else "functional"
        prob, obs, W, l0, lvec, grid, sol = _ordern_solution(cfg, kind)
        _check(rows, "green identity residual", prob.structure.green_residual, 1e-7)
        for k, v in sorted(prob.nulls.residuals.items()):
            if k != "index_mismatch":
                _check(rows, f"null space residual {k}", v, 1e-8)
        _check(rows, "index consistency", abs(prob.nulls.residuals["index_mismatch"]), 0.0)
        _check(rows, "duality |sigma^2 - I(u_hat)|", sol.diagnostics["duality_gap"] / max(1.0, sol.sigma2), tol)
        worst = 0.0
        for i in range(5):
            if obs.kind == "K":
                y = hs.sample_rng(seed, i + 1).standard_normal((obs.M, obs.N))
            else:
                f = _synthetic_observation(cfg.with_overrides(seed=seed + i + 1), 1, grid.start, grid.end)
                y = lambda ts, f=f: f(ts)[:, 0]  # noqa: E731
            if kind == "rhs":
                _, val = solve_rhs_filter(prob, obs, W, y, l0, lvec, grid)
            else:
                _, val = solve_functional_filter(prob, obs, W, y, l0, grid)
            worst = max(worst, abs(val - sol.estimate(y)))
        _check(rows, "representation equivalence (5 draws)", worst / max(1.0, sol.sigma), tol)
    ok = all(r[3] for r in rows)
    rep.add("checks", len(rows))
    rep.add("all_passed", ok)
    rep.table("verify.csv", "invariant checks", ["check", "value", "tolerance", "pass"], rows)
    width = max(len(r[0]) for r in rows)
    for name, value, tl, passed in rows:
        print(f"{'PASS' if passed else 'FAIL'}  {name:<{width}}  {value:.3e}  (tol {tl:.0e})")
    return 0 if ok else 1


# ----------------------------------------------------------------- entry

HANDLERS = {
    "solve": cmd_solve,
    "filter": cmd_filter,
    "point": cmd_point,
    "eliminate": cmd_eliminate,
    "ordern": lambda cfg, rep: cmd_ordern(cfg, rep, "functional"),
    "rhs": lambda cfg, rep: cmd_ordern(cfg, rep, "rhs"),
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def run_config(command: str, cfg: "cfgmod.ProblemConfig", out: Optional[Path] = None) -> tuple:
    """Run one subcommand; returns (exit code, report)."""
    if command not in HANDLERS:
        raise ParseError(f"unknown command {command!r}")
    allowed = REQUIRED_MODES.get(command)
    if allowed and cfg.mode not in allowed:
        raise ParseError(f"command {command} needs mode {' or '.join(allowed)}, config has {cfg.mode}")
    rep = Report(command, cfg.mode)
    code = HANDLERS[command](cfg, rep) or 0
    rep.write(out)
    return code, rep


class _Parser(argparse.ArgumentParser):
    """Usage errors share the parse-error exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ParseError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="minimaxbvp", description="Minimax estimation for linear boundary value problems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="scenario file (TOML)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--nodes", type=int, default=None, help="total grid nodes")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--samples", type=int, default=None, help="Monte Carlo samples")
        p.add_argument("--mode-variant", dest="variant", choices=cfgmod.VARIANTS, default=None,
                       help="noise weight power in the eliminated U-optimal problem")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config).with_overrides(
            nodes=args.nodes, seed=args.seed, tol=args.tol, samples=args.samples, variant=args.variant
        )
        if cfg.nodes < 9:
            raise ParseError("--nodes: at least 9 grid nodes are required")
        code, rep = run_config(args.command, cfg, args.out)
    except MinimaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.command not in ("verify", "oracle"):
        sys.stdout.write(rep.summary())
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
