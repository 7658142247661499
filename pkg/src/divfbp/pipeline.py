"""Orchestration shared by the command line: solve, extract, assemble, simulate and audit."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .boundary import FreeBoundary, boundary_from_surface, invert_boundary, six_way_consistency
from .config import RunConfig, csv_text
from .dividend import (DividendSolution, assemble_V, creation_residual_at_zero, default_pi_grid,
                       dividend_checks, generator_residual, hjb_audit, jump_band, local_gradient,
                       smooth_fit_audit, structural_checks, v_pipi_field, value_at)
from .fbp import (Grid2D, SolverConfig, ValueSurface, apply_boundary_conditions, assemble_operator,
                  interpolate_to, obstacle_field, solve_obstacle, solve_value_surface)
from .full_info import FullInfoSolution, solve_full_info, solve_full_info_psor
from .mc import (McConfig, d_table, eval_stopping_value, full_info_threshold_mc, simulate_dividend_strategy,
                 sup_tail_oracle)
from .params import CaseTag, ModelParams, to_phi, validate, y_ell


def params_of(block: dict) -> ModelParams:
    return ModelParams.from_dict(block)


def solver_config(cfg: RunConfig) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(omega=s["omega"], tol=s["tol"], max_iter=s["max_iter"], check_every=s["check_every"])


def mc_config(cfg: RunConfig, **changes) -> McConfig:
    m = dict(cfg["mc"])
    m.update(changes)
    return McConfig(**m)


def full_info_of(params: ModelParams, cfg: RunConfig) -> FullInfoSolution:
    fi = solve_full_info(params)
    grid_1d = np.linspace(0.0, 2 * fi.a_star + 4 * params.sigma / math.sqrt(params.rho),
                          cfg["full_info"]["curve_points"])
    return solve_full_info(params, grid_1d=grid_1d)


def grid_of(params: ModelParams, a_star: float, cfg: RunConfig) -> Grid2D:
    g = cfg["grid"]
    default = Grid2D.default(params, a_star, g["nx"], g["ny"], g["x_margin"], g["y_margin"])
    x_max = default.x_nodes[-1] if g["x_max"] is None else g["x_max"]
    y_min = default.y_nodes[0] if g["y_min"] is None else g["y_min"]
    y_max = default.y_nodes[-1] if g["y_max"] is None else g["y_max"]
    return Grid2D.uniform(float(x_max), float(y_min), float(y_max), g["nx"], g["ny"])


def coarse_of(grid: Grid2D) -> Grid2D:
    nx, ny = grid.shape
    return Grid2D.uniform(float(grid.x_nodes[-1]), float(grid.y_nodes[0]), float(grid.y_nodes[-1]),
                          (nx + 1) // 2, (ny + 1) // 2)


def solve_on(params, grid, full_info, config, initial=None) -> ValueSurface:
    op = apply_boundary_conditions(assemble_operator(grid, params), grid, params, full_info)
    return solve_obstacle(op, obstacle_field(grid, params), config, initial)


@dataclass
class CaseRun:
    params: ModelParams
    tag: CaseTag
    full_info: FullInfoSolution
    surface: ValueSurface
    boundary: FreeBoundary
    coarse: ValueSurface | None = None
    dividend: DividendSolution | None = None
    timings: dict = field(default_factory=dict)


def solve_case(params: ModelParams, cfg: RunConfig, keep_coarse: bool = False) -> CaseRun:
    """Full information, value surface and free boundary for one parameter set.

    With warm starts the half-resolution solve is the same one the fine solve
    would run internally, so keeping it costs nothing extra.
    """
    tag = validate(params)
    t0 = time.perf_counter()
    fi = full_info_of(params, cfg)
    grid = grid_of(params, fi.a_star, cfg)
    config = solver_config(cfg)
    coarse = None
    if cfg["solver"]["warm_start"] and min(grid.shape) > 60:
        coarse = solve_value_surface(params, coarse_of(grid), fi, config, warm_start=True)
        surface = solve_on(params, grid, fi, config, interpolate_to(coarse, grid))
    else:
        if keep_coarse:
            coarse = solve_value_surface(params, coarse_of(grid), fi, config, warm_start=False)
        surface = solve_on(params, grid, fi, config)
    run = CaseRun(params, tag, fi, surface, boundary_from_surface(surface, fi.a_star),
                  coarse if keep_coarse else None)
    run.timings["solve"] = time.perf_counter() - t0
    return run


def assemble_case(run: CaseRun, cfg: RunConfig, surface: ValueSurface | None = None,
                  boundary: FreeBoundary | None = None) -> DividendSolution:
    surface = surface or run.surface
    boundary = boundary or run.boundary
    a = cfg["assemble"]
    sol = assemble_V(surface, boundary, default_pi_grid(a["n_pi"], a["pi_margin"]))
    v_pipi_field(sol, boundary, run.params)
    if surface is run.surface:
        run.dividend = sol
    return sol


# --------------------------------------------------------------------------- artifact tables

def surface_columns(surface: ValueSurface) -> dict:
    xx, yy = np.meshgrid(surface.grid.x_nodes, surface.grid.y_nodes, indexing="ij")
    return {"x": xx, "y": yy, "u_hat": surface.u_hat, "g": surface.obstacle,
            "active": surface.active_mask.astype(int)}


def residual_columns(surface: ValueSurface) -> dict:
    xx, yy = np.meshgrid(surface.grid.x_nodes, surface.grid.y_nodes, indexing="ij")
    return {"x": xx, "y": yy, "residual": surface.residual}


def boundary_tables(run: CaseRun, cfg: RunConfig) -> dict:
    fb = run.boundary
    x = run.surface.grid.x_nodes
    a = cfg["assemble"]
    pi = default_pi_grid(a["n_pi"], a["pi_margin"])
    phi = to_phi(pi)
    inv = invert_boundary(fb, x, phi, pi)
    return {
        "b.csv": {"y": fb.y_nodes, "b": fb.b_of_y, "b_raw": fb.b_raw},
        "chi.csv": {"x": x, "chi": inv["chi"]},
        "psi.csv": {"x": x, "psi": inv["psi"]},
        "c.csv": {"phi": phi, "c": inv["c"]},
        "d.csv": {"pi": pi, "d": inv["d"]},
        "lambda.csv": {"x": x, "lambda": inv["lambda"]},
    }


def boundary_summary(run: CaseRun) -> dict:
    fb = run.boundary
    g = run.surface.grid
    return {
        "y_star_0": fb.y_star_0,
        "a_star": run.full_info.a_star,
        "a_star_gap": float(np.max(fb.b_of_y) - run.full_info.a_star),
        "max_monotonicity_violation": fb.monotonicity_discrepancy,
        "six_way_mismatches": six_way_consistency(fb, g.x_nodes, g.y_nodes),
        "hx": g.hx,
    }


def dividend_columns(sol: DividendSolution) -> dict:
    xx, pp = np.meshgrid(sol.x, sol.pi, indexing="ij")
    return {"x": xx, "pi": pp, "V": sol.v, "U": sol.u, "v_pipi": sol.v_pipi}


# --------------------------------------------------------------------------- audit pieces

def hjb_budget(run: CaseRun, cfg: RunConfig) -> dict:
    """Budgets read off the half-resolution solution.

    The continuation budget is the worst finite-difference residual there;
    the closed-form budget is the 99th percentile of its stopping-set gap.
    """
    coarse = run.coarse
    if coarse is None:
        raise ValueError("the HJB budget needs the half-resolution surface")
    fb = boundary_from_surface(coarse, run.full_info.a_star)
    sol = assemble_case(run, cfg, coarse, fb)
    rep = hjb_audit(sol, fb, run.params, {"continuation": np.inf, "gradient": np.inf, "closed_form": np.inf})
    gap = _stopping_gap(sol, run.params)
    return {
        "continuation": rep["continuation_residual"]["max"],
        "gradient": cfg["solver"]["tol"],
        "closed_form": float(np.quantile(np.abs(gap), 0.99)) if gap.size else 0.0,
    }


def _stopping_gap(sol: DividendSolution, params: ModelParams) -> np.ndarray:
    closed = generator_residual(sol, sol.v_pipi)
    target = -params.rho * (sol.x[:, None] - sol.d[None, :])
    s_nodes = ~(sol.x[:, None] < sol.d[None, :] - 1e-12)
    interior = np.zeros_like(s_nodes)
    interior[1:-1, 1:-1] = True
    interior[:, jump_band(sol)] = False
    return (closed - target)[interior & s_nodes]


def creation_window(params: ModelParams, cfg: RunConfig) -> tuple[float, float]:
    lo, hi = cfg["verify"]["creation_window"]
    unit = params.sigma / params.theta
    yl = y_ell(params)
    return yl + lo * unit, yl + hi * unit


def stopping_points(run: CaseRun, cfg: RunConfig) -> list[tuple[float, float]]:
    """(x, phi) inside the continuation set, placed relative to the extracted d."""
    lam0 = float(run.boundary.lam(0.0))
    out = []
    for s, f in cfg["verify"]["stopping_points"]:
        pi = lam0 + s * (0.95 - lam0)
        out.append((f * float(run.boundary.d(pi)), pi / (1 - pi)))
    return out


def pde_mc_rows(run: CaseRun, cfg: RunConfig) -> list[dict]:
    base = mc_config(cfg, n_paths=cfg["verify"]["stopping_paths"])
    hx = run.surface.grid.hx
    rows = []
    for i, (x, phi) in enumerate(stopping_points(run, cfg)):
        est = eval_stopping_value(x, phi, run.boundary, run.params, base.replace(seed=base.seed + i))
        pde = value_at(run.surface, x, phi)
        grad = local_gradient(run.surface, x, phi)
        budget = 3 * est.std_error + 5 * hx * grad
        rows.append({"x": x, "phi": phi, "pde": pde, "mc": est.mean, "std_error": est.std_error,
                     "local_gradient": grad, "gap": abs(est.mean - pde), "budget": budget,
                     "truncation_fraction": est.truncation_fraction,
                     "pass": bool(abs(est.mean - pde) <= budget)})
    return rows


def dividend_rows(run: CaseRun, cfg: RunConfig) -> list[dict]:
    sol = run.dividend or assemble_case(run, cfg)
    dm = cfg["dividend_mc"]
    table = d_table(run.boundary)
    rows = []
    for i, (pi_t, x) in enumerate(cfg["verify"]["dividend_points"]):
        j = int(np.argmin(np.abs(sol.pi - pi_t)))
        pi = float(sol.pi[j])
        v = float(np.interp(x, sol.x, sol.v[:, j]))
        coarse_cfg = mc_config(cfg, n_paths=dm["n_paths"], dt=dm["dt"], horizon=dm["horizon"],
                               seed=cfg["mc"]["seed"] + 1000 + i)
        coarse = simulate_dividend_strategy(x, pi, run.boundary, run.params, coarse_cfg, table=table)
        fine = simulate_dividend_strategy(x, pi, run.boundary, run.params,
                                          coarse_cfg.replace(dt=dm["dt"] / 2), table=table)
        dt_gap = abs(coarse.mean - fine.mean)
        # points already in the stopping set pay x - d(pi) at once and match V to rounding
        budget = 3 * fine.std_error + 2 * dt_gap + 1e-12 * max(1.0, abs(v))
        rows.append({"pi": pi, "x": x, "d": float(sol.d[j]), "V": v, "mc": fine.mean,
                     "mc_coarse_dt": coarse.mean, "std_error": fine.std_error, "dt_gap": dt_gap,
                     "error": abs(fine.mean - v), "budget": budget,
                     "pass": bool(abs(fine.mean - v) <= budget)})
    return rows


def determinism_probe(cfg: RunConfig) -> dict:
    """Run a miniature solve, boundary and simulation twice and compare the serialised bytes."""
    v = cfg["verify"]
    params = params_of(cfg["params"])
    n = v["probe_grid"]

    def once() -> str:
        fi = solve_full_info(params)
        grid = Grid2D.default(params, fi.a_star, n, n)
        surface = solve_on(params, grid, fi, solver_config(cfg))
        fb = boundary_from_surface(surface, fi.a_star)
        mcc = mc_config(cfg, n_paths=v["probe_paths"], horizon=5.0, dt=1e-2)
        x, phi = 0.5 * fi.a_star, 1.0
        stop = eval_stopping_value(x, phi, fb, params, mcc)
        div = simulate_dividend_strategy(x, 0.5, fb, params, mcc)
        return (csv_text(surface_columns(surface), "probe")
                + csv_text({"b": fb.b_of_y}, "probe")
                + csv_text({"mean": [stop.mean, div.mean], "se": [stop.std_error, div.std_error]}, "probe"))

    first, second = once(), once()
    return {"bytes": len(first), "identical": first == second}
