"""Dividend value V(x, pi) = int_0^x U(z, pi) dz rebuilt from the stopping surface, and its audits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator

from .boundary import FreeBoundary
from .fbp import ValueSurface
from .params import ModelParams


class OutOfGridCurve(ValueError):
    pass


def default_pi_grid(n: int = 199, margin: float = 0.005) -> np.ndarray:
    return np.linspace(margin, 1 - margin, n)


@dataclass
class DividendSolution:
    params: ModelParams
    x: np.ndarray = field(repr=False)
    pi: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    v_pipi: np.ndarray | None = field(default=None, repr=False)
    hjb_report: dict | None = None

    @property
    def hx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def hpi(self) -> float:
        return float(self.pi[1] - self.pi[0])


def _excess_interpolator(surface: ValueSurface):
    return RegularGridInterpolator((surface.grid.x_nodes, surface.grid.y_nodes), surface.excess)


def assemble_V(surface: ValueSurface, boundary: FreeBoundary, pi_grid=None, x_grid=None) -> DividendSolution:
    """Sample U along the lines of constant phi and integrate it in x.

    On the line for a given pi the ordinate is y = (sigma/theta) ln(phi) - x
    and U = 1 + (u_hat - g) / (1 + phi); U is exactly 1 once x >= d(pi), so
    only the stretch x < d(pi) has to lie inside the truncated rectangle.
    """
    p = surface.params
    pi = default_pi_grid() if pi_grid is None else np.asarray(pi_grid, dtype=float)
    x = surface.grid.x_nodes.copy() if x_grid is None else np.asarray(x_grid, dtype=float)
    if x[0] != 0.0 or np.any(np.diff(x) <= 0):
        raise ValueError("x_grid must start at 0 and increase")
    if np.any((pi <= 0) | (pi >= 1)):
        raise ValueError("pi_grid must lie in (0, 1)")
    phi = pi / (1 - pi)
    d = boundary.d(pi)
    xx, pp = np.meshgrid(x, pi, indexing="ij")
    yy = p.sigma / p.theta * np.log(phi)[None, :] - xx
    need = xx < d[None, :] - 1e-12
    xs, ys = surface.grid.x_nodes, surface.grid.y_nodes
    outside = need & ((yy < ys[0]) | (yy > ys[-1]) | (xx > xs[-1]))
    if outside.any():
        i, j = np.argwhere(outside)[0]
        raise OutOfGridCurve(f"(x={x[i]!r}, pi={pi[j]!r}) maps to y={yy[i, j]!r} outside the solved rectangle")
    u = np.ones_like(xx)
    if need.any():
        interp = _excess_interpolator(surface)
        pts = np.stack([xx[need], yy[need]], axis=-1)
        u[need] = 1.0 + np.maximum(interp(pts), 0.0) / (1.0 + np.broadcast_to(phi, xx.shape)[need])
    v = cumulative_trapezoid(u, x, axis=0, initial=0.0)
    return DividendSolution(p, x, pi, u, v, d)


def _gradients(sol: DividendSolution):
    u_x = np.gradient(sol.u, sol.x, axis=0)
    u_pi = np.gradient(sol.u, sol.pi, axis=1)
    return u_x, u_pi


def _column_at(values, x, points):
    """Linear interpolation of every pi-column of ``values`` at its own abscissa."""
    out = np.empty(points.size)
    for j, xq in enumerate(points):
        out[j] = np.interp(xq, x, values[:, j])
    return out


def v_pipi_field(sol: DividendSolution, boundary: FreeBoundary, params: ModelParams) -> np.ndarray:
    """Second belief-derivative of V written through U and its first derivatives.

    The combination is evaluated at x ^ d_+(pi), so the field is constant in x
    on the stopping set.
    """
    p = params
    u_x, u_pi = _gradients(sol)
    d_plus = boundary.d_plus(sol.pi)
    pi = sol.pi
    scale = (p.theta * pi * (1 - pi)) ** 2
    out = np.empty_like(sol.u)
    x = sol.x
    d_col = np.minimum(d_plus, x[-1])
    for j in range(pi.size):
        xs = np.minimum(x, d_col[j])
        integral = np.interp(xs, x, sol.v[:, j])
        ux = np.interp(xs, x, u_x[:, j])
        upi = np.interp(xs, x, u_pi[:, j])
        uu = np.interp(xs, x, sol.u[:, j])
        bracket = (p.rho * integral - 0.5 * p.sigma ** 2 * ux
                   - p.mu_hat * pi[j] * (1 - pi[j]) * upi - (p.mu0 + p.mu_hat * pi[j]) * uu)
        out[:, j] = 2.0 * bracket / scale[j]
    sol.v_pipi = out
    return out


def generator_residual(sol: DividendSolution, v_pipi: np.ndarray | None = None) -> np.ndarray:
    """(L - rho) V with V_x = U, V_xx = U_x, V_xpi = U_pi and the given V_pipi.

    Without ``v_pipi`` the second central difference of V in pi is used.
    """
    p = sol.params
    u_x, u_pi = _gradients(sol)
    if v_pipi is None:
        v_pipi = np.full_like(sol.v, np.nan)
        h = sol.hpi
        v_pipi[:, 1:-1] = (sol.v[:, 2:] - 2 * sol.v[:, 1:-1] + sol.v[:, :-2]) / h ** 2
    pi = sol.pi[None, :]
    return (0.5 * p.sigma ** 2 * u_x + p.mu_hat * pi * (1 - pi) * u_pi
            + 0.5 * (p.theta * pi * (1 - pi)) ** 2 * v_pipi
            + (p.mu0 + p.mu_hat * pi) * sol.u - p.rho * sol.v)


def jump_band(sol: DividendSolution, rows: int = 2, jump_cells: float = 3.0) -> np.ndarray:
    """pi-columns within ``rows`` of a jump of d larger than ``jump_cells`` x-steps."""
    jumps = np.nonzero(np.diff(sol.d) > jump_cells * sol.hx)[0]
    mask = np.zeros(sol.pi.size, dtype=bool)
    for j in jumps:
        mask[max(j - rows + 1, 0):j + rows + 1] = True
    return mask


def hjb_audit(sol: DividendSolution, boundary: FreeBoundary, params: ModelParams,
              tol_budget: dict | float) -> dict:
    """Classify interior nodes into continuation and stopping and check the HJB conditions there.

    ``tol_budget`` is either a scalar or a dict with keys ``continuation``,
    ``gradient`` and ``closed_form``.
    """
    if not isinstance(tol_budget, dict):
        tol_budget = {"continuation": tol_budget, "gradient": tol_budget, "closed_form": tol_budget}
    if sol.v_pipi is None:
        v_pipi_field(sol, boundary, params)
    fd = generator_residual(sol)
    closed = generator_residual(sol, sol.v_pipi)
    target = -params.rho * (sol.x[:, None] - sol.d[None, :])
    cont = sol.x[:, None] < sol.d[None, :] - 1e-12
    interior = np.zeros_like(cont)
    interior[1:-1, 1:-1] = True
    interior[:, jump_band(sol)] = False
    c_nodes = interior & cont
    s_nodes = interior & ~cont
    res = {}

    def worst(values, mask):
        if not mask.any():
            return {"max": 0.0, "where": None}
        vals = np.where(mask, np.abs(values), -np.inf)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        return {"max": float(vals[i, j]), "where": [float(sol.x[i]), float(sol.pi[j])]}

    res["continuation_residual"] = worst(fd, c_nodes)
    res["continuation_gradient"] = worst(np.minimum(sol.u - 1.0, 0.0), c_nodes)
    res["stopping_gradient"] = worst(sol.u - 1.0, s_nodes)
    res["stopping_sign"] = worst(np.maximum(closed, 0.0), s_nodes)
    gap = closed - target
    res["closed_form"] = worst(gap, s_nodes)
    ok_closed = np.abs(gap) <= tol_budget["closed_form"]
    n_s = int(s_nodes.sum())
    res["closed_form_pass_fraction"] = float(np.count_nonzero(ok_closed & s_nodes) / n_s) if n_s else 1.0
    res["n_continuation"] = int(c_nodes.sum())
    res["n_stopping"] = n_s
    res["budget"] = dict(tol_budget)
    res["continuation_pass"] = bool(res["continuation_residual"]["max"] <= tol_budget["continuation"]
                                    and res["continuation_gradient"]["max"] <= tol_budget["gradient"])
    res["stopping_pass"] = bool(res["stopping_gradient"]["max"] <= tol_budget["gradient"]
                                and res["stopping_sign"]["max"] <= tol_budget["closed_form"])
    sol.hjb_report = res
    return res


def creation_residual_at_zero(surface: ValueSurface, y_window=None) -> dict:
    """Residual of (sigma^2/2)(U_x + U_y) + mu0 U on x = 0 continuation nodes.

    Derivatives use second-order stencils (one-sided in x, central in y), so the
    first-order boundary rows of the solver show their truncation error. The
    mean is taken in L1 relative to u_hat over the nodes inside ``y_window``.
    """
    p = surface.params
    u = surface.u_hat
    hx, hy = surface.grid.hx, surface.grid.hy
    y = surface.grid.y_nodes
    u_x = (-3 * u[0, 1:-1] + 4 * u[1, 1:-1] - u[2, 1:-1]) / (2 * hx)
    u_y = (u[0, 2:] - u[0, :-2]) / (2 * hy)
    r = 0.5 * p.sigma ** 2 * (u_x + u_y) + p.mu0 * u[0, 1:-1]
    rel = np.abs(r) / u[0, 1:-1]
    mask = surface.active_mask[0, 1:-1]
    if y_window is not None:
        mask = mask & (y[1:-1] >= y_window[0]) & (y[1:-1] <= y_window[1])
    if not mask.any():
        return {"mean": 0.0, "max": 0.0, "n": 0}
    return {"mean": float(rel[mask].mean()), "max": float(rel[mask].max()), "n": int(mask.sum())}


def smooth_fit_audit(surface: ValueSurface, boundary: FreeBoundary, y_window=None) -> dict:
    """Slope of u_hat - g just inside the continuation set, and the creation residual at x = 0."""
    ex = surface.excess
    hx = surface.grid.hx
    g = surface.obstacle
    first_stop = np.argmin(surface.active_mask, axis=0)
    gaps = []
    for j, i_b in enumerate(first_stop):
        if i_b < 2:
            continue
        # last two continuation nodes before the boundary
        slope_gap = abs(ex[i_b - 1, j] - ex[i_b - 2, j]) / hx
        gaps.append(slope_gap / g[i_b - 1, j])
    gaps = np.asarray(gaps)
    return {
        "slope_gap_max": float(gaps.max()) if gaps.size else 0.0,
        "slope_gap_mean": float(gaps.mean()) if gaps.size else 0.0,
        "rows_checked": int(gaps.size),
        "creation": creation_residual_at_zero(surface, y_window),
    }


def value_at(surface: ValueSurface, x: float, phi: float) -> float:
    """Bilinear value of u_hat at (x, phi), reading the excess over g from the grid."""
    p = surface.params
    y = p.sigma / p.theta * math.log(phi) - x
    xs, ys = surface.grid.x_nodes, surface.grid.y_nodes
    if x >= xs[-1] or y <= ys[0]:
        return 1.0 + phi
    y = min(y, ys[-1])
    return float(1.0 + phi + _excess_interpolator(surface)([[x, y]])[0])


def local_gradient(surface: ValueSurface, x: float, phi: float) -> float:
    """Largest finite-difference gradient norm of u_hat over the four corners of the enclosing cell."""
    p = surface.params
    y = p.sigma / p.theta * math.log(phi) - x
    xs, ys = surface.grid.x_nodes, surface.grid.y_nodes
    i = int(np.clip(np.searchsorted(xs, x) - 1, 0, xs.size - 2))
    j = int(np.clip(np.searchsorted(ys, y) - 1, 0, ys.size - 2))
    gx, gy = np.gradient(surface.u_hat, xs, ys)
    block = np.hypot(gx[i:i + 2, j:j + 2], gy[i:i + 2, j:j + 2])
    return float(block.max())


def structural_checks(surface: ValueSurface, boundary: FreeBoundary, a_star: float,
                      rel_tol: float | None = None) -> dict:
    """Obstacle bound, monotonicity and convexity of the surface, and the range of b.

    The shape checks in phi skip the top row, which carries Dirichlet data
    rather than solved values; their tolerance defaults to hy**2.
    """
    rel_tol = surface.grid.hy ** 2 if rel_tol is None else rel_tol
    u = surface.u_hat[:, :-1]
    g = surface.obstacle[:, :-1]
    phi = surface.phi()[:, :-1]
    ex = surface.excess[:, :-1]
    hx = surface.grid.hx
    out = {}
    out["shape_tol"] = rel_tol
    out["obstacle_min"] = float(np.min(surface.excess / surface.obstacle))
    out["obstacle_ok"] = bool(np.all(surface.excess >= -1e-12 * surface.obstacle))
    dy = np.diff(ex, axis=1) / g[:, 1:]
    out["excess_y_monotone_min"] = float(dy.min())
    out["excess_y_monotone_ok"] = bool(dy.min() >= -rel_tol)
    # along each column phi increases with y, so divided differences are in phi
    slope = np.diff(u, axis=1) / np.diff(phi, axis=1)
    out["phi_monotone_min"] = float(slope.min())
    out["phi_monotone_ok"] = bool(slope.min() >= -rel_tol)
    curv = np.diff(slope, axis=1)
    scale = np.maximum(np.abs(slope[:, 1:]), 1.0)
    out["phi_convex_min"] = float((curv / scale).min())
    out["phi_convex_ok"] = bool((curv / scale).min() >= -rel_tol)
    b = boundary.b_of_y
    out["b_nondecreasing"] = bool(np.all(np.diff(b) >= 0))
    out["b_min"] = float(b.min())
    out["b_max_minus_a_star_cells"] = float((b.max() - a_star) / hx)
    out["b_range_ok"] = bool(b.min() >= 0 and b.max() <= a_star + 2 * hx)
    c1 = float(np.max((surface.u_hat - 1.0) / surface.phi()))
    out["sublinear_c1"] = c1
    return out


def dividend_checks(sol: DividendSolution) -> dict:
    u_ok = bool(np.all(sol.u >= 1.0))
    v0 = float(np.max(np.abs(sol.v[0, :])))
    dvdx = np.diff(sol.v, axis=0) / np.diff(sol.x)[:, None]
    mid_u = 0.5 * (sol.u[1:] + sol.u[:-1])
    c_fit = float(np.max(sol.u))
    return {
        "v_at_zero_max": v0,
        "u_ge_one": u_ok,
        "u_min": float(sol.u.min()),
        "dvdx_matches_u": float(np.max(np.abs(dvdx - mid_u))),
        "linear_bound_c": c_fit,
        "v_within_linear_bound": bool(np.all(sol.v >= 0) and np.all(sol.v <= c_fit * sol.x[:, None] + 1e-12)),
    }
