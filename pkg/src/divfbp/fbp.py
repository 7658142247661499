"""Obstacle problem for the transformed value on a truncated (x, y) rectangle.

The unknown ``u_hat`` satisfies, node by node, the complementarity system

    min(-(L - rho) u_hat, u_hat - g) = 0,
    L f = -(mu0 + mu1)/2 f_y + sigma^2/2 f_xx + mu0 f_x,
    g(x, y) = 1 + exp(theta/sigma (x + y)),

with the oblique creation row sigma^2/2 (f_x + f_y) + mu0 f = 0 at x = 0.
Everything is first-order upwind so that each row is an M-matrix row.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse

from .full_info import FullInfoSolution
from .params import ModelParams, y_ell

EXP_LIMIT = 700.0


class GridTooWide(ValueError):
    pass


class NonMonotoneScheme(RuntimeError):
    pass


class MissingFullInfo(ValueError):
    pass


class NotConverged(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Grid2D:
    x_nodes: np.ndarray
    y_nodes: np.ndarray

    @classmethod
    def uniform(cls, x_max: float, y_min: float, y_max: float, nx: int, ny: int) -> "Grid2D":
        if nx < 3 or ny < 3:
            raise ValueError("need at least 3 nodes per direction")
        if not (x_max > 0 and y_max > y_min):
            raise ValueError("empty truncation rectangle")
        return cls(np.linspace(0.0, x_max, nx), np.linspace(y_min, y_max, ny))

    @classmethod
    def default(cls, params: ModelParams, a_star: float, nx: int = 400, ny: int = 400,
                x_margin: float = 4.0, y_margin: float = 10.0) -> "Grid2D":
        """Default truncation: a* plus a few diffusion lengths in x, y_ell +/- a margin in y."""
        x_max = a_star + x_margin * params.sigma / math.sqrt(params.rho)
        half = y_margin * params.sigma / params.theta
        yl = y_ell(params)
        return cls.uniform(x_max, yl - half, yl + half, nx, ny)

    @property
    def hx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def hy(self) -> float:
        return float(self.y_nodes[1] - self.y_nodes[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.x_nodes.size, self.y_nodes.size

    def refined(self) -> "Grid2D":
        """Same rectangle with both spacings halved."""
        nx, ny = self.shape
        return Grid2D.uniform(float(self.x_nodes[-1]), float(self.y_nodes[0]),
                              float(self.y_nodes[-1]), 2 * nx - 1, 2 * ny - 1)


def obstacle_g(x, y, params: ModelParams):
    expo = params.theta / params.sigma * (np.asarray(x, dtype=float) + np.asarray(y, dtype=float))
    if np.any(expo > EXP_LIMIT):
        raise GridTooWide(f"exponent {float(np.max(expo))!r} exceeds {EXP_LIMIT}")
    out = 1.0 + np.exp(expo)
    return float(out) if out.ndim == 0 else out


def obstacle_field(grid: Grid2D, params: ModelParams) -> np.ndarray:
    return obstacle_g(grid.x_nodes[:, None], grid.y_nodes[None, :], params)


@dataclass
class DiscreteOperator:
    """Five-point stencil of (L - rho) stored per node.

    A row reads ``diag*u[i,j] + west*u[i-1,j] + east*u[i+1,j] + south*u[i,j-1]
    + north*u[i,j+1] = 0``. Nodes flagged in ``fixed`` carry Dirichlet data.
    """
    grid: Grid2D
    params: ModelParams
    diag: np.ndarray
    west: np.ndarray
    east: np.ndarray
    south: np.ndarray
    north: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    boundary_applied: bool = False

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Stencil applied to ``f`` on non-Dirichlet nodes, zero elsewhere."""
        out = self.diag * f
        out[1:, :] += self.west[1:, :] * f[:-1, :]
        out[:-1, :] += self.east[:-1, :] * f[1:, :]
        out[:, 1:] += self.south[:, 1:] * f[:, :-1]
        out[:, :-1] += self.north[:, :-1] * f[:, 1:]
        out[self.fixed] = 0.0
        return out

    def to_sparse(self) -> sparse.csr_matrix:
        """The stencil as a sparse matrix over the flattened (i, j) index, identity on fixed rows."""
        nx, ny = self.grid.shape
        idx = np.arange(nx * ny).reshape(nx, ny)
        free = ~self.fixed
        rows, cols, vals = [idx[free]], [idx[free]], [self.diag[free]]
        for coef, di, dj in ((self.west, -1, 0), (self.east, 1, 0),
                             (self.south, 0, -1), (self.north, 0, 1)):
            mask = free & (coef != 0)
            ii, jj = np.nonzero(mask)
            rows.append(idx[ii, jj])
            cols.append(idx[ii + di, jj + dj])
            vals.append(coef[ii, jj])
        rows.append(idx[self.fixed])
        cols.append(idx[self.fixed])
        vals.append(np.ones(int(self.fixed.sum())))
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(nx * ny, nx * ny))


def _check_monotone(op: DiscreteOperator) -> None:
    free = ~op.fixed
    offs = (op.west, op.east, op.south, op.north)
    if any(np.any(c[free] < 0) for c in offs):
        raise NonMonotoneScheme("positive off-diagonal entry in (rho - L)")
    if np.any(op.diag[free] >= 0):
        raise NonMonotoneScheme("non-negative diagonal in (L - rho)")
    slack = -op.diag - sum(offs)
    if np.any(slack[free] < -1e-12 * np.abs(op.diag[free])):
        raise NonMonotoneScheme("row is not diagonally dominant")


def fitted_weight(z: float) -> float:
    """z / (e^z - 1): scales a one-sided y-difference so it is exact on exp(k y) as well as constants.

    The excess u_hat - g grows like exp(theta/sigma y) for large y, and the
    plain difference would carry a relative error of about k hy / 2.
    """
    return 1.0 if z == 0 else z / math.expm1(z)


def assemble_operator(grid: Grid2D, params: ModelParams) -> DiscreteOperator:
    """Interior upwind stencil of (L - rho); edge nodes are left as Dirichlet placeholders."""
    nx, ny = grid.shape
    hx, hy = grid.hx, grid.hy
    s2 = params.sigma ** 2
    advect_y = -0.5 * (params.mu0 + params.mu1)
    # mu0 f_x uses the node to the right; the east weight stays non-negative
    # while hx <= sigma^2 / (2 |mu0|), which _check_monotone enforces
    west_c = s2 / (2 * hx * hx)
    east_c = s2 / (2 * hx * hx) + params.mu0 / hx
    k = params.theta / params.sigma
    north_c = max(advect_y, 0.0) / hy * fitted_weight(k * hy)
    south_c = max(-advect_y, 0.0) / hy * fitted_weight(-k * hy)
    diag_c = -(west_c + east_c + north_c + south_c + params.rho)

    shape = (nx, ny)
    diag = np.full(shape, diag_c)
    west = np.full(shape, west_c)
    east = np.full(shape, east_c)
    south = np.full(shape, south_c)
    north = np.full(shape, north_c)
    fixed = np.zeros(shape, dtype=bool)
    fixed[0, :] = fixed[-1, :] = True
    fixed[:, 0] = fixed[:, -1] = True
    for c in (diag, west, east, south, north):
        c[fixed] = 0.0
    op = DiscreteOperator(grid, params, diag, west, east, south, north, fixed, np.zeros(shape))
    _check_monotone(op)
    return op


def apply_boundary_conditions(op: DiscreteOperator, grid: Grid2D, params: ModelParams,
                              full_info: FullInfoSolution | None) -> DiscreteOperator:
    """Oblique creation rows at x = 0 and Dirichlet data on the other three edges."""
    if full_info is None:
        raise MissingFullInfo("the y_max edge needs the full-information curve")
    hx, hy = grid.hx, grid.hy
    s2 = params.sigma ** 2
    x, y = grid.x_nodes, grid.y_nodes
    g = obstacle_field(grid, params)

    diag, west, east = op.diag.copy(), op.west.copy(), op.east.copy()
    south, north = op.south.copy(), op.north.copy()
    fixed = np.zeros(grid.shape, dtype=bool)
    values = np.zeros(grid.shape)

    fixed[-1, :] = True
    values[-1, :] = g[-1, :]
    fixed[:, 0] = True
    values[:, 0] = g[:, 0]
    fixed[:, -1] = True
    values[:, -1] = (1.0 + np.exp(params.theta / params.sigma * (x + y[-1]))) * full_info.value(x)

    # forward differences along the reflection direction (1, 1)
    inner = slice(1, grid.shape[1] - 1)
    north_0 = s2 / (2 * hy) * fitted_weight(params.theta / params.sigma * hy)
    east[0, inner] = s2 / (2 * hx)
    north[0, inner] = north_0
    west[0, inner] = 0.0
    south[0, inner] = 0.0
    diag[0, inner] = -(s2 / (2 * hx) + north_0) + params.mu0

    for c in (diag, west, east, south, north):
        c[fixed] = 0.0
    out = DiscreteOperator(grid, params, diag, west, east, south, north, fixed, values, True)
    _check_monotone(out)
    return out


@dataclass(frozen=True)
class SolverConfig:
    omega: float = 1.5
    tol: float = 1e-8
    max_iter: int = 200_000
    check_every: int = 10

    def __post_init__(self):
        if not (0.0 < self.omega < 2.0):
            raise ValueError("omega must lie in (0, 2)")
        if self.tol <= 0 or self.max_iter < 1 or self.check_every < 1:
            raise ValueError("tol, max_iter and check_every must be positive")


@dataclass(frozen=True)
class ValueSurface:
    grid: Grid2D
    params: ModelParams
    u_hat: np.ndarray = field(repr=False)
    obstacle: np.ndarray = field(repr=False)
    active_mask: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    iterations: int = 0
    final_residual: float = 0.0
    tol: float = 1e-8
    wall_time: float = 0.0

    @property
    def excess(self) -> np.ndarray:
        """u_hat - g, zero on the stopping set."""
        return self.u_hat - self.obstacle

    def u_bar(self) -> np.ndarray:
        """Value in (x, phi) coordinates sampled at the grid nodes (same array layout)."""
        return self.u_hat

    def phi(self) -> np.ndarray:
        p = self.params
        return np.exp(p.theta / p.sigma * (self.grid.x_nodes[:, None] + self.grid.y_nodes[None, :]))


@njit(cache=True)
def _residual_field(u, g, diag, west, east, south, north, fixed, out, src, scale):
    nx, ny = u.shape
    worst = 0.0
    for i in range(nx):
        for j in range(ny):
            if fixed[i, j]:
                out[i, j] = 0.0
                continue
            s = diag[i, j] * u[i, j] + src[i, j]
            if i > 0:
                s += west[i, j] * u[i - 1, j]
            if i < nx - 1:
                s += east[i, j] * u[i + 1, j]
            if j > 0:
                s += south[i, j] * u[i, j - 1]
            if j < ny - 1:
                s += north[i, j] * u[i, j + 1]
            # s is (L - rho) u; normalise by |diag| and by the local obstacle
            r = min(s / diag[i, j], u[i, j] - g[i, j]) / scale[i, j]
            out[i, j] = r
            if abs(r) > worst:
                worst = abs(r)
    return worst


@njit(cache=True)
def _psor_sweeps(u, g, diag, west, east, south, north, fixed, omega, tol, max_iter,
                 check_every, alternate, scratch, src, scale):
    nx, ny = u.shape
    res = np.inf
    for it in range(max_iter):
        downward = (it % 2 == 0) or not alternate
        for jj in range(ny):
            j = ny - 1 - jj if downward else jj
            for ii in range(nx):
                i = ii if (it // 2) % 2 == 0 else nx - 1 - ii
                if fixed[i, j]:
                    continue
                s = src[i, j]
                if i > 0:
                    s += west[i, j] * u[i - 1, j]
                if i < nx - 1:
                    s += east[i, j] * u[i + 1, j]
                if j > 0:
                    s += south[i, j] * u[i, j - 1]
                if j < ny - 1:
                    s += north[i, j] * u[i, j + 1]
                gs = -s / diag[i, j]
                val = u[i, j] + omega * (gs - u[i, j])
                u[i, j] = val if val > g[i, j] else g[i, j]
        if (it + 1) % check_every == 0 or it == max_iter - 1:
            res = _residual_field(u, g, diag, west, east, south, north, fixed, scratch, src, scale)
            if res <= tol:
                return it + 1, res
    return max_iter, res


def obstacle_image(grid: Grid2D, params: ModelParams) -> np.ndarray:
    """Exact (L - rho) g on interior nodes and the exact creation row of g at x = 0.

    L annihilates exp(theta/sigma (x + y)), so the interior value is -rho g.
    """
    g = obstacle_field(grid, params)
    out = -params.rho * g
    k = params.theta / params.sigma
    out[0, :] = params.mu1 * np.exp(k * grid.y_nodes) + params.mu0
    return out


def solve_obstacle(op: DiscreteOperator, obstacle: np.ndarray, config: SolverConfig | None = None,
                   initial: np.ndarray | None = None, exact_obstacle: bool = True) -> ValueSurface:
    """Projected SOR on the complementarity system; raises NotConverged past max_iter.

    With ``exact_obstacle`` the unknown is the excess w = u_hat - g and the
    image of g under the continuous operator enters as a source, so the
    discretisation error only touches w. Otherwise u_hat is iterated directly.
    """
    config = config or SolverConfig()
    if not op.boundary_applied:
        raise ValueError("apply_boundary_conditions must run before solving")
    start = time.perf_counter()
    g = np.ascontiguousarray(obstacle, dtype=float)
    if exact_obstacle:
        src = obstacle_image(op.grid, op.params)
        lower = np.zeros_like(g)
        u = np.maximum(initial - g, 0.0) if initial is not None else np.zeros_like(g)
        u[op.fixed] = op.fixed_values[op.fixed] - g[op.fixed]
    else:
        src = np.zeros_like(g)
        lower = g
        u = np.maximum(g, initial) if initial is not None else g.copy()
        u[op.fixed] = op.fixed_values[op.fixed]
    # interior y-coupling runs against the x = 0 coupling only when mu0 + mu1 < 0
    alternate = op.params.mu0 + op.params.mu1 <= 0
    scratch = np.zeros_like(u)
    iters, res = _psor_sweeps(u, lower, op.diag, op.west, op.east, op.south, op.north, op.fixed,
                              float(config.omega), float(config.tol), int(config.max_iter),
                              int(config.check_every), alternate, scratch, src, g)
    res = _residual_field(u, lower, op.diag, op.west, op.east, op.south, op.north, op.fixed,
                          scratch, src, g)
    if not res <= config.tol:
        raise NotConverged(f"PSOR stopped after {iters} sweeps with residual {res:.3e}", res, iters)
    u_hat = u + g if exact_obstacle else u
    excess = u if exact_obstacle else u - g
    active = excess > config.tol * g
    return ValueSurface(op.grid, op.params, u_hat, g, active, scratch.copy(), int(iters), float(res),
                        config.tol, time.perf_counter() - start)


def interpolate_to(surface: ValueSurface, grid: Grid2D) -> np.ndarray:
    """Bilinear transfer of u_hat - g onto another grid, used as a warm start."""
    from scipy.interpolate import RegularGridInterpolator
    interp = RegularGridInterpolator((surface.grid.x_nodes, surface.grid.y_nodes), surface.excess,
                                     bounds_error=False, fill_value=0.0)
    xx, yy = np.meshgrid(grid.x_nodes, grid.y_nodes, indexing="ij")
    excess = np.maximum(interp(np.stack([xx, yy], axis=-1)), 0.0)
    return excess + obstacle_field(grid, surface.params)


def solve_value_surface(params: ModelParams, grid: Grid2D, full_info: FullInfoSolution,
                        config: SolverConfig | None = None, warm_start: bool = True,
                        exact_obstacle: bool = True) -> ValueSurface:
    """Assemble, apply boundary data and solve; optionally warm-start from a coarser grid."""
    config = config or SolverConfig()
    initial = None
    nx, ny = grid.shape
    if warm_start and min(nx, ny) > 60:
        coarse = Grid2D.uniform(float(grid.x_nodes[-1]), float(grid.y_nodes[0]), float(grid.y_nodes[-1]),
                                (nx + 1) // 2, (ny + 1) // 2)
        initial = interpolate_to(
            solve_value_surface(params, coarse, full_info, config, True, exact_obstacle), grid)
    op = apply_boundary_conditions(assemble_operator(grid, params), grid, params, full_info)
    return solve_obstacle(op, obstacle_field(grid, params), config, initial, exact_obstacle)
