"""Stopping problem when the drift is known to be ``mu1``.

On [0, a*] the value solves (sigma^2/2) U'' + mu1 U' - rho U = 0 with
U(a*) = 1, U'(a*) = 0 and the creation condition
(sigma^2/2) U'(0) + mu1 U(0) = 0; beyond a* it equals 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .params import ModelParams


class BracketingFailure(RuntimeError):
    pass


def characteristic_roots(params: ModelParams) -> tuple[float, float]:
    """Roots of (sigma^2/2) r^2 + mu1 r - rho = 0, returned as (r_plus, r_minus)."""
    s2 = params.sigma ** 2
    disc = math.sqrt(params.mu1 ** 2 + 2 * params.rho * s2)
    r_plus = (-params.mu1 + disc) / s2
    # the product of the roots is -2 rho / sigma^2; dividing avoids cancellation
    r_minus = -2 * params.rho / s2 / r_plus
    return r_plus, r_minus


def _coefficients(a: float, r_plus: float, r_minus: float) -> tuple[float, float]:
    # value matching and smooth fit at the threshold a
    c_plus = r_minus / (r_minus - r_plus) * math.exp(-r_plus * a)
    c_minus = r_plus / (r_plus - r_minus) * math.exp(-r_minus * a)
    return c_plus, c_minus


def _scaled_residual(a: float, params: ModelParams) -> float:
    # creation residual times exp(r_minus a) > 0: same sign, no overflow on wide brackets
    r_plus, r_minus = characteristic_roots(params)
    c_plus = r_minus / (r_minus - r_plus) * math.exp((r_minus - r_plus) * a)
    c_minus = r_plus / (r_plus - r_minus)
    return 0.5 * params.sigma ** 2 * (c_plus * r_plus + c_minus * r_minus) + params.mu1 * (c_plus + c_minus)


def creation_residual(a: float, params: ModelParams) -> float:
    """(sigma^2/2) U'(0) + mu1 U(0) for the candidate threshold a."""
    r_plus, r_minus = characteristic_roots(params)
    c_plus, c_minus = _coefficients(a, r_plus, r_minus)
    u0 = c_plus + c_minus
    du0 = c_plus * r_plus + c_minus * r_minus
    return 0.5 * params.sigma ** 2 * du0 + params.mu1 * u0


@dataclass(frozen=True)
class FullInfoSolution:
    a_star: float
    r_plus: float
    r_minus: float
    coeffs: tuple[float, float]
    x: np.ndarray = field(repr=False)
    curve: np.ndarray = field(repr=False)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        c_plus, c_minus = self.coeffs
        xc = np.minimum(x, self.a_star)
        out = c_plus * np.exp(self.r_plus * xc) + c_minus * np.exp(self.r_minus * xc)
        out = np.where(x >= self.a_star, 1.0, np.maximum(out, 1.0))
        return float(out) if out.ndim == 0 else out

    def derivative(self, x, order: int = 1):
        x = np.asarray(x, dtype=float)
        c_plus, c_minus = self.coeffs
        xc = np.minimum(x, self.a_star)
        out = (c_plus * self.r_plus ** order * np.exp(self.r_plus * xc)
               + c_minus * self.r_minus ** order * np.exp(self.r_minus * xc))
        out = np.where(x >= self.a_star, 0.0, out)
        return float(out) if out.ndim == 0 else out


def solve_full_info(params: ModelParams, grid_1d=None, bracket=None,
                    xtol: float = 1e-14, max_iter: int = 400) -> FullInfoSolution:
    """Locate a* by bisection on the creation residual and sample the curve."""
    r_plus, r_minus = characteristic_roots(params)
    lo, hi = bracket if bracket is not None else (1e-6, 50 * params.sigma ** 2 / params.rho)
    f_lo = _scaled_residual(lo, params)
    f_hi = _scaled_residual(hi, params)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)) or f_lo * f_hi > 0:
        raise BracketingFailure(
            f"creation residual has no sign change on ({lo!r}, {hi!r}): {f_lo!r}, {f_hi!r}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = _scaled_residual(mid, params)
        if f_mid == 0:
            lo = hi = mid
            break
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo <= xtol * max(1.0, hi):
            break
    a_star = 0.5 * (lo + hi)
    coeffs = _coefficients(a_star, r_plus, r_minus)
    if grid_1d is None:
        grid_1d = np.linspace(0.0, 2 * a_star + 4 * params.sigma / math.sqrt(params.rho), 2001)
    x = np.asarray(grid_1d, dtype=float)
    sol = FullInfoSolution(a_star, r_plus, r_minus, coeffs, x, np.empty(0))
    object.__setattr__(sol, "curve", sol.value(x))
    return sol


@njit(cache=True)
def _psor_1d(u, lower, diag, upper, obstacle, omega, tol, max_iter):
    # rows 0..n-2 are unknown; the last node is Dirichlet
    n = u.size
    for it in range(max_iter):
        for i in range(n - 1):
            s = upper[i] * u[i + 1]
            if i > 0:
                s += lower[i] * u[i - 1]
            gs = -s / diag[i]
            val = u[i] + omega * (gs - u[i])
            u[i] = val if val > obstacle[i] else obstacle[i]
        if it % 8 != 7:
            continue
        res = 0.0
        for i in range(n - 1):
            s = diag[i] * u[i] + upper[i] * u[i + 1]
            if i > 0:
                s += lower[i] * u[i - 1]
            r = min(s / diag[i], u[i] - obstacle[i])
            r = abs(r)
            if r > res:
                res = r
        if res <= tol:
            return it + 1, res
    return max_iter, np.inf


def _one_dimensional_rows(params: ModelParams, h: float, n: int):
    """Rows of (sigma^2/2) D2 + mu1 D1 - rho with a ghost-node creation condition at 0."""
    s2 = params.sigma ** 2
    mu = params.mu1
    lower = np.full(n, s2 / (2 * h * h) - mu / (2 * h))
    upper = np.full(n, s2 / (2 * h * h) + mu / (2 * h))
    diag = np.full(n, -s2 / (h * h) - params.rho)
    # ghost value u[-1] = u[1] + 2 h q u[0] with q = 2 mu1 / sigma^2
    q = 2 * mu / s2
    lower[0] = 0.0
    upper[0] = s2 / (h * h)
    diag[0] = -s2 / (h * h) + q * s2 / h - mu * q - params.rho
    return lower, diag, upper


def solve_full_info_psor(params: ModelParams, h: float = 1e-4, x_max: float | None = None,
                         h_start: float = 1e-2, tol: float = 1e-11,
                         contact_tol: float = 1e-10, max_iter: int = 2_000_000):
    """Independent a* estimate from projected SOR on the 1-D obstacle problem.

    Starts on a coarse mesh, then halves the step while trimming the domain to a
    few coarse cells past the detected threshold, where U = 1 is exact.
    Returns (a_star_estimate, x, u, total_sweeps).
    """
    if x_max is None:
        x_max = 5 * max(params.sigma ** 2 / params.mu1, params.sigma / math.sqrt(params.rho))
    step = h_start
    x_prev = u_prev = None
    total = 0
    while True:
        n = int(round(x_max / step)) + 1
        x = np.linspace(0.0, (n - 1) * step, n)
        if u_prev is None:
            u = np.ones(n)
        else:
            u = np.interp(x, x_prev, u_prev)
        u[-1] = 1.0
        lower, diag, upper = _one_dimensional_rows(params, step, n)
        omega = 2.0 / (1.0 + math.sin(math.pi * step / x[-1]))
        sweeps, res = _psor_1d(u, lower, diag, upper, np.ones(n), omega, tol, max_iter)
        total += sweeps
        if res > tol:
            raise RuntimeError(f"1-D PSOR did not converge: residual {res!r}")
        stopped = np.nonzero(u - 1.0 <= contact_tol)[0]
        a_est = x[stopped[0]]
        if step <= h * (1 + 1e-9):
            return a_est, x, u, total
        x_prev, u_prev = x, u
        x_max = min(x_max, a_est + 10 * step)
        step = max(step / 2, h)
