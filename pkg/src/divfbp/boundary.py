"""Free boundary of a solved surface in every coordinate system.

The sampled ``b`` is read as a left-continuous step function of y,
b(y) = b_j on (y_{j-1}, y_j], constant beyond the sampled range. With that
convention the continuation set {x < b(y)} and its five rewrites agree
exactly at grid nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .fbp import ValueSurface
from .params import PI_MIN, ModelParams

INF_SENTINEL = 1e300


class UnboundedBoundaryRow(RuntimeError):
    pass


class NonMonotoneInput(ValueError):
    pass


class AllStopped(RuntimeError):
    pass


def extract_b(surface: ValueSurface, tol: float | None = None):
    """Per-row first stopped node, then a non-decreasing projection.

    Returns (b_projected, b_raw, max_discrepancy).
    """
    tol = surface.tol if tol is None else tol
    active = surface.excess > tol * surface.obstacle
    full_rows = np.nonzero(active.all(axis=0))[0]
    if full_rows.size:
        y_bad = surface.grid.y_nodes[full_rows[0]]
        raise UnboundedBoundaryRow(f"row y={y_bad!r} is active up to x_max; enlarge the x truncation")
    first_stop = np.argmin(active, axis=0)
    b_raw = surface.grid.x_nodes[first_stop]
    b = isotonic_regression(b_raw, increasing=True).x
    b = np.asarray(b, dtype=float)
    return b, b_raw, float(np.max(np.abs(b - b_raw)))


def compute_y_star_0(surface: ValueSurface, tol: float | None = None) -> float:
    """Smallest grid ordinate whose x = 0 node continues."""
    tol = surface.tol if tol is None else tol
    active0 = surface.excess[0, :] > tol * surface.obstacle[0, :]
    if not active0.any():
        raise AllStopped("no continuation node on x = 0; widen the y truncation")
    return float(surface.grid.y_nodes[np.argmax(active0)])


def _sentinel(values):
    return np.clip(values, -INF_SENTINEL, INF_SENTINEL)


@dataclass(frozen=True)
class FreeBoundary:
    params: ModelParams
    y_nodes: np.ndarray = field(repr=False)
    b_of_y: np.ndarray = field(repr=False)
    a_star: float = 0.0
    y_star_0: float = float("nan")
    monotonicity_discrepancy: float = 0.0
    b_raw: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(np.diff(self.b_of_y) < 0):
            raise NonMonotoneInput("b must be non-decreasing in y")
        if self.y_nodes.shape != self.b_of_y.shape:
            raise ValueError("b_of_y must be sampled on y_nodes")

    # -- b and its inverse in y -------------------------------------------------
    def b(self, y):
        """Left-continuous step interpolation of the sampled boundary."""
        y = np.asarray(y, dtype=float)
        idx = np.clip(np.searchsorted(self.y_nodes, y, side="left"), 0, self.y_nodes.size - 1)
        return self.b_of_y[idx]

    def _eps(self):
        # ties (a node sitting on the boundary) are classified as stopping in every description
        ex = 1e-9 * max(float(np.max(np.abs(self.b_of_y))), 1.0)
        ey = 1e-9 * max(float(np.max(np.abs(self.y_nodes))), 1.0)
        return ex, ey

    def chi(self, x):
        """inf{y : b(y) > x}; +/-INF_SENTINEL encode the infinite cases."""
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.b_of_y, x + self._eps()[0], side="right")
        out = np.where(k >= self.y_nodes.size, INF_SENTINEL,
                       np.where(k == 0, -INF_SENTINEL, self.y_nodes[np.maximum(k - 1, 0)]))
        return out

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        chi = self.chi(x)
        expo = self.params.theta / self.params.sigma * (chi + x)
        with np.errstate(over="ignore"):
            out = np.exp(np.clip(expo, -745.0, 709.0))
        out = np.where(chi >= INF_SENTINEL, INF_SENTINEL, np.where(chi <= -INF_SENTINEL, 0.0, out))
        return _sentinel(out)

    # -- phi and pi descriptions ----------------------------------------------------
    def c(self, phi):
        """inf{x > 0 : psi(x) >= phi}, i.e. the first x on the line x + y = Y in the stopping set."""
        scalar = np.ndim(phi) == 0
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        big_y = self.params.sigma / self.params.theta * np.log(phi)
        yn = self.y_nodes
        prev = np.concatenate(([-np.inf], yn[:-1]))
        # segment j: Y - x in (prev_j, y_j], stopping iff x >= b_j
        lo = np.maximum(big_y[:, None] - yn[None, :], self.b_of_y[None, :])
        lo = np.maximum(lo, 0.0)
        hi = big_y[:, None] - prev[None, :]
        cand = np.where(lo < hi, lo, np.inf)
        # beyond y_max the boundary is frozen at its last value
        tail = np.maximum(self.b_of_y[-1], 0.0)
        tail_ok = big_y - tail > yn[-1]
        cand_tail = np.where(tail_ok, tail, np.inf)
        out = np.minimum(cand.min(axis=1), cand_tail)
        # a line lying entirely above y_max stops once x reaches Y - y_max
        out = np.minimum(out, np.maximum(big_y - yn[-1], self.b_of_y[-1]))
        return float(out[0]) if scalar else out

    def d(self, pi):
        pi = np.clip(np.asarray(pi, dtype=float), PI_MIN, 1 - PI_MIN)
        return self.c(pi / (1 - pi))

    def d_plus(self, pi, rel: float = 1e-12):
        """Right limit of d, taken at a relative nudge of phi."""
        pi = np.clip(np.asarray(pi, dtype=float), PI_MIN, 1 - PI_MIN)
        return self.c(pi / (1 - pi) * (1 + rel))

    def lam(self, x):
        """inf{pi : d(pi) > x} = psi / (1 + psi)."""
        psi = self.psi(x)
        return np.where(psi >= INF_SENTINEL, 1.0, psi / (1 + psi))

    # -- membership in the continuation set --------------------------------------------
    def in_continuation(self, x, y, via: str = "b"):
        """Continuation-set membership through any of the six descriptions."""
        p = self.params
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ex, ey = self._eps()
        k = p.theta / p.sigma
        if via == "b":
            return x < self.b(y) - ex
        if via == "chi":
            return y > self.chi(x) + ey
        log_phi = k * (x + y)
        if via in ("c", "d"):
            # d(pi) is c at pi / (1 - pi), i.e. at the same phi
            return x < self.c(np.exp(log_phi)).reshape(x.shape) - ex
        if via == "psi":
            odds = self.psi(x)
        elif via == "lambda":
            lam = self.lam(x)
            with np.errstate(divide="ignore"):
                odds = np.where(lam >= 1.0, INF_SENTINEL, lam / np.maximum(1 - lam, 1e-300))
        else:
            raise ValueError(f"unknown description {via!r}")
        with np.errstate(divide="ignore"):
            log_odds = np.log(odds)
        return np.where(odds >= INF_SENTINEL, False, log_phi > log_odds + k * ey)


DESCRIPTIONS = ("b", "chi", "psi", "c", "d", "lambda")


def boundary_from_surface(surface: ValueSurface, a_star: float) -> FreeBoundary:
    b, b_raw, gap = extract_b(surface)
    try:
        y0 = compute_y_star_0(surface)
    except AllStopped:
        y0 = float("nan")
    return FreeBoundary(surface.params, surface.grid.y_nodes.copy(), b, float(a_star), y0, gap, b_raw)


def invert_boundary(boundary: FreeBoundary, x_nodes, phi_nodes, pi_nodes) -> dict:
    """Sample chi, psi, c, d and lambda on the requested abscissae."""
    x_nodes = np.asarray(x_nodes, dtype=float)
    return {
        "chi": boundary.chi(x_nodes),
        "psi": boundary.psi(x_nodes),
        "c": boundary.c(np.asarray(phi_nodes, dtype=float)),
        "d": boundary.d(np.asarray(pi_nodes, dtype=float)),
        "lambda": boundary.lam(x_nodes),
    }


def six_way_consistency(boundary: FreeBoundary, x_nodes, y_nodes) -> dict:
    """Count grid nodes where any description disagrees with the b description."""
    xx, yy = np.meshgrid(np.asarray(x_nodes, float), np.asarray(y_nodes, float), indexing="ij")
    ref = boundary.in_continuation(xx, yy, "b")
    out = {}
    for via in DESCRIPTIONS[1:]:
        out[via] = int(np.count_nonzero(boundary.in_continuation(xx, yy, via) != ref))
    return out
