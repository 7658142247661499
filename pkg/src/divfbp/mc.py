"""Monte Carlo estimators for the stopping value, the dividend strategy and sanity oracles.

Every path reseeds the generator from (root seed, path index) through
splitmix64, so results do not depend on evaluation order. With the
antithetic flag, paths 2k and 2k+1 share a seed and the second one uses
negated normals.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .boundary import FreeBoundary
from .params import PI_MIN, ModelParams


class BoundaryMissing(ValueError):
    pass


class SurfaceMissing(ValueError):
    pass


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    dt: float = 1e-3
    horizon: float = 40.0
    seed: int = 20240601
    antithetic: bool = False
    bridge_correction: bool = True

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least one step")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.antithetic and int(self.n_paths) % 2:
            raise ValueError("antithetic sampling needs an even n_paths")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))

    def replace(self, **changes) -> "McConfig":
        data = asdict(self)
        data.update(changes)
        return McConfig(**data)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_effective: int
    truncation_fraction: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(values, antithetic: bool = False, truncated=None) -> McEstimate:
    """Mean and standard error; antithetic pairs are averaged before the variance."""
    values = np.asarray(values, dtype=float)
    if antithetic:
        values = 0.5 * (values[0::2] + values[1::2])
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    frac = 0.0 if truncated is None else float(np.mean(np.asarray(truncated, dtype=float)))
    return McEstimate(mean, se, int(n), frac)


# --------------------------------------------------------------------------- random streams

@njit(cache=True)
def _splitmix64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _start_path(seed, p, antithetic):
    """Seed the stream of path p and return the sign applied to its normals."""
    key = p // 2 if antithetic else p
    s = _splitmix64(np.uint64(seed) ^ _splitmix64(np.uint64(key)))
    np.random.seed(np.int64(s >> np.uint64(33)))
    if antithetic and p % 2 == 1:
        return -1.0
    return 1.0


@njit(cache=True)
def _bridge_min(z, dz, var):
    # minimum of a Brownian bridge from z to z + dz with variance var over the step
    u = 1.0 - np.random.random()
    return z + 0.5 * (dz - math.sqrt(dz * dz - 2.0 * var * math.log(u)))


@njit(cache=True)
def _bridge_max(z, dz, var):
    u = 1.0 - np.random.random()
    return z + 0.5 * (dz + math.sqrt(dz * dz - 2.0 * var * math.log(u)))


@njit(cache=True)
def _b_lookup(y, y_nodes, b_vals):
    # left-continuous step reading of the sampled boundary
    j = np.searchsorted(y_nodes, y)
    if j >= y_nodes.size:
        j = y_nodes.size - 1
    return b_vals[j]


# --------------------------------------------------------------------------- reflected paths

@njit(cache=True)
def _reflected_paths(x0, mu, sigma, dt, n_steps, n_paths, seed, antithetic, bridge, xs, As):
    sq = sigma * math.sqrt(dt)
    var = sq * sq
    for p in range(n_paths):
        sign = _start_path(seed, p, antithetic)
        z = 0.0
        top = x0  # x0 v sup(-driver)
        xs[p, 0] = x0
        As[p, 0] = 0.0
        for k in range(n_steps):
            dz = mu * dt + sign * sq * np.random.standard_normal()
            if bridge:
                low = _bridge_min(z, dz, var)
            else:
                low = z + dz
            if -low > top:
                top = -low
            z += dz
            As[p, k + 1] = top - x0
            xs[p, k + 1] = z + top


def simulate_reflected(x0: float, params: ModelParams, config: McConfig, n_steps: int | None = None,
                       drift: float | None = None):
    """Paths of the reflected process and its pushing term on the time grid.

    The pushing term is x0 v sup(-driver) - x0 with driver mu t + sigma W; with
    the bridge flag the within-step minimum of the driver enters the supremum.
    Returns (t, x, a) with x and a of shape (n_paths, n_steps + 1).
    """
    if x0 < 0:
        raise ValueError("x0 must be non-negative")
    n_steps = config.n_steps if n_steps is None else int(n_steps)
    mu = params.mu0 if drift is None else float(drift)
    xs = np.empty((config.n_paths, n_steps + 1))
    As = np.empty_like(xs)
    _reflected_paths(float(x0), mu, params.sigma, config.dt, n_steps, config.n_paths, np.uint64(config.seed),
                     config.antithetic, config.bridge_correction, xs, As)
    return np.arange(n_steps + 1) * config.dt, xs, As


@njit(cache=True)
def _sup_drifted(beta, sigma, dt, n_steps, n_paths, seed, antithetic, bridge, stop_gap, out):
    sq = sigma * math.sqrt(dt)
    var = sq * sq
    for p in range(n_paths):
        sign = _start_path(seed, p, antithetic)
        z = 0.0
        top = 0.0
        for k in range(n_steps):
            dz = -beta * dt + sign * sq * np.random.standard_normal()
            hi = _bridge_max(z, dz, var) if bridge else z + dz
            if hi > top:
                top = hi
            z += dz
            if top - z > stop_gap:
                break
        out[p] = top


def sup_tail_oracle(beta: float, params: ModelParams, config: McConfig, horizon: float | None = None,
                    quantiles=None) -> dict:
    """Empirical survival of the all-time supremum of -beta t - sigma W against its exponential law."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    s2 = params.sigma ** 2
    horizon = 50.0 * s2 / beta if horizon is None else float(horizon)
    n_steps = int(math.ceil(horizon / config.dt))
    # once the walk sits this far below its maximum, a later excess has probability e^-40
    stop_gap = 20.0 * s2 / beta
    sups = np.empty(config.n_paths)
    _sup_drifted(beta, params.sigma, config.dt, n_steps, config.n_paths, np.uint64(config.seed),
                 config.antithetic, config.bridge_correction, stop_gap, sups)
    rate = 2.0 * beta / s2
    srt = np.sort(sups)
    n = srt.size
    exact = np.exp(-rate * srt)
    # survival just before and at each sample point
    upper = 1.0 - np.arange(n) / n
    lower = 1.0 - np.arange(1, n + 1) / n
    deviation = float(max(np.max(np.abs(upper - exact)), np.max(np.abs(lower - exact))))
    qs = np.linspace(0.05, 0.95, 19) if quantiles is None else np.asarray(quantiles, dtype=float)
    x_q = -np.log(1.0 - qs) / rate
    emp = np.array([np.mean(sups > x) for x in x_q])
    return {"beta": beta, "sigma": params.sigma, "horizon": horizon, "n_paths": n,
            "max_deviation": deviation, "x": x_q, "empirical_survival": emp,
            "exact_survival": np.exp(-rate * x_q)}


# --------------------------------------------------------------------------- stopping value

@njit(cache=True)
def _stopping_paths(x0, y0, mu0, mu1, sigma, rho, y_nodes, b_vals, eps, dt, n_steps, n_paths, seed,
                    antithetic, bridge, out, truncated):
    sq = sigma * math.sqrt(dt)
    var = sq * sq
    k_theta = (mu1 - mu0) / sigma ** 2
    creation = 2.0 * mu0 / sigma ** 2
    y_drift = -0.5 * (mu0 + mu1)
    for p in range(n_paths):
        sign = _start_path(seed, p, antithetic)
        z = 0.0
        top = x0
        x = x0
        y = y0
        a = 0.0
        t = 0.0
        stopped = x >= _b_lookup(y, y_nodes, b_vals) - eps
        k = 0
        while not stopped and k < n_steps:
            dz = mu0 * dt + sign * sq * np.random.standard_normal()
            low = _bridge_min(z, dz, var) if bridge else z + dz
            if -low > top:
                top = -low
            z += dz
            k += 1
            t = k * dt
            a = top - x0
            x = x0 + z + a
            y = y0 + y_drift * t + a
            stopped = x >= _b_lookup(y, y_nodes, b_vals) - eps
        truncated[p] = not stopped
        out[p] = math.exp(creation * a - rho * t) * (1.0 + math.exp(k_theta * (x + y)))


def _boundary_arrays(boundary: FreeBoundary | None):
    if boundary is None:
        raise BoundaryMissing("a FreeBoundary is required")
    eps = boundary._eps()[0]
    return np.ascontiguousarray(boundary.y_nodes), np.ascontiguousarray(boundary.b_of_y), eps


def eval_stopping_value(x0: float, phi0: float, boundary: FreeBoundary, params: ModelParams,
                        config: McConfig) -> McEstimate:
    """Value of stopping at the first grid time the state enters the stopping set.

    Paths alive at the horizon contribute the discounted obstacle.
    """
    y_nodes, b_vals, eps = _boundary_arrays(boundary)
    if x0 < 0 or not phi0 > 0:
        raise ValueError("need x0 >= 0 and phi0 > 0")
    y0 = params.sigma / params.theta * math.log(phi0) - x0
    out = np.empty(config.n_paths)
    trunc = np.zeros(config.n_paths, dtype=np.bool_)
    _stopping_paths(float(x0), y0, params.mu0, params.mu1, params.sigma, params.rho, y_nodes, b_vals,
                    eps, config.dt, config.n_steps, config.n_paths, np.uint64(config.seed), config.antithetic,
                    config.bridge_correction, out, trunc)
    return summarize(out, config.antithetic, trunc)


@njit(cache=True)
def _bilinear(xq, yq, xs, ys, w):
    nx = xs.size
    ny = ys.size
    if xq >= xs[nx - 1] or yq <= ys[0]:
        return 0.0
    if yq >= ys[ny - 1]:
        yq = ys[ny - 1]
    hx = xs[1] - xs[0]
    hy = ys[1] - ys[0]
    fi = (xq - xs[0]) / hx
    fj = (yq - ys[0]) / hy
    i = min(int(fi), nx - 2)
    j = min(int(fj), ny - 2)
    s = fi - i
    r = fj - j
    return ((1 - s) * (1 - r) * w[i, j] + s * (1 - r) * w[i + 1, j]
            + (1 - s) * r * w[i, j + 1] + s * r * w[i + 1, j + 1])


@njit(cache=True)
def _martingale_paths(x0, y0, mu0, mu1, sigma, rho, y_nodes, b_vals, eps, xs, ys, w, ck, dt,
                      n_paths, seed, antithetic, bridge, stopped_out, free_out):
    sq = sigma * math.sqrt(dt)
    var = sq * sq
    k_theta = (mu1 - mu0) / sigma ** 2
    creation = 2.0 * mu0 / sigma ** 2
    y_drift = -0.5 * (mu0 + mu1)
    n_ck = ck.size
    last = ck[n_ck - 1]
    for p in range(n_paths):
        sign = _start_path(seed, p, antithetic)
        z = 0.0
        top = x0
        x = x0
        y = y0
        a = 0.0
        stopped = x >= _b_lookup(y, y_nodes, b_vals) - eps
        frozen = 0.0
        if stopped:
            frozen = 1.0 + math.exp(k_theta * (x + y))
        c = 0
        k = 0
        while True:
            while c < n_ck and ck[c] == k:
                val = math.exp(creation * a - rho * k * dt) * (
                    1.0 + math.exp(k_theta * (x + y)) + _bilinear(x, y, xs, ys, w))
                free_out[p, c] = val
                stopped_out[p, c] = frozen if stopped else val
                c += 1
            if k >= last:
                break
            dz = mu0 * dt + sign * sq * np.random.standard_normal()
            low = _bridge_min(z, dz, var) if bridge else z + dz
            if -low > top:
                top = -low
            z += dz
            k += 1
            a = top - x0
            x = x0 + z + a
            y = y0 + y_drift * k * dt + a
            if not stopped and x >= _b_lookup(y, y_nodes, b_vals) - eps:
                stopped = True
                frozen = math.exp(creation * a - rho * k * dt) * (1.0 + math.exp(k_theta * (x + y)))


def martingale_diagnostic(x0: float, phi0: float, boundary: FreeBoundary, params: ModelParams,
                          config: McConfig, checkpoints, surface=None) -> dict:
    """Discounted surface value along paths, stopped at the first entry to the stopping set and not.

    The stopped process should be flat in expectation and the unstopped one
    should not increase.
    """
    y_nodes, b_vals, eps = _boundary_arrays(boundary)
    if surface is None:
        raise SurfaceMissing("martingale_diagnostic needs the solved surface")
    times = np.asarray(checkpoints, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("checkpoints must be non-negative and sorted")
    ck = np.rint(times / config.dt).astype(np.int64)
    y0 = params.sigma / params.theta * math.log(phi0) - x0
    stopped = np.empty((config.n_paths, ck.size))
    free = np.empty_like(stopped)
    _martingale_paths(float(x0), y0, params.mu0, params.mu1, params.sigma, params.rho, y_nodes, b_vals,
                      eps, surface.grid.x_nodes, surface.grid.y_nodes, np.ascontiguousarray(surface.excess),
                      ck, config.dt, config.n_paths, np.uint64(config.seed), config.antithetic,
                      config.bridge_correction, stopped, free)
    rows = []
    for c, t in enumerate(times):
        m = summarize(stopped[:, c], config.antithetic)
        f = summarize(free[:, c], config.antithetic)
        rows.append({"t": float(t), "stopped_mean": m.mean, "stopped_se": m.std_error,
                     "free_mean": f.mean, "free_se": f.std_error})
    m0 = rows[0]["stopped_mean"]
    for r in rows:
        r["stopped_gap"] = r["stopped_mean"] - m0
    return {"x0": x0, "phi0": phi0, "rows": rows}


# --------------------------------------------------------------------------- dividend strategy

@njit(cache=True)
def _d_lookup(log_phi, lo, step, table):
    f = (log_phi - lo) / step
    if f <= 0.0:
        return table[0]
    n = table.size
    if f >= n - 1:
        return table[n - 1]
    i = int(f)
    s = f - i
    return (1.0 - s) * table[i] + s * table[i + 1]


@njit(cache=True)
def _dividend_paths(x0, pi0, mu0, mu1, sigma, rho, lo, step, table, pi_min, dt, n_steps, n_paths,
                    seed, antithetic, bridge, out, truncated, band_out):
    sq = math.sqrt(dt)
    theta = (mu1 - mu0) / sigma
    mu_hat = mu1 - mu0
    for p in range(n_paths):
        sign = _start_path(seed, p, antithetic)
        x = x0
        pi = pi0
        lp = math.log(pi / (1.0 - pi))
        d_now = _d_lookup(lp, lo, step, table)
        paid = x0 - d_now if x0 > d_now else 0.0
        value = paid
        xd = x - paid
        alive = xd > 0.0
        worst = 0.0
        k = 0
        while alive and k < n_steps:
            dw = sign * sq * np.random.standard_normal()
            x += (mu0 + mu_hat * pi) * dt + sigma * dw
            pi += theta * pi * (1.0 - pi) * dw
            if pi < pi_min:
                pi = pi_min
            elif pi > 1.0 - pi_min:
                pi = 1.0 - pi_min
            k += 1
            lp = math.log(pi / (1.0 - pi))
            d_now = _d_lookup(lp, lo, step, table)
            xd_prev = xd
            if x - d_now > paid:
                value += math.exp(-rho * k * dt) * (x - d_now - paid)
                paid = x - d_now
            xd = x - paid
            if xd - d_now > worst:
                worst = xd - d_now
            if xd <= 0.0:
                alive = False
            elif bridge and xd_prev > 0.0:
                # killing probability of a bridge crossing 0 inside the step
                if np.random.random() < math.exp(-2.0 * xd_prev * xd / (sigma * sigma * dt)):
                    alive = False
        out[p] = value
        truncated[p] = alive
        band_out[p] = worst


def d_table(boundary: FreeBoundary, spacing: float = 1e-3):
    """d tabulated on a uniform grid in ln(phi) covering the clipped belief range."""
    lo = math.log(PI_MIN / (1 - PI_MIN))
    n = int(math.ceil(2 * -lo / spacing)) + 1
    log_phi = lo + spacing * np.arange(n)
    return lo, spacing, np.ascontiguousarray(boundary.c(np.exp(log_phi)), dtype=float)


def simulate_dividend_strategy(x0: float, pi0: float, boundary: FreeBoundary, params: ModelParams,
                               config: McConfig, table=None, with_band: bool = False):
    """Discounted dividends of the barrier strategy D_t = sup_s (X_s - d(pi_s))^+ until absorption.

    The uncontrolled pair (X, pi) is stepped by Euler under the innovation
    Brownian motion. With ``with_band`` the largest overshoot of the controlled
    state above d(pi) after t = 0 is also returned.
    """
    if boundary is None:
        raise BoundaryMissing("a FreeBoundary is required")
    if not x0 > 0 or not 0 < pi0 < 1:
        raise ValueError("need x0 > 0 and pi0 in (0, 1)")
    lo, step, tab = d_table(boundary) if table is None else table
    out = np.empty(config.n_paths)
    trunc = np.zeros(config.n_paths, dtype=np.bool_)
    band = np.zeros(config.n_paths)
    _dividend_paths(float(x0), float(pi0), params.mu0, params.mu1, params.sigma, params.rho, lo, step, tab,
                    PI_MIN, config.dt, config.n_steps, config.n_paths, np.uint64(config.seed), config.antithetic,
                    config.bridge_correction, out, trunc, band)
    est = summarize(out, config.antithetic, trunc)
    if with_band:
        return est, float(band.max())
    return est


# --------------------------------------------------------------------------- full-information threshold

@njit(cache=True)
def _climb(h, mu, sigma, rho, q, dt, n_steps, n_paths, seed, out):
    # reflected at 0 from x = 0 until the level h; creation exp(q A) and discounting
    sq = sigma * math.sqrt(dt)
    var = sq * sq
    for p in range(n_paths):
        _start_path(seed, p, False)
        z = 0.0
        m = 0.0
        t = 0.0
        out[p] = 0.0
        for k in range(n_steps):
            dz = mu * dt + sq * np.random.standard_normal()
            hi = _bridge_max(z, dz, var)
            low = _bridge_min(z, dz, var)
            if hi - m >= h:
                out[p] = math.exp(-q * m - rho * (t + 0.5 * dt))
                break
            if low < m:
                m = low
            z += dz
            t += dt


@njit(cache=True)
def _exits(h, mu, sigma, rho, thresholds, dt, n_steps, n_paths, seed, hit_top, hit_zero):
    # from h, killed at 0: discounted first exit through each threshold or through 0
    n_thr = thresholds.size
    sq = sigma * math.sqrt(dt)
    var = sq * sq
    for p in range(n_paths):
        _start_path(seed, p, False)
        z = h
        k = 0
        t = 0.0
        for step in range(n_steps):
            dz = mu * dt + sq * np.random.standard_normal()
            hi = _bridge_max(z, dz, var)
            low = _bridge_min(z, dz, var)
            mid = t + 0.5 * dt
            while k < n_thr and hi >= thresholds[k]:
                hit_top[p, k] = math.exp(-rho * mid)
                k += 1
            if k >= n_thr:
                break
            if low <= 0.0:
                w = math.exp(-rho * mid)
                while k < n_thr:
                    hit_zero[p, k] = w
                    k += 1
                break
            z += dz
            t += dt


def _threshold_curve(k_mean, top, zero):
    return k_mean * top / (1.0 - k_mean * zero)


def _argmax_fit(thresholds, values, half_width):
    i = int(np.argmax(values))
    sel = np.abs(thresholds - thresholds[i]) <= half_width
    coef = np.polyfit(thresholds[sel] - thresholds[i], np.log(values[sel]), 4)
    fine = np.linspace(-half_width, half_width, 4001)
    poly = np.polyval(coef, fine)
    return float(thresholds[i] + fine[np.argmax(poly)])


def full_info_threshold_mc(params: ModelParams, n_paths: int = 100_000, seed: int = 7,
                           dt: float = 2e-3, horizon: float = 40.0, level: float = 0.3,
                           thresholds=None, half_width: float = 0.4, n_groups: int = 20) -> dict:
    """Monte Carlo optimal threshold of the reflected stopping problem with drift mu1.

    The value of the threshold rule at a, started from 0, is split at an
    intermediate level h: J(a) = K S(a) / (1 - K R(a)), with K the creation
    weight of the climb from 0 to h, S(a) and R(a) the discounted exits of a
    killed path from h through a and through 0. Plain averaging of the creation
    weight up to a has infinite variance; these pieces do not. The threshold
    estimate maximises a quartic fit of log J near the best sampled threshold.
    """
    mu, sigma, rho = params.mu1, params.sigma, params.rho
    q = 2 * mu / sigma ** 2
    if thresholds is None:
        thresholds = np.arange(level + 0.05, 3.0 * sigma ** 2 / mu + 1e-12, 0.01)
    thresholds = np.asarray(thresholds, dtype=float)
    n_steps = int(math.ceil(horizon / dt))
    start = time.perf_counter()
    climb = np.empty(n_paths)
    _climb(level, mu, sigma, rho, q, dt, n_steps, n_paths, np.uint64(seed), climb)
    top = np.zeros((n_paths, thresholds.size))
    zero = np.zeros_like(top)
    _exits(level, mu, sigma, rho, thresholds, dt, n_steps, n_paths,
           np.uint64(_splitmix64(np.uint64(seed))), top, zero)
    curve = _threshold_curve(climb.mean(), top.mean(axis=0), zero.mean(axis=0))
    a_hat = _argmax_fit(thresholds, curve, half_width)
    # delete-a-group jackknife over paired groups of climbs and exits
    groups = np.arange(n_paths) % n_groups
    leave = []
    for g in range(n_groups):
        keep = groups != g
        c = _threshold_curve(climb[keep].mean(), top[keep].mean(axis=0), zero[keep].mean(axis=0))
        leave.append(_argmax_fit(thresholds, c, half_width))
    leave = np.asarray(leave)
    se = float(math.sqrt((n_groups - 1) / n_groups * np.sum((leave - leave.mean()) ** 2)))
    return {"a_star": a_hat, "std_error": se, "thresholds": thresholds, "value": curve,
            "climb_mean": float(climb.mean()), "n_paths": n_paths, "level": level,
            "wall_time": time.perf_counter() - start}
