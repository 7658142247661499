import numpy as np
import pytest
from hypothesis import given, strategies as st

from divfbp.fbp import (Grid2D, MissingFullInfo, NotConverged, SolverConfig,
                        apply_boundary_conditions, assemble_operator, fitted_weight, obstacle_field,
                        solve_obstacle, solve_value_surface)
from divfbp.full_info import solve_full_info
from divfbp.mc import McConfig, eval_stopping_value
from divfbp.params import y_ell

from conftest import CASES


@given(st.floats(-30, 30))
def test_fitted_weight_identity(z):
    # F(-z) - F(z) = z keeps the fitted upwind pair consistent with the centred drift
    assert fitted_weight(-z) - fitted_weight(z) == pytest.approx(z, abs=1e-9 * max(1, abs(z)))
    assert fitted_weight(z) > 0


def test_fitted_weight_limit():
    assert fitted_weight(0.0) == 1.0
    assert fitted_weight(1e-12) == pytest.approx(1.0)


def test_fitted_weights_exact_on_exponential():
    # a forward difference of e^{ky} weighted by F(k hy) is exactly its derivative at the node
    p = CASES["zero_drift_sum"]
    k = p.theta / p.sigma
    for hy in (0.01, 0.1, 0.5):
        north = 0.5 * p.sigma ** 2 / hy * fitted_weight(k * hy)
        assert north * (np.exp(k * hy) - 1) == pytest.approx(0.5 * p.sigma ** 2 * k, rel=1e-12)


@pytest.mark.parametrize("name", list(CASES))
def test_operator_is_monotone(name):
    p = CASES[name]
    fi = solve_full_info(p)
    g = Grid2D.default(p, fi.a_star, 41, 41)
    op = apply_boundary_conditions(assemble_operator(g, p), g, p, fi)
    free = ~op.fixed
    for w in (op.west, op.east, op.south, op.north):
        assert np.all(w[free] >= 0)
    assert np.all(op.diag[free] < 0)


def test_boundary_conditions_need_full_info():
    p = CASES["zero_drift_sum"]
    g = Grid2D.uniform(2.0, -3.0, 3.0, 11, 11)
    with pytest.raises(MissingFullInfo):
        apply_boundary_conditions(assemble_operator(g, p), g, p, None)


def test_solve_respects_iteration_cap():
    p = CASES["zero_drift_sum"]
    fi = solve_full_info(p)
    g = Grid2D.default(p, fi.a_star, 41, 41)
    with pytest.raises(NotConverged) as info:
        solve_value_surface(p, g, fi, SolverConfig(max_iter=1, check_every=1), warm_start=False)
    assert info.value.iterations == 1


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(omega=2.0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0)


def test_grid_refined_halves_spacing():
    g = Grid2D.uniform(2.0, -1.0, 3.0, 21, 41)
    r = g.refined()
    assert r.hx == pytest.approx(g.hx / 2)
    assert r.hy == pytest.approx(g.hy / 2)
    assert r.x_nodes[-1] == g.x_nodes[-1]


def test_complementarity(small_case):
    s = small_case.surface
    assert s.final_residual <= s.tol
    assert np.all(s.excess >= -1e-12 * s.obstacle)
    assert np.max(np.abs(s.residual)) <= s.tol


def test_boundary_data(small_case):
    s = small_case.surface
    g = obstacle_field(s.grid, small_case.params)
    assert np.array_equal(s.u_hat[:, 0], g[:, 0])
    assert np.array_equal(s.u_hat[-1, :], g[-1, :])


def test_warm_start_does_not_change_answer():
    p = CASES["positive_drift_sum"]
    fi = solve_full_info(p)
    g = Grid2D.default(p, fi.a_star, 81, 81)
    cfg = SolverConfig(tol=1e-10)
    cold = solve_value_surface(p, g, fi, cfg, warm_start=False)
    warm = solve_value_surface(p, g, fi, cfg, warm_start=True)
    assert np.max(np.abs(cold.u_hat - warm.u_hat) / cold.obstacle) < 1e-7


def test_excess_and_direct_obstacle_converge_together():
    # both discretise the same problem; the direct form carries an O(h) obstacle-image error
    p = CASES["zero_drift_sum"]
    fi = solve_full_info(p)
    gaps = []
    for n in (41, 81):
        g = Grid2D.default(p, fi.a_star, n, n)
        op = apply_boundary_conditions(assemble_operator(g, p), g, p, fi)
        exact = solve_obstacle(op, obstacle_field(g, p), exact_obstacle=True)
        direct = solve_obstacle(op, obstacle_field(g, p), exact_obstacle=False)
        gaps.append(np.mean(np.abs(exact.u_hat - direct.u_hat) / exact.obstacle))
    assert gaps[0] / gaps[1] > 1.6


@pytest.mark.parametrize("name", list(CASES))
def test_refinement_deltas_shrink_linearly(name):
    # nested grids n, 2n-1, 4n-3 share the coarse nodes; first order means the
    # second change is about half the first
    p = CASES[name]
    fi = solve_full_info(p)
    grid = Grid2D.default(p, fi.a_star, 61, 61)
    grids = [grid, grid.refined(), grid.refined().refined()]
    u = [solve_value_surface(p, g, fi).u_bar() for g in grids]
    first = np.abs(u[1][::2, ::2] - u[0]).max()
    second = np.abs(u[2][::4, ::4] - u[1][::2, ::2]).max()
    assert 0.3 <= second / first <= 0.7


def _stopping_mc_at_zero(case, y, seed=1):
    p = case.params
    phi = np.exp(p.theta / p.sigma * y)
    est = eval_stopping_value(0.0, phi, case.boundary, p, McConfig(n_paths=4000, dt=0.005, horizon=20.0, seed=seed))
    # paths stopped at once pay the obstacle up to rounding; count that as no margin
    margin = est.mean - (1 + phi)
    return (margin if abs(margin) > 1e-12 * (1 + phi) else 0.0), est.std_error


def test_high_ordinate_at_zero_beats_obstacle(small_case):
    p = small_case.params
    margin, se = _stopping_mc_at_zero(small_case, y_ell(p) + 2 * p.sigma / p.theta)
    assert margin >= 3 * se > 0


def test_mc_certified_ordinates_lie_above_y_star(zero_case):
    # the extracted rule is admissible, so beating the obstacle by 3 SE certifies continuation
    p = zero_case.params
    y0 = zero_case.boundary.y_star_0
    hy = zero_case.grid.hy
    certified = [y for y in y0 + np.linspace(-1.0, 1.0, 9)
                 if (lambda m: m[0] > 0 and m[0] >= 3 * m[1])(_stopping_mc_at_zero(zero_case, y))]
    assert certified
    assert min(certified) >= y0 - 2 * hy
