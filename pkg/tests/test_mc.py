import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divfbp.mc import (BoundaryMissing, McConfig, SurfaceMissing, eval_stopping_value, full_info_threshold_mc,
                       martingale_diagnostic, simulate_dividend_strategy, simulate_reflected, summarize,
                       sup_tail_oracle)

from conftest import CASES

P = CASES["zero_drift_sum"]


@settings(max_examples=20)
@given(st.floats(0.0, 2.0), st.integers(0, 2 ** 32), st.booleans())
def test_reflection_keeps_state_non_negative(x0, seed, bridge):
    cfg = McConfig(n_paths=50, dt=0.01, horizon=2.0, seed=seed, bridge_correction=bridge)
    t, x, a = simulate_reflected(x0, P, cfg)
    assert np.all(x >= 0)
    assert np.all(np.diff(a, axis=1) >= 0)
    assert np.all(a[:, 0] == 0)
    assert t.size == cfg.n_steps + 1


def test_pushing_term_matches_running_minimum():
    # A_t = max(0, sup_s (-x0 - driver_s)); without the bridge the discrete version is exact
    cfg = McConfig(n_paths=20, dt=0.01, horizon=1.0, seed=3, bridge_correction=False)
    t, x, a = simulate_reflected(0.3, P, cfg)
    driver = x - a - 0.3
    expected = np.maximum.accumulate(np.maximum(-0.3 - driver, 0.0), axis=1)
    assert np.allclose(a, expected, atol=1e-12)


def test_same_seed_same_paths():
    cfg = McConfig(n_paths=64, dt=0.01, horizon=1.0, seed=11)
    assert np.array_equal(simulate_reflected(0.5, P, cfg)[1], simulate_reflected(0.5, P, cfg)[1])
    other = simulate_reflected(0.5, P, cfg.replace(seed=12))[1]
    assert not np.array_equal(simulate_reflected(0.5, P, cfg)[1], other)


def test_path_prefix_independent_of_path_count():
    # per-path seeding: path p is the same whether 10 or 100 paths are drawn
    cfg = McConfig(n_paths=100, dt=0.01, horizon=1.0, seed=5)
    many = simulate_reflected(0.5, P, cfg)[1]
    few = simulate_reflected(0.5, P, cfg.replace(n_paths=10))[1]
    assert np.array_equal(many[:10], few)


@pytest.mark.parametrize("kwargs", [dict(n_paths=0), dict(dt=0.0), dict(horizon=1e-4, dt=1e-3),
                                    dict(seed=-1), dict(antithetic=True, n_paths=3)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        McConfig(**kwargs)


def test_summarize_pairs_antithetic_draws():
    est = summarize([1.0, 3.0, 2.0, 2.0], antithetic=True)
    assert est.mean == 2.0
    assert est.std_error == 0.0
    assert est.n_effective == 2


def test_start_in_stopping_set_has_zero_variance(zero_case):
    fb = zero_case.boundary
    x0, phi0 = fb.a_star + 0.5, 2.0
    est = eval_stopping_value(x0, phi0, fb, P, McConfig(n_paths=200, dt=0.01, horizon=2.0))
    assert est.mean == pytest.approx(1.0 + phi0, rel=1e-12)
    assert est.std_error == 0.0


def test_antithetic_does_not_increase_error(zero_case):
    fb = zero_case.boundary
    base = McConfig(n_paths=4000, dt=0.01, horizon=10.0, seed=21)
    plain = eval_stopping_value(0.3, 3.0, fb, P, base)
    anti = eval_stopping_value(0.3, 3.0, fb, P, base.replace(antithetic=True))
    # both report the error of the mean; pairing should not make it worse
    assert anti.std_error <= plain.std_error * 1.05
    assert abs(anti.mean - plain.mean) < 4 * math.hypot(anti.std_error, plain.std_error)


def test_missing_inputs():
    with pytest.raises(BoundaryMissing):
        eval_stopping_value(0.1, 1.0, None, P, McConfig(n_paths=2, dt=0.1, horizon=1.0))


def test_martingale_needs_surface(zero_case):
    with pytest.raises(SurfaceMissing):
        martingale_diagnostic(0.3, 3.0, zero_case.boundary, P, McConfig(n_paths=2, dt=0.1, horizon=1.0), [0.0])


def test_stopped_surface_is_flat_in_expectation(zero_case):
    cfg = McConfig(n_paths=20_000, dt=0.005, horizon=1.0, seed=9)
    out = martingale_diagnostic(0.3, 3.0, zero_case.boundary, P, cfg, [0.0, 0.5, 1.0],
                                surface=zero_case.surface)
    rows = out["rows"]
    assert rows[0]["stopped_se"] < 1e-12
    for r in rows[1:]:
        # coarse grid: allow its truncation error on top of the noise
        assert abs(r["stopped_gap"]) < 4 * r["stopped_se"] + 0.05 * rows[0]["stopped_mean"]
        assert r["free_mean"] <= rows[0]["stopped_mean"] + 4 * r["free_se"]


def test_tail_law_small_sample():
    res = sup_tail_oracle(1.0, P, McConfig(n_paths=20_000, dt=0.05, horizon=50.0, seed=2))
    # Kolmogorov bound at 20k paths is about 0.0096 at the 95% level
    assert res["max_deviation"] < 0.015
    assert np.allclose(res["exact_survival"], 1 - np.linspace(0.05, 0.95, 19))


def test_dividend_pays_initial_lump(zero_case):
    fb = zero_case.boundary
    pi0 = 0.6
    d0 = float(fb.d(pi0))
    x0 = d0 + 1.0
    cfg = McConfig(n_paths=2000, dt=0.01, horizon=10.0, seed=4)
    est, band = simulate_dividend_strategy(x0, pi0, fb, P, cfg, with_band=True)
    assert est.mean > 1.0
    assert band <= 1e-12


def test_dividend_value_grows_with_capital(zero_case):
    fb = zero_case.boundary
    cfg = McConfig(n_paths=4000, dt=0.01, horizon=10.0, seed=8)
    lo = simulate_dividend_strategy(0.2, 0.5, fb, P, cfg)
    hi = simulate_dividend_strategy(0.8, 0.5, fb, P, cfg)
    assert hi.mean > lo.mean


def test_threshold_mc_small_sample():
    res = full_info_threshold_mc(P, n_paths=5000, seed=3)
    assert abs(res["a_star"] - 1.2464504802804603) < 5 * res["std_error"] + 0.05
    assert res["std_error"] > 0
