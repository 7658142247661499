import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from divfbp.full_info import (BracketingFailure, characteristic_roots, creation_residual, solve_full_info,
                              solve_full_info_psor)
from divfbp.params import ModelParams

BASE = ModelParams(-1.0, 1.0, 1.0, 0.5)
# independent 30-digit root of the smooth-fit system, frozen
A_STAR_BASE = 1.2464504802804603


def mp_threshold(mu1, sigma, rho):
    """Oracle written from scratch in 30 digits. With U = c+ e^{r+ x} + c- e^{r- x}, the creation
    condition fixes c+/c- = (disc - mu1)/(disc + mu1) and smooth fit at a fixes
    c+/c- = -(r-/r+) e^{(r- - r+) a}, which solves for a in closed form."""
    mpmath.mp.dps = 30
    mu1, sigma, rho = mpmath.mpf(mu1), mpmath.mpf(sigma), mpmath.mpf(rho)
    s2 = sigma ** 2
    disc = mpmath.sqrt(mu1 ** 2 + 2 * rho * s2)
    rp, rm = (-mu1 + disc) / s2, (-mu1 - disc) / s2
    ratio = (disc - mu1) / (disc + mu1)
    return float(mpmath.log(ratio * -rp / rm) / (rm - rp))


def test_threshold_matches_frozen_oracle():
    assert solve_full_info(BASE).a_star == pytest.approx(A_STAR_BASE, abs=1e-13)
    assert mp_threshold(1.0, 1.0, 0.5) == pytest.approx(A_STAR_BASE, abs=1e-14)


@given(st.floats(0.2, 2.0), st.floats(0.5, 2.0), st.floats(0.1, 1.5))
def test_threshold_matches_mpmath(mu1, sigma, rho):
    a = solve_full_info(ModelParams(-1.0, mu1, sigma, rho)).a_star
    assert a == pytest.approx(mp_threshold(mu1, sigma, rho), rel=1e-10)


def test_roots_solve_characteristic_polynomial():
    rp, rm = characteristic_roots(BASE)
    for r in (rp, rm):
        assert 0.5 * r * r + 1.0 * r - 0.5 == pytest.approx(0.0, abs=1e-14)
    assert rp > 0 > rm


def test_curve_properties():
    fi = solve_full_info(BASE)
    x = np.linspace(0, 3, 601)
    u = fi.value(x)
    assert np.all(u >= 1.0)
    assert np.all(np.diff(u) <= 1e-15)
    assert fi.value(fi.a_star) == pytest.approx(1.0, abs=1e-12)
    assert fi.derivative(fi.a_star - 1e-12) == pytest.approx(0.0, abs=1e-9)
    assert creation_residual(fi.a_star, BASE) == pytest.approx(0.0, abs=1e-12)
    # the ODE holds on (0, a*)
    xs = np.linspace(0.05, fi.a_star - 0.05, 7)
    ode = 0.5 * fi.derivative(xs, 2) + 1.0 * fi.derivative(xs) - 0.5 * fi.value(xs)
    assert np.max(np.abs(ode)) < 1e-11


def test_bad_bracket_raises():
    with pytest.raises(BracketingFailure):
        solve_full_info(BASE, bracket=(2.0, 3.0))


def test_psor_estimate_coarse():
    a, x, u, _ = solve_full_info_psor(BASE, h=1e-3)
    assert abs(a - A_STAR_BASE) <= 2e-3
    assert np.all(u >= 1.0 - 1e-12)
