import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from divfbp.params import (CaseTag, ModelParams, ParamsError, RejectedDiscount, RejectedSignAssumption,
                           dumps_params, format_float, from_y, loads_params, to_phi, to_pi, to_y, validate,
                           y_ell)

beliefs = st.floats(min_value=1e-6, max_value=1 - 1e-6)
drifts = st.tuples(st.floats(-3, -0.05), st.floats(0.05, 3), st.floats(0.2, 3), st.floats(0.05, 2))


def test_validate_tags_the_three_regimes():
    assert validate(ModelParams(-1, 1, 1, 0.5)) is CaseTag.CASE_I
    assert validate(ModelParams(-0.5, 1, 1, 0.5)) is CaseTag.CASE_I
    assert validate(ModelParams(-1, 0.5, 1, 0.5)) is CaseTag.CASE_II


@pytest.mark.parametrize("params, exc", [
    (ModelParams(1, 1, 1, 0.5), RejectedSignAssumption),
    (ModelParams(-1, -0.5, 1, 0.5), RejectedSignAssumption),
    (ModelParams(-1, 1, 0, 0.5), ParamsError),
    (ModelParams(-1, 1, 1, 0), ParamsError),
    (ModelParams(-1, 1, 1, float("nan")), ParamsError),
    # theta = 1.5, |mu0 + mu1| = 0.5 so rho must reach 0.375
    (ModelParams(-1, 0.5, 1, 0.3), RejectedDiscount),
])
def test_validate_rejects(params, exc):
    with pytest.raises(exc):
        validate(params)


def test_case_two_threshold_is_inclusive():
    p = ModelParams(-1, 0.5, 1, 0.375)
    assert validate(p) is CaseTag.CASE_II


def test_y_ell_zero_when_drifts_cancel():
    assert y_ell(ModelParams(-1, 1, 1, 0.5)) == 0.0
    p = ModelParams(-1, 0.5, 1, 0.5)
    assert y_ell(p) == pytest.approx(math.log(2) / 1.5)


@given(beliefs)
def test_pi_phi_round_trip(pi):
    assert to_pi(to_phi(pi)) == pytest.approx(pi, rel=1e-12)


@given(drifts, st.floats(0, 10), beliefs)
def test_y_coordinates_round_trip(p, x, pi):
    params = ModelParams(*p)
    phi = to_phi(pi)
    y = to_y(x, phi, params)
    assert from_y(x, y, params) == pytest.approx(phi, rel=1e-9)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, float("nan")])
def test_to_phi_rejects_outside_open_interval(bad):
    with pytest.raises(ValueError):
        to_phi(bad)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_is_lossless(v):
    assert float(format_float(v)) == v


@given(drifts)
def test_params_text_round_trip(p):
    params = ModelParams(*p)
    text = dumps_params(params)
    assert loads_params(text) == params
    assert set(json.loads(text)) == {"mu0", "mu1", "sigma", "rho"}


def test_from_dict_missing_key():
    with pytest.raises(ParamsError):
        ModelParams.from_dict({"mu0": -1, "mu1": 1, "sigma": 1})


def test_theta_is_signal_to_noise():
    p = ModelParams(-1, 1, 2, 0.5)
    assert p.theta == 1.0
    assert np.isclose(p.mu_hat, 2.0)
