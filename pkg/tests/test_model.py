from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fkefield.errors import RangeError, SingularAtOrigin, WellPosednessViolation
from fkefield.model import (
    FractionalSheet,
    Gauge,
    Hybrid,
    Limit,
    Riesz,
    White,
    gauge_eval,
    gauge_invert,
    noise_from_dict,
    noise_to_dict,
    psi,
    spectral_density,
    validate,
)


def test_psi_values(heat06, bessel06):
    assert psi(heat06, 0.0) == 0.0
    assert psi(heat06, 2.0) == pytest.approx(4.0, rel=1e-15)
    assert psi(bessel06, 1.0) == pytest.approx(math.sqrt(2.0), rel=1e-15)


def test_psi_two_dim(sheet2d):
    assert psi(sheet2d, np.array([3.0, 4.0])) == pytest.approx(25.0, rel=1e-15)


def test_white_density(heat06, sheet2d):
    assert spectral_density(heat06, 0.7) == pytest.approx(1.0 / (2 * math.pi))
    m = validate(2, 0.0, 2.0, 0.75, White())
    assert spectral_density(m, np.array([1.0, 2.0])) == pytest.approx((2 * math.pi) ** -2)


def test_riesz_density_at_unit(riesz05):
    assert spectral_density(riesz05, 1.0) == pytest.approx(0.3989422804014327, rel=1e-12)


def test_riesz_density_singular_at_origin(riesz05):
    with pytest.raises(SingularAtOrigin):
        spectral_density(riesz05, 0.0)


@settings(max_examples=40, deadline=None)
@given(
    beta=st.floats(0.1, 0.9),
    r=st.floats(0.1, 10.0),
    c=st.floats(0.2, 5.0),
)
def test_density_scaling(beta, r, c):
    m = validate(1, 0.0, 2.0, 0.9, Riesz(beta))
    lhs = spectral_density(m, c * r)
    rhs = c ** (beta - 1.0) * spectral_density(m, r)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_sheet_density_scaling(sheet2d):
    xi = np.array([0.3, 1.7])
    c = 2.5
    ratio = spectral_density(sheet2d, c * xi) / spectral_density(sheet2d, xi)
    assert ratio == pytest.approx(c ** (sheet2d.beta - 2), rel=1e-12)


def test_validate_heat_exponents(heat06):
    assert heat06.beta == 1.0
    assert heat06.alpha1 == pytest.approx(0.7)
    assert heat06.alpha2 == pytest.approx(0.35)
    assert heat06.Q == pytest.approx(1 / 0.35 + 1 / 0.7)


def test_validate_log_case(heat075):
    assert heat075.alpha1 == pytest.approx(1.0)
    assert heat075.log_case
    assert heat075.Q == pytest.approx(3.0)


def test_validate_sheet(sheet2d):
    assert sheet2d.beta == pytest.approx(1.0)
    assert sheet2d.alpha1 == pytest.approx(0.9)
    assert sheet2d.alpha2 == pytest.approx(0.45)


def test_well_posedness_checked_before_dimension():
    with pytest.raises(WellPosednessViolation):
        validate(4, 0.0, 2.0, 0.6, Riesz(3.5))


@pytest.mark.parametrize(
    "args",
    [
        (1, 0.0, 2.0, 0.5, White()),
        (1, 0.0, 2.0, 1.0, White()),
        (1, 0.0, 0.0, 0.6, White()),
        (1, -1.0, 2.0, 0.6, White()),
        (3, 0.0, 2.0, 0.9, White()),
        (1, 0.0, 2.0, 0.6, Riesz(1.0)),
        (2, 0.0, 2.0, 0.7, FractionalSheet((0.75,))),
        (2, 0.0, 2.0, 0.7, Hybrid(((1, White()), (2, White())))),
    ],
)
def test_validate_rejects(args):
    with pytest.raises(RangeError):
        validate(*args)


def test_validate_rejects_ill_posed():
    with pytest.raises(WellPosednessViolation):
        validate(1, 0.0, 0.5, 0.6, White())


def test_validate_rejects_box():
    with pytest.raises(RangeError):
        validate(1, 0.0, 2.0, 0.6, White(), M=1.0)
    with pytest.raises(RangeError):
        validate(1, 0.0, 2.0, 0.6, White(), t0=1.0)


@pytest.mark.parametrize(
    "noise",
    [White(), Riesz(0.5), FractionalSheet((0.6, 0.8)), Hybrid(((1, White()), (1, Riesz(0.5))))],
)
def test_noise_round_trip(noise):
    assert noise_from_dict(noise_to_dict(noise)) == noise


def test_noise_unknown_key():
    with pytest.raises(RangeError):
        noise_from_dict({"kind": "riesz", "beta": 0.5, "bta": 1})


def test_hybrid_profile_matches_product():
    m = validate(2, 0.0, 2.0, 0.75, Hybrid(((1, White()), (1, White()))))
    w = validate(2, 0.0, 2.0, 0.75, White())
    assert m.beta == w.beta
    assert m.sphere_mass() == pytest.approx(w.sphere_mass(), rel=1e-12)


def test_model_hash_stable(heat06):
    again = validate(1, 0, 2, 0.6, {"kind": "white"})
    assert again.model_hash() == heat06.model_hash()
    assert validate(1, 0, 2, 0.61, White()).model_hash() != heat06.model_hash()


# Gauges


def test_q1_power(heat06):
    g = Gauge.from_model(heat06)
    assert g.q1(0.01) == pytest.approx(0.0398107170553497, rel=1e-12)


def test_q1_log_case(heat075):
    g = Gauge.from_model(heat075)
    assert g.q1(0.1) == pytest.approx(0.216538205731, rel=1e-10)
    assert g.q1(0.0) == 0.0


def test_q2_inverse_value(heat06):
    g = Gauge.from_model(heat06)
    assert g.q2_inv(0.5) == pytest.approx(0.138011189209, rel=1e-10)


def test_g_q_value(heat06):
    g = Gauge.from_model(heat06, n=4)
    assert g.g_q(0.5) == pytest.approx(1.219013654204, rel=1e-10)


@pytest.mark.parametrize("log_case", [False, True])
def test_round_trips(log_case):
    a1 = 1.0 if log_case else 0.7
    g = Gauge(1, 2.0, a1, a1 / 2, 1)
    tau = np.geomspace(1e-12, g.tau_max, 200)
    back = g.q1_inv(g.q1(tau))
    assert np.max(np.abs(back - tau) / tau) < 1e-10
    v = np.geomspace(1e-8, 10.0, 50)
    assert np.max(np.abs(g.q2(g.q2_inv(v)) - v) / v) < 1e-12


@settings(max_examples=50, deadline=None)
@given(a1=st.floats(0.05, 1.5), v=st.floats(1e-6, 1.0))
def test_q1_inverse_property(a1, v):
    g = Gauge(1, 2.0, a1, a1 / 2, 1)
    v = min(v, g.q1_max())
    assert float(g.q1(g.q1_inv(v))) == pytest.approx(v, rel=1e-10)


@pytest.mark.parametrize("a1", [0.4, 0.7, 1.0, 1.3])
def test_gauges_monotone(a1):
    g = Gauge(2, 2.0, a1, a1 / 2, 3)
    tau = np.geomspace(1e-8, g.tau_max, 400)
    assert np.all(np.diff(g.q1(tau)) > 0)
    assert np.all(np.diff(g.q2(tau)) > 0)


@pytest.mark.parametrize("a1,n", [(0.7, 4), (0.4, 2), (1.3, 3)])
def test_g_q_slope(a1, n):
    g = Gauge(1, 2.0, a1, a1 / 2, n)
    tau = np.geomspace(1e-6, 1e-2, 20)
    slope = np.polyfit(np.log(tau), np.log(g.g_q(tau)), 1)[0]
    assert abs(slope - (n - g.Q)) < 0.02


def test_g_q_log_case_approaches_power(heat075):
    g = Gauge.from_model(heat075, n=4)
    errs = []
    for lo in (1e-3, 1e-6, 1e-9):
        tau = np.array([lo, 10 * lo])
        errs.append(abs(np.diff(np.log(g.g_q(tau)))[0] / math.log(10) - (g.n - g.Q)))
    assert errs[0] > errs[1] > errs[2]


def test_g_q_limits():
    assert Gauge(1, 2.0, 0.7, 0.35, 2).g_q_at_zero() == Limit.infinite()
    assert Gauge(1, 2.0, 0.7, 0.35, 5).g_q_at_zero() == Limit.zero()
    assert Gauge(1, 2.0, 0.5, 0.5, 4).g_q_at_zero() == Limit.finite(1.0)
    assert Gauge(1, 2.0, 1.0, 0.5, 3).g_q_at_zero() == Limit.infinite()


def test_frak_g_reciprocal():
    g = Gauge(1, 2.0, 0.7, 0.35, 2)
    z = np.array([0.3, 0.4])
    assert g.frak_g(z) == pytest.approx(1.0 / g.g_q(0.5))
    assert g.frak_g_at_zero() == Limit.zero()


def test_gauge_eval_dispatch(heat06):
    g = Gauge.from_model(heat06, n=2)
    assert gauge_eval(g, "g_q", 0.0) == Limit.infinite()
    assert gauge_eval(g, "frak_g", np.zeros(2)) == Limit.zero()
    assert gauge_eval(g, "rho", ((0.5, 0.1), (0.6, 0.2))) == pytest.approx(0.1**0.7 + 0.1**0.35)
    assert gauge_invert(g, "q2", 0.5) == pytest.approx(0.138011189209)


def test_q1_domain(heat06):
    g = Gauge.from_model(heat06)
    with pytest.raises(Exception):
        g.q1(-1.0)
    with pytest.raises(RangeError):
        g.q1_inv(g.q1_max() * 2)
