from __future__ import annotations

import math

import numpy as np
import pytest

from fkefield.errors import RangeError, ShapeMismatch
from fkefield.green import GaussianBump, TabulatedL1, Zero, decay_radius, drift, green_eval, green_mass


def heat_kernel(t, x):
    return np.exp(-x * x / (4 * t)) / np.sqrt(4 * math.pi * t)


def test_heat_kernel_values(heat06):
    assert green_eval(heat06, 1.0, 0.0) == pytest.approx(0.282094791773878, abs=1e-6)
    assert green_eval(heat06, 1.0, 2.0) == pytest.approx(0.103776874355149, abs=1e-6)


@pytest.mark.parametrize("t", [0.05, 0.3, 1.0])
def test_heat_kernel_closed_form(heat06, t):
    x = np.linspace(-2.0, 2.0, 64)
    assert np.max(np.abs(green_eval(heat06, t, x) - heat_kernel(t, x))) < 1e-6


def test_green_symmetric(bessel06):
    x = np.linspace(0.0, 2.0, 17)
    assert np.allclose(green_eval(bessel06, 0.4, x), green_eval(bessel06, 0.4, -x), atol=1e-12)


def test_green_radial_in_plane(sheet2d):
    a = green_eval(sheet2d, 0.5, np.array([0.6, 0.8]))
    b = green_eval(sheet2d, 0.5, np.array([1.0, 0.0]))
    assert a == pytest.approx(b, abs=1e-8)


@pytest.mark.parametrize("fixture", ["heat06", "bessel06", "sheet2d"])
def test_mass_one(fixture, request):
    m = request.getfixturevalue(fixture)
    assert green_mass(m, 0.5) == pytest.approx(1.0, abs=1e-6)


def test_bump_drift_closed_form(heat06):
    A, w, t = 1.3, 0.4, 0.25
    x = np.linspace(-1.5, 1.5, 31)
    s2 = w * w + 2 * t
    expected = A * w / math.sqrt(s2) * np.exp(-x * x / (2 * s2))
    assert np.max(np.abs(drift(heat06, GaussianBump(A, w), t, x) - expected)) < 1e-8


def test_tabulated_matches_bump(heat06):
    ax = np.linspace(-6.0, 6.0, 1201)
    bump = GaussianBump(1.0, 0.5)
    tab = TabulatedL1(tuple(ax), bump(ax[:, None]))
    x = np.linspace(-1.0, 1.0, 9)
    assert np.allclose(drift(heat06, tab, 0.2, x), drift(heat06, bump, 0.2, x), atol=1e-8)


def test_zero_drift(heat06):
    assert np.all(drift(heat06, Zero(), 0.5, np.linspace(-1, 1, 5)) == 0.0)


def test_bad_data():
    with pytest.raises(RangeError):
        GaussianBump(1.0, 0.0)
    with pytest.raises(ShapeMismatch):
        TabulatedL1((0.0, 1.0, 0.5), np.zeros(3))


def test_decay_radius_monotone_in_time(heat06):
    radii = [decay_radius(heat06, t) for t in (0.05, 0.2, 0.5)]
    assert radii[0] < radii[1] < radii[2]
    # Heat kernel drops below 1e-6 at x = sqrt(4t log(1e6 / sqrt(4 pi t))).
    t = 0.2
    exact = math.sqrt(4 * t * math.log(1e6 / math.sqrt(4 * math.pi * t)))
    assert radii[1] == pytest.approx(exact, abs=4 * 2.0 / 2047)


def test_green_lipschitz_in_space(heat06):
    t = 0.3
    x = np.linspace(-1.0, 1.0, 201)
    g = green_eval(heat06, t, x)
    slope = np.max(np.abs(np.diff(g)) / np.diff(x))
    # sup |G'| for the heat kernel is (4 pi t)^{-1/2} (2t)^{-1/2} e^{-1/2}.
    bound = (4 * math.pi * t) ** -0.5 * (2 * t) ** -0.5 * math.exp(-0.5)
    assert slope <= bound * (1 + 1e-6)
