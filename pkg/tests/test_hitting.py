from __future__ import annotations

import csv
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import beta as beta_fn

from fkefield.covariance import GridSpec
from fkefield.errors import GridTooCoarse, RangeError, ShapeMismatch
from fkefield.hitting import (
    Ball,
    Box,
    HitEstimate,
    Point,
    _minimize_energy,
    _project_simplex,
    capacity_estimate,
    hausdorff_upper,
    hit_probability_mc,
    polarity_experiment,
    target_from_dict,
    target_to_dict,
)
from fkefield.model import Gauge


def gauge(n, a1=0.7, a2=0.35):
    return Gauge(1, 2.0, a1, a2, n)


# Targets


@pytest.mark.parametrize("t", [Point((0.0, 1.0)), Ball((0.5,), 0.2), Box((0, 0), (1, 2))])
def test_target_round_trip(t):
    assert target_from_dict(target_to_dict(t)) == t


def test_target_validation():
    with pytest.raises(RangeError):
        Ball((0.0,), 0.0)
    with pytest.raises(RangeError):
        Box((1.0,), (0.0,))
    with pytest.raises(ShapeMismatch):
        Box((0.0, 0.0), (1.0,))
    with pytest.raises(RangeError):
        target_from_dict({"kind": "Ball", "center": [0], "radius": 1, "r": 2})


# Conventions


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_point_conventions(n):
    g = gauge(n)
    cap = capacity_estimate(g, Point(np.zeros(n)))
    haus = hausdorff_upper(g, Point(np.zeros(n)))
    if n < g.Q:
        assert cap == 1.0 and haus == math.inf
    else:
        assert cap == 0.0 and haus == 0.0


def test_critical_point_log_case():
    # n = Q with the log gauge: g_q blows up at 0, so frak_g is bounded.
    g = Gauge(1, 2.0, 1.0, 0.5, 3)
    assert capacity_estimate(g, Point((0, 0, 0))) == 1.0
    assert hausdorff_upper(g, Point((0, 0, 0))) == math.inf


def test_dimension_mismatch():
    with pytest.raises(ShapeMismatch):
        capacity_estimate(gauge(2), Ball((0.0,), 1.0))


def test_bounded_kernel_gives_unit_capacity():
    assert capacity_estimate(gauge(3), Ball((0, 0, 0), 0.5)) == 1.0


def test_thin_set_has_zero_capacity():
    # A segment in R^6 with n - Q > 1: the kernel is not integrable on a line.
    g = gauge(6)
    assert g.n - g.Q > 1
    assert capacity_estimate(g, Box((0,) * 6, (1,) + (0,) * 5)) == 0.0


# Capacity


def segment_capacity(s, length):
    # Riesz s-energy minimizer on a segment: density prop. to (1-x^2)^{(s-1)/2} on [-1, 1].
    return (length / 2) ** s * math.cos(math.pi * s / 2) * beta_fn(0.5, (1 + s) / 2) / math.pi


def test_segment_capacity_oracle():
    g = gauge(5)
    s = g.n - g.Q
    seg = Box((0,) * 5, (1.0,) + (0,) * 4)
    exact = segment_capacity(s, 1.0)
    errs = [abs(capacity_estimate(g, seg, m) / exact - 1) for m in (128, 512, 2048)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.02


def test_capacity_scaling_of_segment():
    g = gauge(5)
    s = g.n - g.Q
    a = capacity_estimate(g, Box((0,) * 5, (1.0,) + (0,) * 4), 512)
    b = capacity_estimate(g, Box((0,) * 5, (2.0,) + (0,) * 4), 512)
    assert b / a == pytest.approx(2**s, rel=1e-9)


def test_capacity_beats_uniform():
    g = gauge(5)
    cap, (centers, w) = capacity_estimate(g, Ball(np.zeros(5), 0.5), 512, return_weights=True)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w >= 0)
    assert cap >= capacity_estimate(g, Ball(np.zeros(5), 0.4), 512)


def test_minimizer_diagonal():
    d = np.array([1.0, 2.0, 4.0])
    E, w, _ = _minimize_energy(np.diag(d))
    assert E == pytest.approx(1.0 / np.sum(1.0 / d), rel=1e-8)
    assert np.allclose(w, (1 / d) / np.sum(1 / d), atol=1e-6)


def test_minimizer_matches_slsqp():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (40, 2))
    r = np.linalg.norm(x[:, None] - x[None], axis=-1)
    K = np.exp(-3 * r)
    E, _, _ = _minimize_energy(K)
    res = minimize(
        lambda w: w @ K @ w,
        np.full(40, 1 / 40),
        jac=lambda w: 2 * K @ w,
        bounds=[(0, 1)] * 40,
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    assert E == pytest.approx(res.fun, rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_simplex_projection(v):
    v = np.asarray(v)
    p = _project_simplex(v)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0)
    # Optimality: v - p is constant on the support and not larger off it.
    resid = v - p
    on = p > 1e-12
    assert np.ptp(resid[on]) < 1e-9
    if np.any(~on):
        assert np.max(resid[~on]) <= np.min(resid[on]) + 1e-9


# Hausdorff


def test_hausdorff_depth_monotone():
    g = gauge(5)
    b = Ball(np.zeros(5), 0.5)
    vals = [hausdorff_upper(g, b, depth) for depth in (2, 4, 8)]
    assert vals[0] >= vals[1] >= vals[2] > 0


def test_hausdorff_ordering_in_n():
    vals = [hausdorff_upper(gauge(n), Ball(np.zeros(n), 0.5), 8) for n in (2, 4, 5)]
    assert all(np.isfinite(vals))
    assert vals[0] < vals[1] < vals[2]


def test_hausdorff_point_box_consistency():
    g = gauge(5)
    degenerate = Box((0.2,) * 5, (0.2,) * 5)
    assert hausdorff_upper(g, degenerate) == hausdorff_upper(g, Point((0.2,) * 5)) == 0.0


# Monte Carlo hitting


def test_hit_estimate_interval():
    est = HitEstimate.from_counts(50, 100, {})
    assert est.p == 0.5
    assert est.half_width == pytest.approx(1.96 * 0.05)
    assert HitEstimate.from_counts(0, 10, {}).half_width == 0.0
    with pytest.raises(RangeError):
        HitEstimate(1.5, 0.0, 1, {})


@pytest.fixture(scope="module")
def coarse_grid(heat075):
    return GridSpec.for_model(heat075, 5, 5)


def test_whole_space_is_always_hit(heat075, coarse_grid):
    est = hit_probability_mc(heat075, 2, Box((-100, -100), (100, 100)), coarse_grid, 16, seed=1)
    assert est.p == 1.0
    assert est.metadata["seed"] == 1


def test_far_target_never_hit(heat075, coarse_grid):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = hit_probability_mc(heat075, 1, Ball((100.0,), 0.01), coarse_grid, 16, seed=1)
    assert est.p == 0.0
    assert any(issubclass(w.category, GridTooCoarse) for w in caught)
    assert est.metadata["warnings"]


@pytest.mark.filterwarnings("ignore::fkefield.errors.GridTooCoarse")
def test_hit_probability_deterministic(heat075, coarse_grid):
    a = hit_probability_mc(heat075, 1, Ball((0.0,), 0.1), coarse_grid, 16, seed=4)
    b = hit_probability_mc(heat075, 1, Ball((0.0,), 0.1), coarse_grid, 16, seed=4, workers=2)
    assert a.to_dict() == b.to_dict()


def test_hit_probability_shape_checks(heat075, coarse_grid):
    with pytest.raises(ShapeMismatch):
        hit_probability_mc(heat075, 2, Ball((0.0,), 0.1), coarse_grid, 4, seed=1)


def test_polarity_report(heat075, tmp_path):
    grid = GridSpec.for_model(heat075, 9, 9)
    rep = polarity_experiment(heat075, [1, 2], [0.4, 0.2], grid, 32, seed=3, strides=(2, 1))
    assert set(rep.verdicts) == {1, 2}
    # Finer sub-grids see more of the range.
    for n in (1, 2):
        coarse, fine = rep.table(n, 2), rep.table(n, 1)
        assert all(fine[r] >= coarse[r] for r in (0.4, 0.2))
    # Smaller balls are hit less often.
    t = rep.table(2)
    assert t[0.2] <= t[0.4]
    js, cs = tmp_path / "p.json", tmp_path / "p.csv"
    rep.save(str(js), str(cs))
    data = json.loads(js.read_text())
    assert data["seed"] == 3 and data["grid_ladder"][0]["n_t"] == 5
    rows = list(csv.reader(cs.open()))
    assert rows[0] == ["n", "r", "level", "p_hat", "ci"]
    assert len(rows) == 1 + 2 * 2 * 2


def test_polarity_shares_draws(heat075):
    grid = GridSpec.for_model(heat075, 5, 5)
    a = polarity_experiment(heat075, [1], [0.3], grid, 24, seed=8)
    b = polarity_experiment(heat075, [1, 3], [0.3], grid, 24, seed=8)
    assert a.table(1) == b.table(1)
    assert a.to_dict()["slopes"] == {"1": None}


def test_polarity_rejects_bad_stride(heat075):
    grid = GridSpec.for_model(heat075, 5, 5)
    with pytest.raises(RangeError):
        polarity_experiment(heat075, [1], [0.3], grid, 4, seed=8, strides=(3,))
