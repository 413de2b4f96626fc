"""Exponent fits, two-sided bound ratios and the logarithmic-gauge detector.

Everything here is deterministic: structure functions are increment norms
from the covariance engine, never Monte Carlo estimates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .covariance import SpaceTimePoint, increment_norm
from .errors import DegenerateFit, DomainError, RangeError
from .model import Gauge, Model
from .quadrature import DEFAULT_SPEC, QuadratureSpec

__all__ = [
    "StructureTable",
    "FitResult",
    "LogFactorReport",
    "default_lags",
    "structure_function",
    "fit_exponent",
    "detect_log_factor",
    "random_pairs",
    "metric_ratios",
]


def default_lags(n: int = 24, lo: float = 1e-4, hi: float = 0.3) -> np.ndarray:
    return np.geomspace(lo, hi, n)


@dataclass
class StructureTable:
    axis: str
    base: SpaceTimePoint
    lags: np.ndarray
    norms: np.ndarray

    def __post_init__(self) -> None:
        self.lags = np.asarray(self.lags, dtype=float)
        self.norms = np.asarray(self.norms, dtype=float)
        if self.axis not in ("time", "space"):
            raise RangeError(f"axis must be 'time' or 'space', got {self.axis!r}")
        if self.lags.shape != self.norms.shape:
            raise RangeError("lags and norms differ in length")
        if np.any(np.diff(self.lags) <= 0):
            raise RangeError("lags must be strictly increasing")
        if np.any(self.norms < 0):
            raise RangeError("norms must be nonnegative")

    def is_monotone(self, tol: float = 0.01) -> bool:
        """Nondecreasing in lag up to a relative tolerance."""
        n = self.norms
        return bool(np.all(n[1:] >= n[:-1] * (1.0 - tol)))

    def gauge_values(self, gauge: Gauge) -> np.ndarray:
        return gauge.q1(self.lags) if self.axis == "space" else gauge.q2(self.lags)

    def to_csv(self, path: str, gauge: Gauge | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "norm", "gauge", "ratio"])
            gv = self.gauge_values(gauge) if gauge is not None else np.full(self.lags.shape, np.nan)
            for lag, nv, g in zip(self.lags, self.norms, gv):
                w.writerow([repr(float(lag)), repr(float(nv)), repr(float(g)), repr(float(nv / g)) if g > 0 else "nan"])


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float


@dataclass(frozen=True)
class LogFactorReport:
    ratio_band: tuple[float, float]
    plain_power_drift: float

    @property
    def ratio_spread(self) -> float:
        return self.ratio_band[1] / self.ratio_band[0]


def _offset(model: Model, base: SpaceTimePoint, axis: str, lag: float) -> SpaceTimePoint:
    if axis == "time":
        p = SpaceTimePoint(base.t + lag, base.x)
        if p.t > model.T * (1 + 1e-12):
            raise DomainError(f"time lag {lag} leaves the horizon T={model.T}")
        return p
    x = list(base.x)
    x[0] += lag
    p = SpaceTimePoint(base.t, tuple(x))
    if abs(x[0]) > model.M * (1 + 1e-12):
        raise DomainError(f"space lag {lag} leaves the box [-{model.M}, {model.M}]")
    return p


def structure_function(
    model: Model,
    axis: str,
    base: SpaceTimePoint,
    lags=None,
    spec: QuadratureSpec = DEFAULT_SPEC,
) -> StructureTable:
    """Increment norms ||u(base + lag e) - u(base)|| along one axis (space: first coordinate)."""
    lags = default_lags() if lags is None else np.asarray(lags, dtype=float)
    if axis not in ("time", "space"):
        raise RangeError(f"axis must be 'time' or 'space', got {axis!r}")
    if base.t < model.t0 * (1 - 1e-12):
        raise DomainError("base time must be at least t0")
    pts = [_offset(model, base, axis, float(h)) for h in lags]
    norms = np.array([increment_norm(model, p, base, spec) for p in pts])
    return StructureTable(axis, base, lags, norms)


def _lsq(x: np.ndarray, y: np.ndarray) -> FitResult:
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return FitResult(float(slope), float(icpt), r2)


def fit_exponent(table: StructureTable, window: tuple[float, float] | None = None) -> FitResult:
    """Log-log least squares over the smallest decade of lags (or a given window)."""
    ok = (table.lags > 0) & (table.norms > 0)
    lags, norms = table.lags[ok], table.norms[ok]
    if lags.size < 8:
        raise DegenerateFit(f"need at least 8 positive lags, got {lags.size}")
    if lags[-1] / lags[0] < 10.0 * (1 - 1e-12):
        raise DegenerateFit("lags span less than one decade")
    lo, hi = window if window is not None else (lags[0], 10.0 * lags[0])
    sel = (lags >= lo * (1 - 1e-12)) & (lags <= hi * (1 + 1e-12))
    if np.count_nonzero(sel) < 2:
        raise DegenerateFit("fewer than two lags inside the fit window")
    return _lsq(np.log(lags[sel]), np.log(norms[sel]))


def detect_log_factor(table: StructureTable, gauge: Gauge) -> LogFactorReport:
    """Ratio band of norm / gauge and the drift of the plain-power slope.

    The drift is the slope fitted on [1e-4, 1e-3] minus the slope on
    [1e-2, 1e-1]; a sqrt-log correction makes it positive.
    """
    ok = table.lags > 0
    ratios = table.norms[ok] / table.gauge_values(gauge)[ok]
    small = fit_exponent(table, (1e-4, 1e-3)).slope
    large = fit_exponent(table, (1e-2, 1e-1)).slope
    return LogFactorReport((float(ratios.min()), float(ratios.max())), small - large)


def random_pairs(model: Model, n: int, seed: int, lag_range: tuple[float, float] = (1e-4, 0.5)) -> list[tuple[SpaceTimePoint, SpaceTimePoint]]:
    """Point pairs in [t0, T] x [-M, M]^d with log-uniform time and space lags.

    Each lag is drawn log-uniformly from ``lag_range`` (scaled to the
    available room) with a random sign per coordinate; one coordinate group
    is set to zero lag in a quarter of the pairs each, so pure-time and
    pure-space pairs are represented.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    lo, hi = np.log(lag_range[0]), np.log(lag_range[1])
    d, M, t0, T = model.d, model.M, model.t0, model.T
    while len(pairs) < n:
        kind = rng.integers(4)
        dt = 0.0 if kind == 1 else math.exp(rng.uniform(lo, hi)) * (T - t0)
        dx = np.zeros(d) if kind == 2 else np.exp(rng.uniform(lo, hi, d)) * M * rng.choice([-1.0, 1.0], d)
        if dt > T - t0 or np.any(np.abs(dx) > 2 * M):
            continue
        t = rng.uniform(t0, T - dt)
        x = np.array([rng.uniform(max(-M, -M - v), min(M, M - v)) for v in dx])
        if dt == 0.0 and not np.any(dx):
            continue
        p1 = SpaceTimePoint(t, tuple(x))
        p2 = SpaceTimePoint(t + dt, tuple(np.clip(x + dx, -M, M)))
        if rng.integers(2):
            p1, p2 = p2, p1
        pairs.append((p1, p2))
    return pairs


def metric_ratios(
    model: Model, pairs, gauge: Gauge | None = None, spec: QuadratureSpec = DEFAULT_SPEC
) -> np.ndarray:
    """norm / rho for each pair, rho = q1(|x - y|) + q2(|t - s|)."""
    gauge = gauge or Gauge.from_model(model)
    out = np.empty(len(pairs))
    for i, (p1, p2) in enumerate(pairs):
        out[i] = increment_norm(model, p1, p2, spec) / gauge.rho(p1, p2)
    return out
