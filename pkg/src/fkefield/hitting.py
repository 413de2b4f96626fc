"""Hitting probabilities, gauge capacity and gauge Hausdorff content.

Targets live in R^n, the value space of an n-component field. Capacity is
the reciprocal of the minimal frak_g energy over probability vectors on a
cell discretization; the Hausdorff value is the best dyadic cover sum of
g_q. Hitting probabilities are Monte Carlo over spectral samples, with a hit
declared when some grid value lands in the target.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gamma as gamma_fn
from scipy.stats import qmc

from .covariance import GridSpec, SpaceTimePoint, increment_norm
from .errors import GridTooCoarse, NonConvergence, RangeError, ShapeMismatch
from .model import Gauge, Model
from .sampler import SpectralLattice, Truncation, spectral_samples

__all__ = [
    "Point",
    "Ball",
    "Box",
    "TargetSet",
    "HitEstimate",
    "PolarityReport",
    "capacity_estimate",
    "hausdorff_upper",
    "hit_probability_mc",
    "polarity_experiment",
    "cell_oscillation",
    "NON_POLAR_FLOOR",
    "POLAR_SLOPE",
]

MAX_CELLS = 4096
CAPACITY_ITERS = 1000
GAP_TOL = 1e-2
NON_POLAR_FLOOR = 0.2
POLAR_SLOPE = 0.5
CRITICAL_BAND = 0.05
CHUNK = 64


# Targets


def _vec(v) -> tuple[float, ...]:
    return tuple(float(c) for c in np.atleast_1d(np.asarray(v, dtype=float)))


@dataclass(frozen=True)
class Point:
    z: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", _vec(self.z))

    @property
    def dim(self) -> int:
        return len(self.z)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center))
        if not self.radius > 0.0:
            raise RangeError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", _vec(self.lo))
        object.__setattr__(self, "hi", _vec(self.hi))
        if len(self.lo) != len(self.hi):
            raise ShapeMismatch("box corners differ in dimension")
        if any(b < a for a, b in zip(self.lo, self.hi)):
            raise RangeError("box needs lo <= hi in every coordinate")

    @property
    def dim(self) -> int:
        return len(self.lo)


TargetSet = Point | Ball | Box


def target_to_dict(target: TargetSet) -> dict:
    if isinstance(target, Point):
        return {"kind": "Point", "z": list(target.z)}
    if isinstance(target, Ball):
        return {"kind": "Ball", "center": list(target.center), "radius": target.radius}
    return {"kind": "Box", "lo": list(target.lo), "hi": list(target.hi)}


def target_from_dict(raw: dict) -> TargetSet:
    kind = raw.get("kind")
    keys = {"Point": {"z"}, "Ball": {"center", "radius"}, "Box": {"lo", "hi"}}
    if kind not in keys:
        raise RangeError(f"unknown target kind {kind!r}")
    extra = set(raw) - keys[kind] - {"kind"}
    if extra:
        raise RangeError(f"unknown target keys {sorted(extra)}")
    if kind == "Point":
        return Point(raw["z"])
    if kind == "Ball":
        return Ball(raw["center"], raw["radius"])
    return Box(raw["lo"], raw["hi"])


def _check_dim(gauge: Gauge, target: TargetSet) -> None:
    if target.dim != gauge.n:
        raise ShapeMismatch(f"target lives in R^{target.dim}, gauge has n={gauge.n}")


# Capacity


def _cells(target: TargetSet, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell centers (k, n) and the common cell side vector (n,) with k <= m."""
    if isinstance(target, Ball):
        c = np.asarray(target.center)
        r = target.radius
        n = c.size
        best = None
        k = 1
        while True:
            h = 2.0 * r / k
            ax = -r + h * (np.arange(k) + 0.5)
            if k**n > 64 * MAX_CELLS:
                break
            mesh = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
            inside = mesh[np.sum(mesh * mesh, axis=1) <= r * r]
            if inside.shape[0] > m:
                break
            best = (inside + c, np.full(n, h))
            k += 1
        return best
    lo, hi = np.asarray(target.lo), np.asarray(target.hi)
    side = hi - lo
    active = side > 0
    if not np.any(active):
        return lo[None, :], np.zeros_like(side)
    # Largest uniform resolution with at most m cells.
    scale = 1.0
    while True:
        ks = np.where(active, np.maximum(1, np.round(side / side[active].max() * scale)), 1).astype(int)
        if np.prod(ks) > m:
            break
        good = ks
        scale += 1.0
    h = np.where(active, side / good, 0.0)
    axes = [lo[i] + h[i] * (np.arange(good[i]) + 0.5) if active[i] else np.array([lo[i]]) for i in range(side.size)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, side.size)
    return mesh, h


@lru_cache(maxsize=8)
def _unit_differences(k: int, log2n: int = 14) -> np.ndarray:
    """U - U' for U, U' uniform in [0,1]^k, from a fixed scrambled Sobol sequence."""
    pts = qmc.Sobol(2 * k, scramble=True, seed=20240607).random_base2(log2n)
    return pts[:, :k] - pts[:, k:]


def _self_energy(gauge: Gauge, side: np.ndarray) -> float:
    """Cell-averaged frak_g over a pair of points drawn from the same cell."""
    active = side > 0
    D = _unit_differences(int(np.count_nonzero(active))) * side[active]
    r = np.sqrt(np.sum(D * D, axis=1))
    r = r[r > 0]
    return float(np.mean(gauge.frak_g(r)))


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    k = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[k] / (k + 1), 0.0)


def _minimize_energy(K: np.ndarray, iters: int = CAPACITY_ITERS) -> tuple[float, np.ndarray, float]:
    """Projected gradient for min w'Kw on the simplex with backtracking steps."""
    m = K.shape[0]
    w = np.full(m, 1.0 / m)
    Kw = K @ w
    E = float(w @ Kw)
    step = 1.0 / (2.0 * float(np.max(np.sum(np.abs(K), axis=1))))
    history = [E]
    for _ in range(iters):
        g = 2.0 * Kw
        gap = (float(g @ w) - float(g.min())) / (2.0 * E)
        if gap < 1e-8 or (gap < 1e-6 and len(history) > 20 and history[-21] - E <= 1e-13 * E):
            break
        while True:
            w_new = _project_simplex(w - step * g)
            d = w_new - w
            Kw_new = K @ w_new
            E_new = float(w_new @ Kw_new)
            if E_new <= E + float(g @ d) + float(d @ d) / (2.0 * step) + 1e-15 * E:
                break
            step *= 0.5
        w, Kw, E = w_new, Kw_new, E_new
        history.append(E)
        step *= 2.0
    g = 2.0 * Kw
    gap = (float(g @ w) - float(g.min())) / (2.0 * E)
    tail = np.asarray(history[-100:])
    stalled = tail.size > 1 and (tail[0] - tail[-1]) <= 1e-12 * tail[0]
    if gap > GAP_TOL and stalled:
        raise NonConvergence(f"capacity energy stalled with relative gap {gap:.2e}")
    return E, w, gap


def capacity_estimate(gauge: Gauge, target: TargetSet, m: int = 1024, *, return_weights: bool = False):
    """frak_g capacity of ``target``: 1 / min energy over probability vectors on m cells.

    A bounded kernel at the origin gives capacity 1 by convention; a point
    under a kernel that blows up at the origin gives 0.
    """
    _check_dim(gauge, target)
    if not 1 <= m <= MAX_CELLS:
        raise RangeError(f"discretization size must lie in [1, {MAX_CELLS}]")
    at_zero = gauge.frak_g_at_zero()
    if not at_zero.is_infinite:
        return (1.0, None) if return_weights else 1.0
    if isinstance(target, Point):
        return (0.0, None) if return_weights else 0.0
    centers, side = _cells(target, m)
    active = int(np.count_nonzero(side > 0))
    # frak_g ~ |z|^{-(n-Q)} near 0: infinite energy for every measure when n - Q >= active dimension.
    if gauge.n - gauge.Q >= active:
        return (0.0, None) if return_weights else 0.0
    r = cdist(centers, centers)
    K = np.empty_like(r)
    off = r > 0
    K[off] = gauge.frak_g(r[off])
    K[~off] = _self_energy(gauge, side)
    E, w, _ = _minimize_energy(K)
    cap = 1.0 / E
    return (cap, (centers, w)) if return_weights else cap


# Hausdorff content


def _ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / gamma_fn(n / 2 + 1)


def _cover_count(target: TargetSet, s: float) -> int:
    """Number of lattice cubes of side s needed to cover the target."""
    if isinstance(target, Box):
        side = np.asarray(target.hi) - np.asarray(target.lo)
        return int(np.prod(np.maximum(1, np.ceil(side / s - 1e-12))))
    n, R = target.dim, target.radius
    k = max(1, math.ceil(2.0 * R / s - 1e-12))
    if k**n <= 2**20:
        edges = -R + s * np.arange(k + 1)
        lo = edges[:-1]
        hi = edges[1:]
        # Distance from the center to each 1-D cell, squared.
        near = np.where(lo > 0, lo, np.where(hi < 0, hi, 0.0)) ** 2
        tot = near
        for _ in range(n - 1):
            tot = (tot[:, None] + near[None, :]).reshape(-1)
        return int(np.count_nonzero(np.ravel(tot) <= R * R))
    return int(min(k**n, math.ceil(_ball_volume(n) * (R + s * math.sqrt(n)) ** n / s**n)))


def _diameter(target: TargetSet) -> float:
    if isinstance(target, Point):
        return 0.0
    if isinstance(target, Ball):
        return 2.0 * target.radius
    return float(np.linalg.norm(np.asarray(target.hi) - np.asarray(target.lo)))


def hausdorff_upper(gauge: Gauge, target: TargetSet, depth: int = 12) -> float:
    """min over dyadic radii r = 2^-k diam, k <= depth, of N(r) g_q(2r).

    N(r) counts lattice cubes inscribed in balls of radius r that meet the
    target, so every term is the sum of a genuine cover.
    """
    _check_dim(gauge, target)
    if depth < 0:
        raise RangeError("depth must be nonnegative")
    diam = _diameter(target)
    if diam == 0.0:
        return gauge.g_q_at_zero().value
    n = gauge.n
    top = gauge.q1_max() if gauge.log_case else math.inf
    best = math.inf
    for k in range(depth + 1):
        r = diam * 2.0**-k
        if 2.0 * r > top:
            continue
        s = 2.0 * r / math.sqrt(n)
        best = min(best, _cover_count(target, s) * float(gauge.g_q(2.0 * r)))
    return best


# Monte Carlo hitting


@dataclass
class HitEstimate:
    p: float
    half_width: float
    n_samples: int
    level: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise RangeError("probability estimate outside [0, 1]")

    @staticmethod
    def from_counts(hits: int, n: int, level: dict, metadata: dict | None = None) -> "HitEstimate":
        p = hits / n
        return HitEstimate(p, 1.96 * math.sqrt(p * (1.0 - p) / n), n, level, metadata or {})

    def to_dict(self) -> dict:
        return {"p": self.p, "half_width": self.half_width, "n_samples": self.n_samples, "level": self.level, **self.metadata}


def cell_oscillation(model: Model, grid: GridSpec, n: int) -> float:
    """sqrt(n) times the L2 increment across one grid-cell diagonal near the end of the horizon."""
    times = grid.times
    dt = float(times[1] - times[0]) if grid.n_t > 1 else 0.0
    dx = float(grid.axis[1] - grid.axis[0])
    base = SpaceTimePoint(float(times[-1]) - dt, tuple([-grid.M] * grid.d))
    return math.sqrt(n) * increment_norm(model, base, base.shifted(dt, dx))


def _distance(values: np.ndarray, target: TargetSet) -> np.ndarray:
    """Per-sample minimum over grid points of the distance from the value to the target.

    ``values`` has shape (samples, n, points); a Box uses the Euclidean
    distance to the box.
    """
    if isinstance(target, Ball):
        c = np.asarray(target.center)[None, :, None]
        d2 = np.sum((values - c) ** 2, axis=1)
    elif isinstance(target, Point):
        c = np.asarray(target.z)[None, :, None]
        d2 = np.sum((values - c) ** 2, axis=1)
    else:
        lo = np.asarray(target.lo)[None, :, None]
        hi = np.asarray(target.hi)[None, :, None]
        gap = np.maximum(lo - values, 0.0) + np.maximum(values - hi, 0.0)
        d2 = np.sum(gap * gap, axis=1)
    return np.sqrt(np.min(d2, axis=1))


def _radius(target: TargetSet) -> float:
    return target.radius if isinstance(target, Ball) else 0.0


def _level_index(grid: GridSpec, stride: int) -> np.ndarray:
    if (grid.n_t - 1) % stride or (grid.n_x - 1) % stride:
        raise RangeError(f"stride {stride} does not divide the grid")
    ti = np.arange(0, grid.n_t, stride)
    xi = np.arange(0, grid.n_x, stride)
    mesh = np.meshgrid(*([xi] * grid.d), indexing="ij")
    flat = np.ravel_multi_index(tuple(m.ravel() for m in mesh), (grid.n_x,) * grid.d)
    return (ti[:, None] * grid.n_space + flat[None, :]).ravel()


def _min_distances(
    model: Model,
    grid: GridSpec,
    n: int,
    target: TargetSet,
    n_samples: int,
    seed: int,
    strides: Sequence[int],
    workers: int,
    trunc: Truncation | None,
) -> tuple[np.ndarray, dict]:
    """Distances (len(strides), n_samples) from the sampled range on each sub-grid to the target."""
    lattice = SpectralLattice(model, grid, trunc)
    idx = [_level_index(grid, s) for s in strides]
    out = np.empty((len(strides), n_samples))
    method = {}
    for a in range(0, n_samples, CHUNK):
        b = min(a + CHUNK, n_samples)
        batch = spectral_samples(model, grid, b - a, n, seed, workers=workers, start=a, lattice=lattice)
        method = batch[0].method
        vals = np.stack([fs.values.reshape(n, -1) for fs in batch])
        for j, ix in enumerate(idx):
            out[j, a:b] = _distance(vals[:, :, ix], target)
    return out, method


def hit_probability_mc(
    model: Model,
    n: int,
    target: TargetSet,
    grid: GridSpec,
    n_samples: int,
    seed: int,
    *,
    workers: int = 1,
    trunc: Truncation | None = None,
) -> HitEstimate:
    """Fraction of samples whose grid range meets the target, with a 95% normal interval."""
    if n < 1:
        raise RangeError("need n >= 1 components")
    if target.dim != n:
        raise ShapeMismatch(f"target lives in R^{target.dim}, field has n={n}")
    if n_samples < 1:
        raise RangeError("need at least one sample")
    notes = []
    if isinstance(target, Ball):
        osc = cell_oscillation(model, grid, n)
        if target.radius < 2.0 * osc:
            msg = f"radius {target.radius:.3g} below twice the cell oscillation {osc:.3g}"
            warnings.warn(msg, GridTooCoarse, stacklevel=2)
            notes.append("GridTooCoarse: " + msg)
    dist, method = _min_distances(model, grid, n, target, n_samples, seed, [1], workers, trunc)
    hits = int(np.count_nonzero(dist[0] <= _radius(target)))
    meta = {
        "hit_rule": "some grid value within the target (Ball: |u - z| <= r)",
        "target": target_to_dict(target),
        "seed": seed,
        "n_components": n,
        "warnings": notes,
        "sampler": {k: method[k] for k in ("kind", "n_modes") if k in method},
    }
    return HitEstimate.from_counts(hits, n_samples, grid.to_dict(), meta)


# Polarity scaling


@dataclass
class PolarityReport:
    model: dict
    Q: float
    center: list
    radii: list
    strides: list
    levels: list
    n_samples: int
    seed: int
    rows: list
    slopes: dict
    verdicts: dict
    predictions: dict
    thresholds: dict = field(default_factory=lambda: {"non_polar_floor": NON_POLAR_FLOOR, "polar_slope": POLAR_SLOPE, "critical_band": CRITICAL_BAND})

    def table(self, n: int, level: int | None = None) -> dict[float, float]:
        level = self.strides[-1] if level is None else level
        return {row["r"]: row["p"] for row in self.rows if row["n"] == n and row["stride"] == level}

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "Q": self.Q,
            "center": self.center,
            "radii": self.radii,
            "grid_ladder": self.levels,
            "strides": self.strides,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "table": self.rows,
            "slopes": {str(k): None if math.isnan(v) else v for k, v in self.slopes.items()},
            "predicted_slopes": {str(k): v for k, v in self.predictions.items()},
            "verdicts": {str(k): v for k, v in self.verdicts.items()},
            "thresholds": self.thresholds,
            "note": "verdicts are trend labels from the thresholds above, not theorems",
        }

    def save(self, json_path: str, csv_path: str) -> None:
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "r", "level", "p_hat", "ci"])
            for row in self.rows:
                w.writerow([row["n"], repr(row["r"]), row["stride"], repr(row["p"]), repr(row["ci"])])


def _slope(radii: np.ndarray, p: np.ndarray, n_samples: int) -> float:
    if radii.size < 2:
        return math.nan
    # Zero counts are floored at half a hit so the log-log fit stays defined.
    y = np.log(np.maximum(p, 0.5 / n_samples))
    return float(np.polyfit(np.log(radii), y, 1)[0])


def _verdict(n: int, Q: float, p: np.ndarray, ci: np.ndarray, slope: float) -> str:
    if abs(n - Q) <= CRITICAL_BAND:
        return "critical-inconclusive"
    # p ordered by decreasing radius; allow two half-widths of noise per step.
    decreasing = bool(np.all(p[1:] <= p[:-1] + 2.0 * np.maximum(ci[1:], ci[:-1])))
    if slope >= POLAR_SLOPE and decreasing:
        return "polar trend"
    if np.min(p) >= NON_POLAR_FLOOR and slope < POLAR_SLOPE:
        return "non-polar trend"
    return "critical-inconclusive"


def polarity_experiment(
    model: Model,
    ns: Sequence[int],
    radii: Sequence[float],
    grid: GridSpec,
    n_samples: int,
    seed: int,
    *,
    strides: Sequence[int] = (1,),
    center: Sequence[float] | None = None,
    workers: int = 1,
    trunc: Truncation | None = None,
) -> PolarityReport:
    """p-hat(n, r, level) for balls around ``center`` on nested sub-grids.

    All n share one set of samples: the experiment for n uses the first n
    components of the max(ns)-component draw. ``strides`` lists sub-grid
    strides from coarse to fine; slopes and verdicts use the last one.
    """
    ns = sorted(int(n) for n in ns)
    radii = sorted((float(r) for r in radii), reverse=True)
    if not ns or ns[0] < 1:
        raise RangeError("component counts must be positive")
    if not radii or radii[-1] <= 0:
        raise RangeError("radii must be positive")
    strides = [int(s) for s in strides]
    nmax = ns[-1]
    lattice = SpectralLattice(model, grid, trunc)
    idx = [_level_index(grid, s) for s in strides]
    c_full = np.zeros(nmax) if center is None else np.asarray(center, dtype=float)
    if c_full.size < nmax:
        raise ShapeMismatch("center has fewer coordinates than the largest n")
    # dist2[n][level] -> per-sample squared min distance
    mind = {n: np.empty((len(strides), n_samples)) for n in ns}
    for a in range(0, n_samples, CHUNK):
        b = min(a + CHUNK, n_samples)
        batch = spectral_samples(model, grid, b - a, nmax, seed, workers=workers, start=a, lattice=lattice)
        vals = np.stack([fs.values.reshape(nmax, -1) for fs in batch]) - c_full[None, :nmax, None]
        sq = np.cumsum(vals * vals, axis=1)  # partial sums over components
        for n in ns:
            for j, ix in enumerate(idx):
                mind[n][j, a:b] = np.sqrt(np.min(sq[:, n - 1, ix], axis=1))
    Q = float(model.Q)
    rows, slopes, verdicts, preds = [], {}, {}, {}
    r_arr = np.asarray(radii)
    for n in ns:
        for j, s in enumerate(strides):
            for r in radii:
                est = HitEstimate.from_counts(int(np.count_nonzero(mind[n][j] <= r)), n_samples, {})
                rows.append({"n": n, "r": r, "stride": s, "p": est.p, "ci": est.half_width})
        fine = [row for row in rows if row["n"] == n and row["stride"] == strides[-1]]
        p = np.array([row["p"] for row in fine])
        ci = np.array([row["ci"] for row in fine])
        slopes[n] = _slope(r_arr, p, n_samples)
        preds[n] = max(0.0, n - Q)
        verdicts[n] = _verdict(n, Q, p, ci, slopes[n])
    levels = [{"stride": s, "n_t": (grid.n_t - 1) // s + 1, "n_x": (grid.n_x - 1) // s + 1} for s in strides]
    return PolarityReport(
        model.to_dict(), Q, list(c_full[:nmax]), radii, strides, levels, n_samples, seed, rows, slopes, verdicts, preds
    )
