"""Second-order structure of the noise part of the solution.

All quantities are integrals of a time kernel against the spectral measure.
The radial part goes through a cached :class:`~fkefield.quadrature.SpectralRule`;
spatial lags enter only through the rule's weight vectors, so a covariance
matrix over a space-time grid needs one kernel evaluation per pair of times.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import cholesky, eigvalsh
from scipy.special import gamma as gamma_fn

from .errors import DomainError, NegativeVarianceArtifact, NotPSD, RangeError, ShapeMismatch
from .model import Model, alpha_h, beta_h, psi, spectral_density
from .quadrature import (
    DEFAULT_SPEC,
    QuadratureSpec,
    SpectralRule,
    fbm_double_integral,
    kernel_freq,
    kernel_time,
    spectral_rule,
)

__all__ = [
    "SpaceTimePoint",
    "GridSpec",
    "BandSpec",
    "CovMatrix",
    "variance",
    "variance_bounds",
    "cross_cov_time",
    "cross_cov_freq",
    "freq_integrand",
    "increment_norm",
    "correlation",
    "band_increment_norm",
    "pinned_time",
    "pinned_difference",
    "cov_matrix",
    "cov_matrix_points",
]

MAX_MATRIX = 4096
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
NEGATIVE_TOL = 1e-10


@dataclass(frozen=True)
class SpaceTimePoint:
    t: float
    x: tuple[float, ...]

    def __post_init__(self) -> None:
        x = self.x
        if np.isscalar(x):
            x = (x,)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", tuple(float(v) for v in x))

    def __iter__(self):
        yield self.t
        yield self.x

    def shifted(self, dt: float = 0.0, dx: Sequence[float] | float = 0.0) -> "SpaceTimePoint":
        dx = np.broadcast_to(np.asarray(dx, dtype=float), (len(self.x),))
        return SpaceTimePoint(self.t + dt, tuple(np.asarray(self.x) + dx))


def _check(model: Model, p: SpaceTimePoint, allow_zero: bool = False) -> None:
    if len(p.x) != model.d:
        raise ShapeMismatch(f"point has {len(p.x)} coordinates, model has d={model.d}")
    lo_ok = p.t >= 0.0 if allow_zero else p.t > 0.0
    if not (lo_ok and p.t <= model.T * (1 + 1e-12)):
        raise DomainError(f"time {p.t} outside (0, {model.T}]")
    if any(abs(v) > model.M * (1 + 1e-12) for v in p.x):
        raise DomainError(f"point {p.x} outside [-{model.M}, {model.M}]^{model.d}")


def _lag(p1: SpaceTimePoint, p2: SpaceTimePoint) -> np.ndarray:
    return np.asarray(p1.x) - np.asarray(p2.x)


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid: n_t times in [t_min, t_max], n_x nodes per axis of [-M, M]^d."""

    t_min: float
    t_max: float
    n_t: int
    M: float
    n_x: int
    d: int = 1
    cap: int = MAX_MATRIX

    def __post_init__(self) -> None:
        if self.n_t < 1 or self.n_x < 2:
            raise RangeError("grid needs n_t >= 1 and n_x >= 2")
        if not 0.0 < self.t_min <= self.t_max:
            raise RangeError("grid needs 0 < t_min <= t_max")
        if self.size > self.cap:
            raise RangeError(f"grid has {self.size} points, above the cap {self.cap}")

    @classmethod
    def for_model(cls, model: Model, n_t: int, n_x: int, cap: int = MAX_MATRIX) -> "GridSpec":
        return cls(model.t0, model.T, n_t, model.M, n_x, model.d, cap)

    @property
    def times(self) -> np.ndarray:
        if self.n_t == 1:
            return np.array([self.t_max])
        return np.linspace(self.t_min, self.t_max, self.n_t)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.M, self.M, self.n_x)

    @property
    def n_space(self) -> int:
        return self.n_x**self.d

    @property
    def size(self) -> int:
        return self.n_t * self.n_space

    @property
    def space_points(self) -> np.ndarray:
        """Spatial nodes, shape (n_x**d, d), last axis varying fastest."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def points(self) -> list[SpaceTimePoint]:
        xs = self.space_points
        return [SpaceTimePoint(t, tuple(x)) for t in self.times for x in xs]

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "t_max": self.t_max, "n_t": self.n_t, "M": self.M, "n_x": self.n_x, "d": self.d}


@dataclass(frozen=True)
class BandSpec:
    """Frequency band {a <= max(|tau|^alpha2, |eta|^alpha1) < b}; b may be inf."""

    a: float
    b: float = math.inf

    def __post_init__(self) -> None:
        if not (0.0 <= self.a <= self.b):
            raise RangeError(f"band needs 0 <= a <= b, got [{self.a}, {self.b})")

    @property
    def empty(self) -> bool:
        return self.a == self.b


@dataclass
class CovMatrix:
    points: list[SpaceTimePoint]
    entries: np.ndarray
    jitter: float
    model_hash: str = ""
    min_eig_ratio: float = 0.0
    factor: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def header(self) -> dict:
        return {
            "shape": list(self.entries.shape),
            "dtype": "<f8",
            "order": "row-major",
            "jitter": self.jitter,
            "model_hash": self.model_hash,
            "points": [[p.t, *p.x] for p in self.points],
        }

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.entries, dtype="<f8").tobytes()

    def save(self, stem: str) -> None:
        with open(stem + ".f64", "wb") as fh:
            fh.write(self.to_bytes())
        with open(stem + ".json", "w") as fh:
            json.dump(self.header(), fh, indent=2)


# Scalar quantities


def variance(model: Model, t: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Variance of the field at time t; it does not depend on x."""
    if t < 0.0 or t > model.T * (1 + 1e-12):
        raise DomainError(f"time {t} outside [0, {model.T}]")
    if t == 0.0:
        return 0.0
    rule = spectral_rule(model, spec)
    return float(rule.w_one @ fbm_double_integral(model.hurst, rule.lam, t, spec))


def variance_bounds(model: Model, spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """Window [low, high] containing the variance for every t in [t0, T].

    low = t0^{2H} int exp(-2 T Psi) d mu. high uses N_t <= min(T^{2H},
    alpha_H Gamma(2H-1) Psi^{-2H}), both elementary consequences of the
    definition of N_t.
    """
    rule = spectral_rule(model, spec)
    H = model.hurst
    low = model.t0 ** (2 * H) * float(rule.w_one @ np.exp(-2.0 * model.T * rule.lam))
    with np.errstate(divide="ignore"):
        cap = alpha_h(H) * gamma_fn(2 * H - 1) * rule.lam ** (-2 * H)
    high = float(rule.w_one @ np.minimum(model.T ** (2 * H), cap))
    return low, high


def cross_cov_time(model: Model, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Covariance from the double time integral against |r-w|^{2H-2}."""
    _check(model, p1)
    _check(model, p2)
    rule = spectral_rule(model, spec)
    K = kernel_time(model.hurst, p1.t, p2.t, rule.lam, spec)
    return float(rule.weights(_lag(p1, p2), "cos") @ K)


def cross_cov_freq(model: Model, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Covariance from the harmonizable representation (frequency line in tau)."""
    _check(model, p1)
    _check(model, p2)
    rule = spectral_rule(model, spec)
    K = kernel_freq(model.hurst, p1.t, p2.t, rule.lam, spec)
    return float(rule.weights(_lag(p1, p2), "cos") @ K)


def freq_integrand(model: Model, p1: SpaceTimePoint, p2: SpaceTimePoint, tau: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Complex harmonizable integrand at frequencies (tau, eta).

    ``tau`` has shape (m,) and ``eta`` shape (k, d); the result has shape
    (m, k). Its real part integrates to the covariance, its imaginary part to 0.
    """
    tau = np.asarray(tau, dtype=float)[:, None]
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    lam = psi(model, eta)[None, :]
    ups = spectral_density(model, eta)[None, :]
    t, s = p1.t, p2.t
    At = np.exp(-1j * tau * t) - np.exp(-t * lam)
    As = np.exp(-1j * tau * s) - np.exp(-s * lam)
    phase = np.exp(-1j * (eta @ _lag(p1, p2)))[None, :]
    weight = beta_h(model.hurst) * np.abs(tau) ** (1 - 2 * model.hurst) * ups / (lam**2 + tau**2)
    return weight * phase * At * np.conj(As)


def _checked_square(sq: float, scale: float) -> float:
    if sq < -NEGATIVE_TOL * max(scale, 1.0):
        raise NegativeVarianceArtifact(f"increment second moment {sq:.3e} is negative")
    return max(sq, 0.0)


def increment_second_moment(model: Model, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """E|u(p1) - u(p2)|^2.

    Written as int mu(d xi)[N_t + N_s - 2K] + 2 int mu(d xi) K (1 - cos), so the
    spatial part never goes through a difference of nearly equal numbers.
    """
    _check(model, p1)
    _check(model, p2)
    rule = spectral_rule(model, spec)
    H = model.hurst
    lag = _lag(p1, p2)
    if p1.t == p2.t:
        N = fbm_double_integral(H, rule.lam, p1.t, spec)
        sq = 2.0 * float(rule.weights(lag, "omc") @ N)
        return _checked_square(sq, 0.0)
    Nt = fbm_double_integral(H, rule.lam, p1.t, spec)
    Ns = fbm_double_integral(H, rule.lam, p2.t, spec)
    K = kernel_time(H, p1.t, p2.t, rule.lam, spec, n_early=Nt if p1.t < p2.t else Ns)
    sq = float(rule.w_one @ (Nt + Ns - 2.0 * K))
    if np.any(lag != 0.0):
        sq += 2.0 * float(rule.weights(lag, "omc") @ K)
    return _checked_square(sq, 0.0)


def increment_norm(model: Model, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """L2 norm of u(p1) - u(p2)."""
    if p1 == p2:
        _check(model, p1)
        return 0.0
    return math.sqrt(increment_second_moment(model, p1, p2, spec))


def correlation(model: Model, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """cov / (sigma sigma), assembled as 1 - (|d|^2 - (s1-s2)^2)/(2 s1 s2) to keep digits near 1."""
    for p in (p1, p2):
        if p.t < model.t0 * (1 - 1e-12):
            raise DomainError(f"correlation needs t >= t0 = {model.t0}")
    if p1 == p2:
        return 1.0
    s1 = math.sqrt(variance(model, p1.t, spec))
    s2 = math.sqrt(variance(model, p2.t, spec))
    d2 = increment_second_moment(model, p1, p2, spec)
    rho = 1.0 - (d2 - (s1 - s2) ** 2) / (2.0 * s1 * s2)
    return float(min(1.0, max(-1.0, rho)))


# Band-limited increments


@lru_cache(maxsize=64)
def _restricted_rule(model: Model, spec: QuadratureSpec, hi: float) -> SpectralRule:
    return SpectralRule(model, spec, hi=hi)


def _box_square(model: Model, c: float, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec) -> float:
    """Increment second moment of the part of the field with |tau| < c^{1/a2}, |eta| < c^{1/a1}."""
    if c <= 0.0:
        return 0.0
    H = model.hurst
    lag = _lag(p1, p2)
    t, s = p1.t, p2.t
    if math.isinf(c):
        rule = spectral_rule(model, spec)
        tau_max = math.inf
    else:
        tau_max = c ** (1.0 / model.alpha2)
        eta_max = c ** (1.0 / model.alpha1)
        master = spectral_rule(model, spec)
        rule = master if eta_max >= master.breaks[-1] else _restricted_rule(model, spec, float(eta_max))
    K = kernel_freq(H, t, s, rule.lam, spec, tau_max)
    if t == s:
        D = np.zeros_like(K)
    else:
        D = kernel_freq(H, t, t, rule.lam, spec, tau_max) + kernel_freq(H, s, s, rule.lam, spec, tau_max) - 2.0 * K
    sq = float(rule.w_one @ D)
    if np.any(lag != 0.0):
        sq += 2.0 * float(rule.weights(lag, "omc") @ K)
    return sq


def band_increment_norm(
    model: Model, band: BandSpec, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec = DEFAULT_SPEC
) -> float:
    """L2 norm of v(A, p1) - v(A, p2) for the band A = [a, b).

    The band is the difference of two frequency boxes, so the squared norm is
    a difference of box integrals of the harmonizable integrand.
    """
    _check(model, p1)
    _check(model, p2)
    if band.empty or p1 == p2:
        return 0.0
    hi = _box_square(model, band.b, p1, p2, spec)
    lo = _box_square(model, band.a, p1, p2, spec)
    return math.sqrt(_checked_square(hi - lo, hi))


# Pinned covariance


def pinned_time(model: Model, t: float, delta: float = 0.05) -> float:
    """t' = t - 2 (2 delta)^{1/alpha2}."""
    return t - 2.0 * (2.0 * delta) ** (1.0 / model.alpha2)


def pinned_difference(
    model: Model, pin: SpaceTimePoint, p1: SpaceTimePoint, p2: SpaceTimePoint, spec: QuadratureSpec = DEFAULT_SPEC
) -> float:
    """E[(u(p1) - u(p2)) u(pin)], with the two covariances sharing one weight pass."""
    for p in (pin, p1, p2):
        _check(model, p)
    rule = spectral_rule(model, spec)
    H = model.hurst
    w1 = rule.weights(_lag(p1, pin), "cos")
    w2 = rule.weights(_lag(p2, pin), "cos")
    if p1.t == p2.t:
        K = kernel_time(H, p1.t, pin.t, rule.lam, spec)
        return float((w1 - w2) @ K)
    K1 = kernel_time(H, p1.t, pin.t, rule.lam, spec)
    K2 = kernel_time(H, p2.t, pin.t, rule.lam, spec)
    if np.array_equal(p1.x, p2.x):
        return float(w1 @ (K1 - K2))
    return float(w1 @ K1 - w2 @ K2)


# Covariance matrices


def _factorize(C: np.ndarray) -> tuple[np.ndarray, float]:
    n = C.shape[0]
    scale = float(np.trace(C)) / n
    for j in JITTER_LADDER:
        jit = j * scale
        try:
            L = cholesky(C + jit * np.eye(n), lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            continue
        return L, jit
    raise NotPSD("covariance stayed indefinite after the largest jitter")


def cov_matrix_points(
    model: Model, points: Sequence[SpaceTimePoint], spec: QuadratureSpec = DEFAULT_SPEC, workers: int = 1
) -> CovMatrix:
    """Covariance matrix over an arbitrary ordered point list."""
    pts = list(points)
    n = len(pts)
    if n == 0:
        raise ShapeMismatch("empty point list")
    if n > MAX_MATRIX:
        raise RangeError(f"{n} points exceeds the matrix cap {MAX_MATRIX}")
    for p in pts:
        _check(model, p)
    rule = spectral_rule(model, spec)
    times = sorted({p.t for p in pts})
    t_index = {t: i for i, t in enumerate(times)}
    X = np.array([p.x for p in pts])
    lags = X[:, None, :] - X[None, :, :]
    uniq, inverse = np.unique(lags.reshape(-1, model.d), axis=0, return_inverse=True)
    inverse = inverse.reshape(n, n)
    W = np.stack([rule.weights(u, "cos") for u in uniq])
    ti = np.array([t_index[p.t] for p in pts])
    pairs = [(i, j) for i in range(len(times)) for j in range(i, len(times))]

    def block(pair: tuple[int, int]) -> np.ndarray:
        i, j = pair
        K = kernel_time(model.hurst, times[i], times[j], rule.lam, spec)
        return W @ K

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(block, pairs))
    else:
        values = [block(pr) for pr in pairs]
    table = np.empty((len(times), len(times), len(uniq)))
    for (i, j), v in zip(pairs, values):
        table[i, j] = v
        table[j, i] = v
    C = table[ti[:, None], ti[None, :], inverse]
    C = 0.5 * (C + C.T)
    eig = eigvalsh(C)
    ratio = float(eig[0] / max(np.max(np.diag(C)), 1e-300))
    L, jit = _factorize(C)
    return CovMatrix(pts, C, jit, model.model_hash(), ratio, L)


def cov_matrix(model: Model, grid: GridSpec, spec: QuadratureSpec = DEFAULT_SPEC, workers: int = 1) -> CovMatrix:
    """Covariance matrix over a tensor grid, ordered [time][space]."""
    if grid.d != model.d:
        raise ShapeMismatch(f"grid has d={grid.d}, model has d={model.d}")
    if grid.t_min < model.t0 * (1 - 1e-12) or grid.t_max > model.T * (1 + 1e-12) or grid.M > model.M * (1 + 1e-12):
        raise DomainError("grid must lie inside [t0, T] x [-M, M]^d")
    return cov_matrix_points(model, grid.points(), spec, workers)
