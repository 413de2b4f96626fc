"""Green function of d/dt + (I - Delta)^{alpha/2} (-Delta)^{gamma/2} and the drift G * u0.

Both are inverse Fourier transforms of exp(-t Psi) (times the transform of
u0), evaluated as a lattice sum with spacing 2 pi / L. The sum equals the
L-periodization of the kernel, so it is spectrally accurate whenever the
kernel has decayed at distance L/2; L defaults to 8M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, RangeError, ShapeMismatch, TruncationFailure
from .model import Model, psi_radial

__all__ = [
    "Zero",
    "GaussianBump",
    "TabulatedL1",
    "InitialDatum",
    "green_eval",
    "green_mass",
    "drift",
    "decay_radius",
    "frequency_cutoff",
]

TAIL_TOL = 1e-10
MAX_LATTICE = 2**22


@dataclass(frozen=True)
class Zero:
    def fourier(self, xi: np.ndarray) -> np.ndarray:
        return np.zeros(xi.shape[:-1])


@dataclass(frozen=True)
class GaussianBump:
    """u0(y) = amplitude * exp(-|y|^2 / (2 width^2))."""

    amplitude: float = 1.0
    width: float = 1.0

    def __post_init__(self) -> None:
        if self.width <= 0.0:
            raise RangeError("bump width must be positive")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.amplitude * np.exp(-np.sum(y * y, axis=-1) / (2.0 * self.width**2))

    def fourier(self, xi: np.ndarray) -> np.ndarray:
        d = xi.shape[-1]
        w2 = self.width**2
        return self.amplitude * (2.0 * math.pi * w2) ** (d / 2.0) * np.exp(-0.5 * w2 * np.sum(xi * xi, axis=-1))


@dataclass(frozen=True)
class TabulatedL1:
    """Samples of u0 on a uniform tensor grid; the transform is the trapezoid sum."""

    axis: tuple[float, ...]
    values: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        ax = np.asarray(self.axis, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if ax.ndim != 1 or ax.size < 2 or np.any(np.diff(ax) <= 0):
            raise ShapeMismatch("axis must be a strictly increasing 1-D grid")
        if v.ndim not in (1, 2) or any(n != ax.size for n in v.shape):
            raise ShapeMismatch("values must be sampled on axis (1-D) or axis x axis (2-D)")
        if not np.all(np.isfinite(v)):
            raise RangeError("tabulated datum must be finite")
        object.__setattr__(self, "axis", tuple(ax))
        object.__setattr__(self, "values", v)

    def _weights(self) -> np.ndarray:
        ax = np.asarray(self.axis)
        w = np.empty_like(ax)
        dx = np.diff(ax)
        w[0], w[-1] = dx[0] / 2, dx[-1] / 2
        w[1:-1] = (dx[:-1] + dx[1:]) / 2
        return w

    def fourier(self, xi: np.ndarray) -> np.ndarray:
        ax = np.asarray(self.axis)
        w = self._weights()
        if self.values.ndim == 1:
            if xi.shape[-1] != 1:
                raise ShapeMismatch("1-D datum used with a 2-D model")
            phase = np.exp(-1j * xi[..., 0, None] * ax)
            return phase @ (w * self.values)
        if xi.shape[-1] != 2:
            raise ShapeMismatch("2-D datum used with a 1-D model")
        p1 = np.exp(-1j * xi[..., 0, None] * ax) * w
        p2 = np.exp(-1j * xi[..., 1, None] * ax) * w
        return np.einsum("...i,ij,...j->...", p1, self.values, p2)


InitialDatum = Zero | GaussianBump | TabulatedL1


def frequency_cutoff(model: Model, t: float, tol: float = TAIL_TOL) -> float:
    """Radius beyond which exp(-t Psi) carries at most ``tol`` of the unit mass.

    Uses the majorant exp(-t r^s) with s = alpha + gamma for r >= 1 and a
    Gamma-function tail bound, then solves for r.
    """
    s = model.order
    d = model.d

    def tail(r: float) -> float:
        # int_{|xi|>r} exp(-t |xi|^s) d xi <= surface * r^{d-1} exp(-t r^s) / (t s r^{s-1}) for t s r^s >= d
        surface = 2.0 if d == 1 else 2.0 * math.pi
        return surface * r ** (d - s) * math.exp(-t * r**s) / (t * s) / (2.0 * math.pi) ** d

    lo = max(1.0, (2.0 * d / (t * s)) ** (1.0 / s))
    hi = lo
    while tail(hi) > tol:
        hi *= 2.0
        if hi > 1e8:
            raise TruncationFailure("no frequency cutoff reaches the tail tolerance")
    if hi == lo:
        return lo
    return brentq(lambda r: math.log(tail(r)) - math.log(tol), lo, hi)


def _lattice(model: Model, t: float, period: float) -> tuple[np.ndarray, float]:
    if t <= 0.0:
        raise DomainError("Green function needs t > 0")
    step = 2.0 * math.pi / period
    kmax = int(math.ceil(frequency_cutoff(model, t) / step))
    if (2 * kmax + 1) ** model.d > MAX_LATTICE:
        raise TruncationFailure(f"lattice with {(2 * kmax + 1) ** model.d} nodes exceeds budget")
    k = np.arange(-kmax, kmax + 1) * step
    return k, step


def _points(model: Model, x) -> tuple[np.ndarray, tuple]:
    x = np.asarray(x, dtype=float)
    if model.d == 1:
        shape = x.shape[:-1] if (x.ndim and x.shape[-1] == 1 and x.ndim > 1) else x.shape
        return x.reshape(-1, 1), shape
    if x.shape[-1] != 2:
        raise ShapeMismatch("points must have 2 coordinates")
    return x.reshape(-1, 2), x.shape[:-1]


def _inverse_fourier(model: Model, t: float, x, factor, period: float | None) -> np.ndarray:
    """(2 pi)^{-d} sum over the lattice of exp(i <x, xi>) exp(-t Psi(xi)) factor(xi) (step)^d."""
    L = 8.0 * model.M if period is None else period
    k, step = _lattice(model, t, L)
    pts, shape = _points(model, x)
    scale = (step / (2.0 * math.pi)) ** model.d
    if model.d == 1:
        xi = k[:, None]
        spec = np.exp(-t * psi_radial(model.alpha, model.gamma, np.abs(k))) * factor(xi)
        vals = np.exp(1j * pts[:, :1] * k[None, :]) @ spec
    else:
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        xi = np.stack([K1, K2], axis=-1)
        r = np.hypot(K1, K2)
        spec = np.exp(-t * psi_radial(model.alpha, model.gamma, r)) * factor(xi)
        e1 = np.exp(1j * pts[:, 0, None] * k[None, :])
        e2 = np.exp(1j * pts[:, 1, None] * k[None, :])
        vals = np.einsum("pi,ij,pj->p", e1, spec, e2)
    vals = vals * scale
    peak = max(float(np.max(np.abs(vals.real))), 1e-300)
    if np.max(np.abs(vals.imag)) > 1e-10 * max(peak, 1.0):
        raise TruncationFailure("inverse transform left an imaginary residue")
    return vals.real.reshape(shape)


def green_eval(model: Model, t: float, x, period: float | None = None):
    """G(t, x); ``x`` is a point or an array of points."""
    out = _inverse_fourier(model, t, x, lambda xi: np.ones(xi.shape[:-1]), period)
    return float(out) if np.ndim(out) == 0 else out


def green_mass(model: Model, t: float, period: float | None = None) -> float:
    """int G(t, x) dx by the trapezoid rule over one period of the lattice kernel.

    The node spacing resolves the frequency cutoff, which makes the rule exact
    for the lattice sum.
    """
    L = 8.0 * model.M if period is None else period
    cut = frequency_cutoff(model, t)
    n = int(2 ** math.ceil(math.log2(max(16, 2 * L * cut / math.pi))))
    ax = -0.5 * L + L * np.arange(n) / n
    h = L / n
    if model.d == 1:
        return float(np.sum(green_eval(model, t, ax, L)) * h)
    total = 0.0
    for row in ax:
        pts = np.stack([np.full(n, row), ax], axis=-1)
        total += float(np.sum(green_eval(model, t, pts, L)))
    return total * h * h


def drift(model: Model, u0: InitialDatum, t: float, x, period: float | None = None):
    """(G(t) * u0)(x) through the Fourier side."""
    if isinstance(u0, Zero):
        pts, shape = _points(model, x)
        out = np.zeros(shape)
        return float(out) if out.ndim == 0 else out
    out = _inverse_fourier(model, t, x, u0.fourier, period)
    return float(out) if np.ndim(out) == 0 else out


def decay_radius(model: Model, t: float, level: float = 1e-6, n: int = 2048) -> float:
    """Smallest R on a grid of [0, 4M] with |G(t, x)| <= level for all |x| >= R."""
    r = np.linspace(0.0, 4.0 * model.M, n)
    pts = r if model.d == 1 else np.stack([r, np.zeros_like(r)], axis=-1)
    g = np.abs(green_eval(model, t, pts))
    above = np.nonzero(g > level)[0]
    if above.size == 0:
        return 0.0
    if above[-1] == n - 1:
        return math.inf
    return float(r[above[-1] + 1])
