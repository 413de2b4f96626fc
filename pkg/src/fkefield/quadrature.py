"""Singular-kernel and unbounded-domain quadrature.

Everything here is built from composite Gauss rules on panels. A panel that
touches an integrable power singularity at its left end uses Gauss-Jacobi
nodes that absorb the singular weight; every other panel uses Gauss-Legendre.
Panels are placed geometrically toward singular points and toward the
boundary layers created by exponentials such as exp(-lambda u).

The time kernels are vectorized over an array of decay rates ``lam``: each
rate gets its own breakpoints (scaled with 1/lam), so the cost per rate does
not grow with the size of the rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import betainc, j0, roots_jacobi, roots_legendre
from scipy.special import beta as beta_fn

from .errors import RangeError, TruncationFailure
from .model import Model, SpectralProfile, alpha_h, beta_h, psi_radial

__all__ = [
    "QuadratureSpec",
    "gauss_legendre",
    "gauss_jacobi",
    "fbm_double_integral",
    "gamma_identity",
    "kernel_time",
    "kernel_freq",
    "SpectralRule",
    "spectral_rule",
    "spectral_integral",
    "line_integral_tau",
]

MAX_NODES = 2**20


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts and tolerances shared by every integral.

    ``n_time_nodes`` and ``n_radial_nodes`` are Gauss points per panel of the
    composite time and radial rules; ``n_angular_nodes`` is the base number of
    angular nodes per quadrant in d=2 (raised with the oscillation count).
    ``radial_cutoff=None`` selects the adaptive radial truncation driven by
    ``rel_tail_tol``; ``tau_cutoff`` plays the same role on the frequency line.
    """

    n_time_nodes: int = 12
    n_radial_nodes: int = 12
    n_angular_nodes: int = 64
    rel_tail_tol: float = 1e-8
    radial_cutoff: float | None = None
    tau_cutoff: float | None = None
    radial_levels_below: int = 30
    min_resolved_lag: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("n_time_nodes", "n_radial_nodes", "n_angular_nodes"):
            if getattr(self, name) < 8:
                raise RangeError(f"{name} must be at least 8")
        if not 0.0 < self.rel_tail_tol < 1.0:
            raise RangeError("rel_tail_tol must lie in (0, 1)")

    @staticmethod
    def jacobi_exponent(H: float) -> float:
        """Power of the |r-w|^{2H-2} singularity absorbed by Gauss-Jacobi nodes."""
        return 2.0 * H - 2.0

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(
            n_time_nodes=2 * self.n_time_nodes,
            n_radial_nodes=2 * self.n_radial_nodes,
            n_angular_nodes=2 * self.n_angular_nodes,
            rel_tail_tol=self.rel_tail_tol,
            radial_cutoff=self.radial_cutoff,
            tau_cutoff=self.tau_cutoff,
            radial_levels_below=self.radial_levels_below,
            min_resolved_lag=self.min_resolved_lag,
        )

    def to_dict(self) -> dict:
        return {
            "n_time_nodes": self.n_time_nodes,
            "n_radial_nodes": self.n_radial_nodes,
            "n_angular_nodes": self.n_angular_nodes,
            "rel_tail_tol": self.rel_tail_tol,
            "radial_cutoff": self.radial_cutoff,
            "tau_cutoff": self.tau_cutoff,
            "radial_levels_below": self.radial_levels_below,
            "min_resolved_lag": self.min_resolved_lag,
        }


DEFAULT_SPEC = QuadratureSpec()


# Basic rules


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_jacobi(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the weight (1-x)^a (1+x)^b on [-1, 1]."""
    x, w = roots_jacobi(n, a, b)
    return x, w


@lru_cache(maxsize=None)
def _barycentric(n: int) -> np.ndarray:
    x, _ = gauss_legendre(n)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _lagrange_matrix(n: int, y: np.ndarray) -> np.ndarray:
    """L[i, k] = l_k(y_i) for the Gauss-Legendre nodes of order n on [-1, 1]."""
    x, _ = gauss_legendre(n)
    bw = _barycentric(n)
    diff = y[:, None] - x[None, :]
    hit = np.abs(diff) < 1e-15
    diff = np.where(hit, 1.0, diff)
    terms = bw[None, :] / diff
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = np.any(hit, axis=1)
    if np.any(rows):
        L[rows] = hit[rows].astype(float)
    return L


def _phi1(x: np.ndarray) -> np.ndarray:
    """(1 - exp(-x)) / x with the value 1 at x = 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = x != 0.0
    np.divide(-np.expm1(-x), x, out=out, where=nz)
    return out


def _panel_rule(breaks: np.ndarray, n: int, power: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule on sorted breakpoints, one row per decay rate.

    ``breaks`` has shape (m, nb) with breaks[:, 0] == 0 when ``power`` is set.
    The returned weights already contain the factor u**power, so the rule
    integrates u**power * f(u) as sum(w * f(nodes)).
    """
    a = breaks[:, :-1]
    b = breaks[:, 1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x, w = gauss_legendre(n)
    nodes = mid[..., None] + half[..., None] * x
    weights = half[..., None] * w
    if power is not None:
        weights = weights * np.power(nodes, power, out=np.ones_like(nodes), where=nodes > 0)
        # Clipping can stack several breaks at 0; the singular panel is the
        # first one of positive length.
        xj, wj = gauss_jacobi(n, 0.0, power)
        rows = np.arange(breaks.shape[0])
        first = np.sum(breaks <= 0.0, axis=1) - 1
        b1 = b[rows, first]
        nodes[rows, first, :] = 0.5 * b1[:, None] * (1.0 + xj)
        weights[rows, first, :] = (0.5 * b1[:, None]) ** (power + 1.0) * wj
    m = breaks.shape[0]
    return nodes.reshape(m, -1), weights.reshape(m, -1)


def _scaled_breaks(lam: np.ndarray, fixed: list[float], anchors: list[tuple[float, int]], upper: float) -> np.ndarray:
    """Breakpoints per rate: fixed points plus anchor + sign * 2^k / lam, clipped to [0, upper]."""
    ks = 2.0 ** np.arange(-3, 7)
    with np.errstate(divide="ignore"):
        scale = np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), np.inf)
    cols = [np.full(lam.shape, f) for f in fixed]
    for anchor, sign in anchors:
        for k in ks:
            col = anchor + sign * k * scale
            # A break a rounding error away from 0 would hand the singular
            # panel to Legendre nodes.
            if anchor > 0.0:
                col = np.where(np.abs(col) < 1e-12 * anchor, 0.0, col)
            cols.append(col)
    B = np.sort(np.clip(np.stack(cols, axis=1), 0.0, upper), axis=1)
    # Clipping stacks breaks at 0 and upper; move the repeats to the end and
    # drop columns that are repeats in every row.
    dup = np.zeros(B.shape, dtype=bool)
    dup[:, 1:] = B[:, 1:] == B[:, :-1]
    B = np.sort(np.where(dup, np.inf, B), axis=1)[:, : int(np.max(np.sum(~dup, axis=1)))]
    return np.where(np.isinf(B), upper, B)


# fbm kernel


def _geometric_fixed(length: float, levels: int) -> list[float]:
    return [length * 2.0**-j for j in range(1, levels + 1)]


def fbm_double_integral(H: float, lam, t: float, spec: QuadratureSpec = DEFAULT_SPEC):
    """N_t(lam) = alpha_H int_0^t int_0^t |r-w|^{2H-2} exp(-(r+w) lam) dr dw.

    Reduced to 2 alpha_H int_0^t u^{2H-2} exp(-lam u) (t-u) phi(2 lam (t-u)) du
    with phi(x) = (1-e^{-x})/x. lam = 0 returns t^{2H} exactly.
    """
    if not 0.5 < H < 1.0:
        raise RangeError(f"H must lie in (1/2, 1), got {H}")
    lam_in = np.asarray(lam, dtype=float)
    lam = np.atleast_1d(lam_in).ravel()
    out = np.empty_like(lam)
    zero = lam == 0.0
    out[zero] = t ** (2.0 * H)
    pos = ~zero
    if np.any(pos):
        out[pos] = _fbm_positive(H, lam[pos], float(t), spec.n_time_nodes)
    return out.reshape(lam_in.shape) if lam_in.ndim else float(out[0])


def _fbm_positive(H: float, lam: np.ndarray, t: float, n: int) -> np.ndarray:
    res = np.empty_like(lam)
    fixed = [0.0, t] + _geometric_fixed(t, 16)
    for sl in _chunks(lam.size):
        lm = lam[sl]
        B = _scaled_breaks(lm, fixed, [(0.0, 1), (t, -1)], t)
        u, w = _panel_rule(B, n, 2.0 * H - 2.0)
        L = lm[:, None]
        f = np.exp(-L * u) * 2.0 * (t - u) * _phi1(2.0 * L * (t - u))
        res[sl] = alpha_h(H) * np.sum(w * f, axis=1)
    return res


def _chunks(size: int, step: int = 256):
    for i in range(0, size, step):
        yield slice(i, min(i + step, size))


def gamma_identity(H: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """int_0^inf int_0^inf |r-w|^{2H-2} e^{-r-w} dr dw, which equals Gamma(2H-1)."""
    # On [0, t]^2 the missing mass is O(e^{-t}); t = 80 puts it below 1e-30.
    return float(fbm_double_integral(H, 1.0, 80.0, spec)) / alpha_h(H)


# Cross kernel, time domain


def kernel_time(H: float, t: float, s: float, lam, spec: QuadratureSpec = DEFAULT_SPEC, n_early=None):
    """K(t, s, lam) = alpha_H int_0^t int_0^s |r-w|^{2H-2} e^{-(t-r)lam} e^{-(s-w)lam} dr dw.

    Split as e^{-lam h} N_s(lam) plus a one-dimensional integral in the
    difference variable v over [0, h+s], with h = |t-s|. ``n_early`` may
    carry N at the earlier time on the same ``lam`` to skip recomputing it.
    """
    if t < s:
        t, s = s, t
    lam_in = np.asarray(lam, dtype=float)
    lam = np.atleast_1d(lam_in).ravel()
    h = t - s
    Ns = fbm_double_integral(H, lam, s, spec) if n_early is None else np.ravel(n_early)
    out = np.exp(-lam * h) * Ns
    if h > 0.0:
        out = out + _kernel_part2(H, h, s, lam, spec.n_time_nodes)
    return out.reshape(lam_in.shape) if lam_in.ndim else float(out[0])


def _kernel_part2(H: float, h: float, s: float, lam: np.ndarray, n: int) -> np.ndarray:
    L = h + s
    res = np.empty_like(lam)
    fixed = [0.0, s, h, L] + _geometric_fixed(L, 16)
    anchors = [(0.0, 1), (h, 1), (h, -1), (L, -1)]
    for sl in _chunks(lam.size):
        lm = lam[sl]
        B = _scaled_breaks(lm, fixed, anchors, L)
        v, w = _panel_rule(B, n, 2.0 * H - 2.0)
        p_lo = np.maximum(0.0, v - s)
        p_hi = np.minimum(h, v)
        delta = np.maximum(p_hi - p_lo, 0.0)
        Lm = lm[:, None]
        E = np.exp(Lm * (2.0 * p_hi - v - h)) * delta * _phi1(2.0 * Lm * delta)
        res[sl] = alpha_h(H) * np.sum(w * E, axis=1)
    return res


# Cross kernel, frequency domain


def _tail_const(p: float, lam: np.ndarray, X: float) -> np.ndarray:
    """int_X^inf tau^p / (lam^2 + tau^2) d tau for p in (-1, 0)."""
    a, b = 0.5 * (p + 1.0), 0.5 * (1.0 - p)
    r = lam / X
    out = np.empty_like(lam)
    small = r < 1e-6
    out[small] = X ** (p - 1.0) * (1.0 / (1.0 - p) - r[small] ** 2 / (3.0 - p))
    big = ~small
    if np.any(big):
        lb = lam[big]
        z = lb * lb / (lb * lb + X * X)
        out[big] = 0.5 * lb ** (p - 1.0) * beta_fn(a, b) * betainc(b, a, z)
    return out


def _f_derivs(p: float, tau: float, lam: np.ndarray) -> list[np.ndarray]:
    """f, f', f'', f''' for f(tau) = tau^p / (lam^2 + tau^2) at a scalar tau."""
    A = [tau**p, p * tau ** (p - 1), p * (p - 1) * tau ** (p - 2), p * (p - 1) * (p - 2) * tau ** (p - 3)]
    Bv = 1.0 / (lam * lam + tau * tau)
    B = [Bv, -2.0 * tau * Bv**2, -2.0 * Bv**2 + 8.0 * tau**2 * Bv**3, 24.0 * tau * Bv**3 - 48.0 * tau**3 * Bv**4]
    binom = [[1], [1, 1], [1, 2, 1], [1, 3, 3, 1]]
    return [sum(binom[k][j] * A[j] * B[k - j] for j in range(k + 1)) for k in range(4)]


def _ibp_tail(p: float, lam: np.ndarray, X: float, omega: float) -> np.ndarray:
    """int_X^inf f(tau) cos(omega tau) d tau by repeated integration by parts."""
    f0, f1, f2, f3 = _f_derivs(p, X, lam)
    sn, cs = math.sin(omega * X), math.cos(omega * X)
    return -f0 * sn / omega - f1 * cs / omega**2 + f2 * sn / omega**3 + f3 * cs / omega**4


def _tau_panels(lo: float, hi: float, width: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre panels on [lo, hi], geometric from lo and no wider than ``width``."""
    pts = [lo]
    x = lo
    while x < hi:
        step = min(width, x) if x > 0 else width
        x = min(hi, x + step)
        pts.append(x)
    br = np.array(pts)
    xg, wg = gauss_legendre(n)
    a, b = br[:-1], br[1:]
    nodes = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * xg
    weights = (0.5 * (b - a))[:, None] * wg
    return nodes.ravel(), weights.ravel()


def kernel_freq(H: float, t: float, s: float, lam, spec: QuadratureSpec = DEFAULT_SPEC, tau_max: float = math.inf):
    """Same kernel as :func:`kernel_time` through the frequency line.

    2 beta_H int_0^inf tau^{1-2H} Re[(e^{-i tau t} - e^{-t lam})(e^{i tau s} - e^{-s lam})]
    / (lam^2 + tau^2) d tau. The bracket is an entire function of tau, so a
    plain panel rule is used up to 50/min(t,s); beyond that the oscillatory
    pieces are integrated by parts and the constant piece in closed form.
    A finite ``tau_max`` restricts the integral to [0, tau_max).
    """
    if t < s:
        t, s = s, t
    lam_in = np.asarray(lam, dtype=float)
    lam = np.atleast_1d(lam_in).ravel()
    if s <= 0.0 or tau_max <= 0.0:
        out = np.zeros_like(lam)
        return out.reshape(lam_in.shape) if lam_in.ndim else 0.0
    n = spec.n_time_nodes
    p = 1.0 - 2.0 * H
    X = 50.0 / s
    Xc = min(X, tau_max)
    width = math.pi / t
    # Region I: Gauss-Jacobi on the first panel, Legendre after.
    xj, wj = gauss_jacobi(n, 0.0, p)
    first = min(width, Xc)
    tau0 = 0.5 * first * (1.0 + xj)
    w0 = (0.5 * first) ** (p + 1.0) * wj
    tau1, w1 = _tau_panels(first, Xc, width, n)
    tau = np.concatenate([tau0, tau1])
    wt = np.concatenate([w0, w1 * tau1**p])
    ct = -2.0 * np.sin(0.5 * tau * t) ** 2
    cs = -2.0 * np.sin(0.5 * tau * s) ** 2
    sprod = np.sin(tau * t) * np.sin(tau * s)
    P = ct * cs + sprod
    out = np.empty_like(lam)
    for sl in _chunks(lam.size, 128):
        lm = lam[sl]
        et = -np.expm1(-t * lm)
        es = -np.expm1(-s * lm)
        G = wt[:, None] / (lm[None, :] ** 2 + tau[:, None] ** 2)
        total = P @ G + es * (ct @ G) + et * (cs @ G) + et * es * G.sum(axis=0)
        if tau_max > X:
            total += _region2(p, lm, X, t, s, n)
            if math.isfinite(tau_max):
                total -= _region2(p, lm, tau_max, t, s, n)
        out[sl] = 2.0 * beta_h(H) * total
    return out.reshape(lam_in.shape) if lam_in.ndim else float(out[0])


def _region2(p: float, lam: np.ndarray, X: float, t: float, s: float, n: int) -> np.ndarray:
    """int_X^inf of the kernel integrand, for X >= 50/min(t, s)."""
    a = np.exp(-t * lam)
    b = np.exp(-s * lam)
    out = a * b * _tail_const(p, lam, X)
    out -= b * _ibp_tail(p, lam, X, t)
    out -= a * _ibp_tail(p, lam, X, s)
    out += _cos_tail(p, lam, X, t - s, n)
    return out


def _cos_tail(p: float, lam: np.ndarray, X: float, h: float, n: int) -> np.ndarray:
    """int_X^inf tau^p cos(h tau) / (lam^2 + tau^2) d tau."""
    if h == 0.0:
        return _tail_const(p, lam, X)
    Xh = max(X, 200.0 / h)
    acc = np.zeros_like(lam)
    if Xh > X:
        Xh = X + math.pi / h * math.ceil((Xh - X) * h / math.pi)
        tau, w = _tau_panels(X, Xh, math.pi / h, n)
        vals = w * tau**p * np.cos(h * tau)
        acc += vals @ (1.0 / (lam[None, :] ** 2 + tau[:, None] ** 2))
    return acc + _ibp_tail(p, lam, Xh, h)


# Spectral (radial) integration


def _one_minus_j0(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    small = x < 0.05
    x2 = np.where(small, x, 0.0) ** 2 / 4.0
    series = x2 - x2**2 / 4.0 + x2**3 / 36.0
    return np.where(small, series, 1.0 - j0(np.where(small, 1.0, x)))


def _angular_product(prof: SpectralProfile, rho: np.ndarray, delta: np.ndarray, mode: str, n_base: int) -> np.ndarray:
    """Angular factor for the product profile at radii ``rho``.

    mode "one": integral of the density over the circle (unit radius part).
    mode "cos": integral of density * cos(rho e . delta).
    mode "omc": integral of density * (1 - cos(rho e . delta)).
    """
    e1, e2 = prof.exponents
    total = 2.0 * prof.c * float(beta_fn((e1 + 1.0) / 2.0, (e2 + 1.0) / 2.0))
    if mode == "one" or not np.any(delta):
        base = np.full(rho.shape, total)
        return base if mode != "omc" else np.zeros(rho.shape)
    span = float(np.max(rho)) * float(np.sum(np.abs(delta)))
    n = n_base + 16 * int(math.ceil(0.7 * span / 16.0))
    x, w = gauss_jacobi(n, e1, e2)
    phi = 0.25 * math.pi * (1.0 + x)
    smooth = np.ones_like(phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.cos(phi) / (0.5 * math.pi - phi)
        r2 = np.sin(phi) / phi
    smooth = np.where(np.isfinite(r1), r1, 1.0) ** e1 * np.where(np.isfinite(r2), r2, 1.0) ** e2
    wq = 4.0 * prof.c * (0.25 * math.pi) ** (e1 + e2 + 1.0) * w * smooth
    a = rho[:, None] * delta[0] * np.cos(phi)[None, :]
    b = rho[:, None] * delta[1] * np.sin(phi)[None, :]
    if mode == "cos":
        vals = np.cos(a) * np.cos(b)
    else:
        vals = np.sin(0.5 * (a + b)) ** 2 + np.sin(0.5 * (a - b)) ** 2
    return vals @ wq


def angular_factor(prof: SpectralProfile, rho: np.ndarray, delta, mode: str, n_base: int = 64) -> np.ndarray:
    """Spherical integral of the density times 1, cos or 1 - cos at radii ``rho``.

    The radial factor rho^{beta-1} is not included.
    """
    rho = np.asarray(rho, dtype=float)
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if prof.shape == "product":
        return _angular_product(prof, rho, delta, mode, n_base)
    r = float(np.linalg.norm(delta))
    c = 2.0 * prof.c if prof.shape == "line" else 2.0 * math.pi * prof.c
    if mode == "one":
        return np.full(rho.shape, c)
    if prof.shape == "line":
        if mode == "cos":
            return c * np.cos(rho * r)
        return c * 2.0 * np.sin(0.5 * rho * r) ** 2
    if mode == "cos":
        return c * j0(rho * r)
    return c * _one_minus_j0(rho * r)


class SpectralRule:
    """Radial rule for integrals against the spectral measure.

    Master nodes ``rho`` sit on ratio-2 panels from ``2**-levels`` up to an
    adaptive cutoff, with a Gauss-Jacobi panel at the origin that absorbs
    rho^{beta-1}. Every integral is a weighted sum of a radial function on the
    master nodes. For factors cos(<xi, delta>) the weights come from a finer
    sub-rule on each panel that interpolates the radial function from the
    master nodes (a Filon-type product rule), so oscillation is resolved
    without evaluating the radial function anywhere else.
    """

    # Oscillation is integrated up to rho |delta| = U; beyond it the cosine
    # part is dropped. U sits at a zero of the leading tail term.
    U_LINE = 200.0 * math.pi
    U_RADIAL = 200.0 * math.pi + 0.25 * math.pi
    U_PRODUCT = 400.0 * math.pi

    def __init__(self, model: Model, spec: QuadratureSpec = DEFAULT_SPEC, lo: float = 0.0, hi: float | None = None):
        self.model = model
        self.spec = spec
        self.profile = model.profile()
        self.beta = model.beta
        n = spec.n_radial_nodes
        self.n = n
        top = self._cutoff() if hi is None else hi
        k_hi = int(math.ceil(math.log2(top)))
        grid = [2.0**k for k in range(-spec.radial_levels_below, k_hi + 1)]
        if hi is not None:
            grid = [g for g in grid if g < hi] + [hi]
        breaks = np.array(sorted(set([0.0] + grid)))
        if lo > 0.0:
            breaks = np.array(sorted(set([lo] + [b for b in breaks if b > lo])))
        if breaks.size * n > MAX_NODES:
            raise TruncationFailure(
                f"radial rule needs {breaks.size * n} nodes, above the {MAX_NODES} budget"
            )
        self.breaks = breaks
        self.singular_first = breaks[0] == 0.0
        x, w = gauss_legendre(n)
        a, b = breaks[:-1], breaks[1:]
        nodes = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * x
        base_w = (0.5 * (b - a))[:, None] * w * nodes ** (self.beta - 1.0)
        if self.singular_first:
            xj, wj = gauss_jacobi(n, 0.0, self.beta - 1.0)
            nodes[0] = 0.5 * b[0] * (1.0 + xj)
            base_w[0] = (0.5 * b[0]) ** self.beta * wj
        self.nodes2d = nodes
        self.base_w2d = base_w
        self.rho = nodes.ravel()
        self.lam = psi_radial(model.op.alpha, model.op.gamma, self.rho)
        self._weights_cache: dict = {}
        self.w_one = self._product_weights(None, "one")

    def _cutoff(self) -> float:
        if self.spec.radial_cutoff is not None:
            return float(self.spec.radial_cutoff)
        a1 = self.model.alpha1
        # Tail majorant rho^{-1-2 alpha1}; also resolve lags down to min_resolved_lag.
        r = self.spec.rel_tail_tol ** (-1.0 / (2.0 * a1)) / self.spec.min_resolved_lag
        return min(max(r, 16.0), 2.0**1000)

    @property
    def size(self) -> int:
        return self.rho.size

    def _u_limit(self) -> float:
        return {"line": self.U_LINE, "radial": self.U_RADIAL, "product": self.U_PRODUCT}[self.profile.shape]

    def weights(self, delta, mode: str = "cos") -> np.ndarray:
        """Weights w with sum(w * F(rho)) = int F(|xi|) g(xi) mu(d xi).

        ``mode`` selects g = 1 ("one"), cos<xi,delta> ("cos") or
        1 - cos<xi,delta> ("omc").
        """
        if mode == "one":
            return self.w_one
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        key = (mode, tuple(np.round(delta, 15)))
        hit = self._weights_cache.get(key)
        if hit is not None:
            return hit
        if not np.any(delta):
            w = self.w_one.copy() if mode == "cos" else np.zeros_like(self.w_one)
        else:
            w = self._product_weights(delta, mode)
        if len(self._weights_cache) > 4096:
            self._weights_cache.clear()
        self._weights_cache[key] = w
        return w

    def _product_weights(self, delta, mode: str) -> np.ndarray:
        prof = self.profile
        n = self.n
        nb = self.spec.n_angular_nodes
        if mode == "one":
            ang = angular_factor(prof, self.rho, np.zeros(max(1, self.model.d)), "one")
            return self.base_w2d.ravel() * ang
        scale = float(np.sum(np.abs(delta))) if prof.shape == "product" else float(np.linalg.norm(delta))
        R = self._u_limit() / scale
        out = np.zeros_like(self.base_w2d)
        one_ang = angular_factor(prof, self.rho[:1], np.zeros(max(1, self.model.d)), "one")[0]
        for i in range(self.breaks.size - 1):
            a, b = self.breaks[i], self.breaks[i + 1]
            if a >= R:
                # Non-oscillatory remainder: cos part dropped.
                if mode == "omc":
                    out[i] = self.base_w2d[i] * one_ang
                continue
            if i == 0 and self.singular_first and b * scale < 1e-3:
                ang = angular_factor(prof, self.nodes2d[0], delta, mode, nb)
                out[0] = self.base_w2d[0] * ang
                continue
            cut = min(b, R)
            m = 2 * n + int(math.ceil(0.35 * (cut - a) * scale))
            xg, wg = gauss_legendre(m)
            y = 0.5 * (a + cut) + 0.5 * (cut - a) * xg
            wy = 0.5 * (cut - a) * wg
            ang = angular_factor(prof, y, delta, mode, nb)
            if i == 0 and self.singular_first:
                # Split the origin panel: Jacobi rule for rho^{beta-1} is exact only
                # with smooth partners, so integrate the product on the fine rule
                # using the singular weight explicitly via a Jacobi sub-rule.
                xj, wj = gauss_jacobi(m, 0.0, self.beta - 1.0)
                y = 0.5 * cut * (1.0 + xj)
                wy = (0.5 * cut) ** self.beta * wj
                ang = angular_factor(prof, y, delta, mode, nb)
                fine_w = wy * ang
            else:
                fine_w = wy * y ** (self.beta - 1.0) * ang
            ref = 2.0 * (y - a) / (b - a) - 1.0
            if i == 0 and self.singular_first:
                Lm = self._first_panel_basis(b, y)
            else:
                Lm = _lagrange_matrix(n, ref)
            out[i] = fine_w @ Lm
            if cut < b and mode == "omc":
                xg2, wg2 = gauss_legendre(m)
                y2 = 0.5 * (cut + b) + 0.5 * (b - cut) * xg2
                w2 = 0.5 * (b - cut) * wg2 * y2 ** (self.beta - 1.0) * one_ang
                ref2 = 2.0 * (y2 - a) / (b - a) - 1.0
                out[i] += w2 @ _lagrange_matrix(n, ref2)
        return out.ravel()

    def _first_panel_basis(self, b: float, y: np.ndarray) -> np.ndarray:
        # Interpolation through the Jacobi nodes of the origin panel.
        x0 = self.nodes2d[0]
        diff = x0[:, None] - x0[None, :]
        np.fill_diagonal(diff, 1.0)
        bw = 1.0 / np.prod(diff / b, axis=1)
        d = y[:, None] - x0[None, :]
        hit = np.abs(d) < 1e-300
        d = np.where(hit, 1.0, d) / b
        terms = bw[None, :] / d
        L = terms / terms.sum(axis=1, keepdims=True)
        rows = np.any(hit, axis=1)
        if np.any(rows):
            L[rows] = hit[rows].astype(float)
        return L

    def integrate(self, values: np.ndarray, delta=None, mode: str = "one") -> float:
        w = self.weights(delta, mode) if mode != "one" else self.w_one
        return float(np.dot(w, values))


_RULES: dict = {}


def spectral_rule(model: Model, spec: QuadratureSpec = DEFAULT_SPEC) -> SpectralRule:
    """Cached master rule for a model."""
    key = (model, spec)
    rule = _RULES.get(key)
    if rule is None:
        if len(_RULES) > 32:
            _RULES.clear()
        rule = SpectralRule(model, spec)
        _RULES[key] = rule
    return rule


def spectral_integral(model: Model, f: Callable[[np.ndarray], np.ndarray], spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """int f(|xi|) mu(d xi) for a radial integrand f.

    Panels grow geometrically until three consecutive panels each add less
    than ``rel_tail_tol`` of the running total.
    """
    prof = model.profile()
    beta = model.beta
    n = spec.n_radial_nodes
    ang = float(angular_factor(prof, np.ones(1), np.zeros(max(1, model.d)), "one")[0])
    lo = 2.0 ** -spec.radial_levels_below
    xj, wj = gauss_jacobi(n, 0.0, beta - 1.0)
    y = 0.5 * lo * (1.0 + xj)
    total = float(np.dot((0.5 * lo) ** beta * wj, f(y)))
    xg, wg = gauss_legendre(n)
    a = lo
    quiet = 0
    used = n
    while True:
        b = 2.0 * a
        y = 0.5 * (a + b) + 0.5 * (b - a) * xg
        part = float(np.dot(0.5 * (b - a) * wg * y ** (beta - 1.0), f(y)))
        total += part
        used += n
        if b >= 1.0 and abs(part) <= spec.rel_tail_tol * abs(total):
            quiet += 1
            if quiet >= 3:
                break
        else:
            quiet = 0
        if used > MAX_NODES:
            raise TruncationFailure("spectral integral did not reach its tail tolerance")
        a = b
    return ang * total


def line_integral_tau(g: Callable[[np.ndarray], np.ndarray], H: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """int_R |tau|^{1-2H} g(tau) d tau.

    [0, 1] uses Gauss-Jacobi panels for the tau^{1-2H} weight; [1, inf) is
    mapped by tau = 1/s onto (0, 1] and integrated on geometric panels toward
    s = 0 until the contributions fall below ``rel_tail_tol``.
    """
    p = 1.0 - 2.0 * H
    n = spec.n_time_nodes

    def both(x: np.ndarray) -> np.ndarray:
        return np.asarray(g(x), dtype=float) + np.asarray(g(-x), dtype=float)

    xg, wg = gauss_legendre(n)
    xj, wj = gauss_jacobi(n, 0.0, p)
    # [0, 1]: Jacobi on [0, 1/8], Legendre on [1/8, 1] in eight pieces for
    # integrands with kinks at +-1 aligned to panel ends.
    first = 0.125
    y = 0.5 * first * (1.0 + xj)
    total = float(np.dot((0.5 * first) ** (p + 1.0) * wj, both(y)))
    br = np.linspace(first, 1.0, 8)
    for a, b in zip(br[:-1], br[1:]):
        y = 0.5 * (a + b) + 0.5 * (b - a) * xg
        total += float(np.dot(0.5 * (b - a) * wg * y**p, both(y)))
    # [1, inf) as s in (0, 1]: integrand g(1/s) s^{-p-2}.
    hi = 1.0
    quiet = 0
    used = 9 * n
    while True:
        lo = 0.5 * hi
        s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xg
        part = float(np.dot(0.5 * (hi - lo) * wg * s ** (-p - 2.0), both(1.0 / s)))
        total += part
        used += n
        if abs(part) <= spec.rel_tail_tol * max(abs(total), 1e-300):
            quiet += 1
            if quiet >= 3:
                break
        else:
            quiet = 0
        if used > MAX_NODES:
            raise TruncationFailure("tau integral did not reach its tail tolerance")
        hi = lo
    return total
