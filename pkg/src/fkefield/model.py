"""Model parameters, derived exponents, spectral densities and gauge functions."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import beta as beta_fn

from .errors import DomainError, RangeError, SingularAtOrigin, WellPosednessViolation

__all__ = [
    "White",
    "Riesz",
    "FractionalSheet",
    "Hybrid",
    "OperatorParams",
    "Model",
    "SpectralProfile",
    "Limit",
    "Gauge",
    "validate",
    "psi",
    "spectral_density",
    "noise_beta",
    "alpha_h",
    "beta_h",
    "riesz_constant",
    "gauge_eval",
    "gauge_invert",
]


# Noise kinds


@dataclass(frozen=True)
class White:
    """Space-time white noise in space: Lebesgue spectral measure."""


@dataclass(frozen=True)
class Riesz:
    """Riesz kernel |x|^{-beta} in space."""

    beta: float


@dataclass(frozen=True)
class FractionalSheet:
    """Fractional Brownian sheet covariance with one Hurst index per axis."""

    hursts: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "hursts", tuple(float(h) for h in self.hursts))


@dataclass(frozen=True)
class Hybrid:
    """Product of group densities on disjoint coordinate blocks.

    ``groups`` is a sequence of ``(dim, kind)`` with ``kind`` one of the
    non-hybrid noise kinds.
    """

    groups: tuple[tuple[int, "NoiseKind"], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple((int(g), k) for g, k in self.groups))


NoiseKind = Union[White, Riesz, FractionalSheet, Hybrid]


def alpha_h(H: float) -> float:
    """alpha_H = H(2H-1), the weight of |r-w|^{2H-2}."""
    return H * (2.0 * H - 1.0)


def beta_h(H: float) -> float:
    """Constant of the spectral form of the |r-w|^{2H-2} inner product."""
    return (
        alpha_h(H)
        * math.gamma(H - 0.5)
        / (4.0 ** (1.0 - H) * math.sqrt(math.pi) * math.gamma(1.0 - H))
    )


def riesz_constant(d: int, beta: float) -> float:
    """C_{d,beta} such that the Riesz kernel has density C|xi|^{beta-d}."""
    return (
        math.pi ** (-d / 2.0)
        * 2.0 ** (-beta)
        * math.gamma((d - beta) / 2.0)
        / math.gamma(beta / 2.0)
    )


def _check_kind(kind: NoiseKind, dim: int, *, nested: bool = False) -> None:
    if isinstance(kind, White):
        return
    if isinstance(kind, Riesz):
        if not 0.0 < kind.beta < dim:
            raise RangeError(f"Riesz beta must lie in (0, {dim}), got {kind.beta}")
        return
    if isinstance(kind, FractionalSheet):
        if len(kind.hursts) != dim:
            raise RangeError(
                f"FractionalSheet needs {dim} Hurst indices, got {len(kind.hursts)}"
            )
        for h in kind.hursts:
            if not 0.5 < h < 1.0:
                raise RangeError(f"sheet Hurst indices must lie in (1/2, 1), got {h}")
        return
    if isinstance(kind, Hybrid):
        if nested:
            raise RangeError("Hybrid groups cannot themselves be Hybrid")
        if not kind.groups:
            raise RangeError("Hybrid noise needs at least one group")
        total = 0
        for gdim, gkind in kind.groups:
            if gdim < 1:
                raise RangeError(f"group dimension must be positive, got {gdim}")
            _check_kind(gkind, gdim, nested=True)
            total += gdim
        if total != dim:
            raise RangeError(f"Hybrid group dimensions sum to {total}, expected {dim}")
        return
    raise RangeError(f"unknown noise kind {kind!r}")


def noise_beta(noise: NoiseKind, d: int) -> float:
    """Scaling exponent beta of the spectral density."""
    if isinstance(noise, White):
        return float(d)
    if isinstance(noise, Riesz):
        return float(noise.beta)
    if isinstance(noise, FractionalSheet):
        return 2.0 * d - 2.0 * sum(noise.hursts)
    if isinstance(noise, Hybrid):
        return float(sum(noise_beta(k, g) for g, k in noise.groups))
    raise RangeError(f"unknown noise kind {noise!r}")


def _density(kind: NoiseKind, xi: np.ndarray) -> np.ndarray:
    """Density of a non-hybrid kind on the last axis of ``xi``."""
    dim = xi.shape[-1]
    if isinstance(kind, White):
        return np.full(xi.shape[:-1], (2.0 * math.pi) ** (-dim))
    if isinstance(kind, Riesz):
        r = np.sqrt(np.sum(xi * xi, axis=-1))
        with np.errstate(divide="ignore"):
            return riesz_constant(dim, kind.beta) * r ** (kind.beta - dim)
    if isinstance(kind, FractionalSheet):
        out = np.ones(xi.shape[:-1])
        with np.errstate(divide="ignore"):
            for i, h in enumerate(kind.hursts):
                out = out * beta_h(h) * np.abs(xi[..., i]) ** (1.0 - 2.0 * h)
        return out
    if isinstance(kind, Hybrid):
        out = np.ones(xi.shape[:-1])
        start = 0
        for gdim, gkind in kind.groups:
            out = out * _density(gkind, xi[..., start : start + gdim])
            start += gdim
        return out
    raise RangeError(f"unknown noise kind {kind!r}")


def _group_unit_constant(kind: NoiseKind) -> float:
    """Density of a one-dimensional group at |xi| = 1."""
    return float(_density(kind, np.ones((1, 1)))[0])


def _group_axis_exponent(kind: NoiseKind) -> float:
    """Power of |xi| for a one-dimensional group."""
    return noise_beta(kind, 1) - 1.0


@dataclass(frozen=True)
class SpectralProfile:
    """Angular structure of the spectral density.

    ``shape`` is ``"line"`` (d=1, density c|xi|^{beta-1}), ``"radial"`` (d=2,
    density c|xi|^{beta-2}) or ``"product"`` (d=2, density
    c|xi_1|^{e1}|xi_2|^{e2}).
    """

    shape: str
    c: float
    exponents: tuple[float, ...] = ()


@dataclass(frozen=True)
class OperatorParams:
    """Orders of the Bessel and Riesz factors of the spatial operator."""

    alpha: float
    gamma: float


@dataclass(frozen=True)
class Model:
    """Validated parameter set plus derived exponents.

    Build through :func:`validate`; direct construction skips the checks.
    """

    d: int
    op: OperatorParams
    hurst: float
    noise: NoiseKind
    T: float = 1.0
    t0: float = 0.1
    M: float = 2.0
    beta: float = field(init=False)
    alpha1: float = field(init=False)
    alpha2: float = field(init=False)
    Q: float = field(init=False)
    gamma1: float = field(init=False)
    gamma2: float = field(init=False)

    def __post_init__(self) -> None:
        b = noise_beta(self.noise, self.d)
        order = self.op.alpha + self.op.gamma
        a1 = order * self.hurst - b / 2.0
        # Snap exact rational cases such as 1.5*0.75 - 0.5 to their exact value.
        if abs(a1 - round(a1, 12)) < 1e-13:
            a1 = round(a1, 12)
        a2 = a1 / order if a1 > 0 else float("nan")
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "alpha1", a1)
        object.__setattr__(self, "alpha2", a2)
        if a1 > 0:
            object.__setattr__(self, "Q", 1.0 / a2 + self.d / min(a1, 1.0))
            object.__setattr__(self, "gamma1", 1.0 / a1 - 1.0)
            object.__setattr__(self, "gamma2", 1.0 / a2 - 1.0)
        else:
            for name in ("Q", "gamma1", "gamma2"):
                object.__setattr__(self, name, float("nan"))

    @property
    def alpha(self) -> float:
        return self.op.alpha

    @property
    def gamma(self) -> float:
        return self.op.gamma

    @property
    def order(self) -> float:
        """alpha + gamma, the growth order of psi at infinity."""
        return self.op.alpha + self.op.gamma

    @property
    def log_case(self) -> bool:
        """True when alpha1 = 1 and the spatial gauge carries a log factor."""
        return abs(self.alpha1 - 1.0) < 1e-12

    def profile(self) -> SpectralProfile:
        noise, d = self.noise, self.d
        if d == 1:
            c = float(_density(noise, np.ones((1, 1)))[0])
            return SpectralProfile("line", c, (self.beta - 1.0,))
        if isinstance(noise, (White, Riesz)):
            c = float(_density(noise, np.array([[1.0, 0.0]]))[0])
            return SpectralProfile("radial", c)
        if isinstance(noise, Hybrid) and len(noise.groups) == 1:
            inner = Model(d, self.op, self.hurst, noise.groups[0][1], self.T, self.t0, self.M)
            return inner.profile()
        if isinstance(noise, FractionalSheet):
            c = math.prod(beta_h(h) for h in noise.hursts)
            return SpectralProfile("product", c, tuple(1.0 - 2.0 * h for h in noise.hursts))
        if isinstance(noise, Hybrid):
            kinds = [k for _, k in noise.groups]
            c = math.prod(_group_unit_constant(k) for k in kinds)
            return SpectralProfile("product", c, tuple(_group_axis_exponent(k) for k in kinds))
        raise RangeError(f"no spectral profile for {noise!r}")

    def sphere_mass(self) -> float:
        """Integral of the spectral density over the unit sphere."""
        p = self.profile()
        if p.shape == "line":
            return 2.0 * p.c
        if p.shape == "radial":
            return 2.0 * math.pi * p.c
        e1, e2 = p.exponents
        return 2.0 * p.c * float(beta_fn((e1 + 1.0) / 2.0, (e2 + 1.0) / 2.0))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "alpha": self.op.alpha,
            "gamma": self.op.gamma,
            "hurst": self.hurst,
            "noise": noise_to_dict(self.noise),
            "T": self.T,
            "t0": self.t0,
            "M": self.M,
        }

    def derived(self) -> dict:
        return {
            "beta": self.beta,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "Q": self.Q,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
        }

    def model_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def noise_to_dict(noise: NoiseKind) -> dict:
    if isinstance(noise, White):
        return {"kind": "white"}
    if isinstance(noise, Riesz):
        return {"kind": "riesz", "beta": noise.beta}
    if isinstance(noise, FractionalSheet):
        return {"kind": "sheet", "hursts": list(noise.hursts)}
    if isinstance(noise, Hybrid):
        return {
            "kind": "hybrid",
            "groups": [{"dim": g, **noise_to_dict(k)} for g, k in noise.groups],
        }
    raise RangeError(f"unknown noise kind {noise!r}")


def noise_from_dict(raw: dict) -> NoiseKind:
    raw = dict(raw)
    kind = raw.pop("kind", None)
    allowed = {"white": set(), "riesz": {"beta"}, "sheet": {"hursts"}, "hybrid": {"groups"}}
    if kind not in allowed:
        raise RangeError(f"unknown noise kind {kind!r}")
    extra = set(raw) - allowed[kind]
    if extra:
        raise RangeError(f"unknown keys for {kind} noise: {sorted(extra)}")
    missing = allowed[kind] - set(raw)
    if missing:
        raise RangeError(f"missing keys for {kind} noise: {sorted(missing)}")
    if kind == "white":
        return White()
    if kind == "riesz":
        return Riesz(float(raw["beta"]))
    if kind == "sheet":
        return FractionalSheet(tuple(raw["hursts"]))
    groups = []
    for g in raw["groups"]:
        g = dict(g)
        dim = g.pop("dim", None)
        if dim is None:
            raise RangeError("hybrid group needs a 'dim' key")
        groups.append((int(dim), noise_from_dict(g)))
    return Hybrid(tuple(groups))


def validate(
    d: int,
    alpha: float,
    gamma: float,
    hurst: float,
    noise: NoiseKind | dict,
    T: float = 1.0,
    t0: float = 0.1,
    M: float = 2.0,
) -> Model:
    """Check a raw parameter set and return the populated :class:`Model`.

    The well-posedness condition is tested before the dimension restriction,
    so an ill-posed configuration is reported as such in any dimension.
    """
    if isinstance(noise, dict):
        noise = noise_from_dict(noise)
    d = int(d)
    alpha, gamma, hurst = float(alpha), float(gamma), float(hurst)
    T, t0, M = float(T), float(t0), float(M)
    if d < 1:
        raise RangeError(f"d must be a positive integer, got {d}")
    if not 0.5 < hurst < 1.0:
        raise RangeError(f"H must lie in (1/2, 1), got {hurst}")
    if not gamma > 0.0:
        raise RangeError(f"gamma must be positive, got {gamma}")
    if not alpha >= 0.0:
        raise RangeError(f"alpha must be nonnegative, got {alpha}")
    if not T > 0.0:
        raise RangeError(f"T must be positive, got {T}")
    if not 0.0 < t0 < T:
        raise RangeError(f"t0 must lie in (0, T), got t0={t0}, T={T}")
    if not M > 1.0:
        raise RangeError(f"M must exceed 1, got {M}")
    _check_kind(noise, d)
    b = noise_beta(noise, d)
    bound = 2.0 * (alpha + gamma) * hurst
    if b >= bound:
        raise WellPosednessViolation(
            f"well-posedness requires beta < 2(alpha+gamma)H, got beta={b} >= {bound}"
        )
    if d not in (1, 2):
        raise RangeError(f"only d in {{1, 2}} is supported, got {d}")
    return Model(d, OperatorParams(alpha, gamma), hurst, noise, T, t0, M)


def psi(model: Model, xi) -> np.ndarray:
    """Symbol |xi|^gamma (1+|xi|^2)^{alpha/2}.

    ``xi`` is either a frequency vector (last axis of length d) or, for d=1
    and for radial use, an array of norms.
    """
    r = _norm(model, xi)
    return psi_radial(model.op.alpha, model.op.gamma, r)


def psi_radial(alpha: float, gamma: float, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return r**gamma * (1.0 + r * r) ** (alpha / 2.0)


def _norm(model: Model, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if model.d == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        return np.abs(xi)
    if xi.shape[-1] != model.d:
        raise DomainError(f"frequency vectors must have length {model.d}")
    return np.sqrt(np.sum(xi * xi, axis=-1))


def spectral_density(model: Model, xi) -> np.ndarray:
    """Upsilon(xi). Diverges (returns inf) on sheet axes; raises at the origin."""
    xi = np.asarray(xi, dtype=float)
    if model.d == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        xi = xi[..., None]
    if xi.shape[-1] != model.d:
        raise DomainError(f"frequency vectors must have length {model.d}")
    at_origin = np.all(xi == 0.0, axis=-1)
    if np.any(at_origin) and model.beta < model.d:
        raise SingularAtOrigin("spectral density diverges at xi = 0")
    return _density(model.noise, xi)


# Gauges


@dataclass(frozen=True)
class Limit:
    """Symbolic value of a gauge at the origin: zero, finite(value) or infinite."""

    kind: str
    value: float = 0.0

    @staticmethod
    def zero() -> "Limit":
        return Limit("zero", 0.0)

    @staticmethod
    def finite(v: float) -> "Limit":
        return Limit("finite", float(v))

    @staticmethod
    def infinite() -> "Limit":
        return Limit("infinite", math.inf)

    @property
    def is_infinite(self) -> bool:
        return self.kind == "infinite"

    def reciprocal(self) -> "Limit":
        if self.kind == "zero":
            return Limit.infinite()
        if self.kind == "infinite":
            return Limit.zero()
        return Limit.finite(1.0 / self.value)


_BISECT_LO = 1e-300
_BISECT_ITERS = 200
_BISECT_TOL = 1e-14


@dataclass(frozen=True)
class Gauge:
    """Metric gauges q1, q2, rho and hitting gauges g_q, frak_g for n components."""

    d: int
    M: float
    alpha1: float
    alpha2: float
    n: int = 1

    @staticmethod
    def from_model(model: Model, n: int = 1) -> "Gauge":
        return Gauge(model.d, model.M, model.alpha1, model.alpha2, int(n))

    @property
    def C_dM(self) -> float:
        return 2.0 * math.e * math.sqrt(self.d) * self.M

    @property
    def tau_max(self) -> float:
        return 2.0 * math.sqrt(self.d) * self.M

    @property
    def log_case(self) -> bool:
        return abs(self.alpha1 - 1.0) < 1e-12

    @property
    def space_exponent(self) -> float:
        return min(self.alpha1, 1.0)

    @property
    def Q(self) -> float:
        return 1.0 / self.alpha2 + self.d / self.space_exponent

    def q1(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0) or np.any(tau > self.tau_max * (1 + 1e-15)):
            raise DomainError(f"q1 is defined on [0, {self.tau_max}]")
        p = self.space_exponent
        if not self.log_case:
            return tau**p
        with np.errstate(divide="ignore", invalid="ignore"):
            out = tau * np.sqrt(np.log(self.C_dM / tau))
        return np.where(tau > 0, out, 0.0)

    def q2(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0):
            raise DomainError("q2 is defined on [0, inf)")
        return tau**self.alpha2

    def rho(self, p1, p2) -> float:
        """Gauge distance between space-time points ``(t, x)``."""
        (t, x), (s, y) = p1, p2
        dx = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        return float(self.q1(float(np.linalg.norm(dx))) + self.q2(abs(t - s)))

    def q1_max(self) -> float:
        return float(self.q1(self.tau_max))

    def q1_inv(self, v):
        v = np.asarray(v, dtype=float)
        top = self.q1_max()
        if np.any(v < 0) or np.any(v > top * (1 + 1e-12)):
            raise RangeError(f"q1 inverse is defined on [0, {top}]")
        if not self.log_case:
            return v ** (1.0 / self.space_exponent)
        return self._bisect_q1(v)

    def _bisect_q1(self, v: np.ndarray) -> np.ndarray:
        # Monotone bisection in log(tau); q1 spans hundreds of decades.
        flat = np.atleast_1d(v).astype(float).ravel()
        out = np.zeros_like(flat)
        pos = flat > 0
        target = flat[pos]
        lo = np.full(target.shape, math.log(_BISECT_LO))
        hi = np.full(target.shape, math.log(self.tau_max))
        log_c = math.log(self.C_dM)
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            val = np.exp(mid) * np.sqrt(log_c - mid)
            below = val < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= _BISECT_TOL * np.maximum(1.0, np.abs(lo))):
                break
        out[pos] = np.exp(0.5 * (lo + hi))
        return out.reshape(np.shape(v))

    def q2_inv(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v < 0):
            raise RangeError("q2 inverse is defined on [0, inf)")
        return v ** (1.0 / self.alpha2)

    def g_q(self, tau):
        """tau^n q1_inv(tau)^{-d} q2_inv(tau)^{-1} for tau > 0."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau <= 0):
            raise DomainError("g_q takes positive arguments; use g_q_at_zero")
        if not self.log_case:
            return tau ** (self.n - self.Q)
        return tau**self.n * self.q1_inv(tau) ** (-self.d) * self.q2_inv(tau) ** (-1.0)

    def g_q_at_zero(self) -> Limit:
        e = self.n - self.Q
        if e > 1e-12:
            return Limit.zero()
        if e < -1e-12:
            return Limit.infinite()
        # n = Q: the pure power is identically 1; a log factor makes it blow up.
        return Limit.infinite() if self.log_case else Limit.finite(1.0)

    def frak_g(self, z):
        """1 / g_q(|z|) for a nonzero vector or array of norms."""
        r = np.asarray(z, dtype=float)
        if r.ndim >= 1 and r.shape[-1] == self.n and self.n > 1:
            r = np.sqrt(np.sum(r * r, axis=-1))
        return 1.0 / self.g_q(np.abs(r))

    def frak_g_at_zero(self) -> Limit:
        return self.g_q_at_zero().reciprocal()


def gauge_eval(gauge: Gauge, which: str, argument):
    """Evaluate one of q1, q2, rho, g_q, frak_g; g_q and frak_g at 0 give a Limit."""
    if which == "q1":
        return gauge.q1(argument)
    if which == "q2":
        return gauge.q2(argument)
    if which == "rho":
        return gauge.rho(*argument)
    if which == "g_q":
        if np.ndim(argument) == 0 and float(argument) == 0.0:
            return gauge.g_q_at_zero()
        return gauge.g_q(argument)
    if which == "frak_g":
        if np.all(np.asarray(argument, dtype=float) == 0.0):
            return gauge.frak_g_at_zero()
        return gauge.frak_g(argument)
    raise DomainError(f"unknown gauge function {which!r}")


def gauge_invert(gauge: Gauge, which: str, value):
    if which == "q1":
        return gauge.q1_inv(value)
    if which == "q2":
        return gauge.q2_inv(value)
    raise DomainError(f"no inverse for {which!r}")
