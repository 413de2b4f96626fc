"""Sampling the field on space-time grids.

Two routes:

* :func:`oracle_sample` draws exact Gaussian vectors from an assembled
  covariance matrix (small grids only).
* :func:`spectral_samples` evaluates the harmonizable integral on a frequency
  lattice: independent complex normals on cells of the half space tau > 0,
  mirrored by Hermitian symmetry, so every realization is real by
  construction.

Randomness is counter based: a Philox stream keyed by (seed, component,
sample index) feeds the lattice modes in a fixed order, so outputs do not
depend on how samples are spread over workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .covariance import CovMatrix, GridSpec, variance
from .errors import RangeError, ShapeMismatch, TruncationTooSmall
from .model import FractionalSheet, Hybrid, Model, Riesz, White, beta_h, psi_radial, riesz_constant
from .quadrature import DEFAULT_SPEC, QuadratureSpec

__all__ = [
    "GridSpec",
    "FieldSample",
    "Truncation",
    "SpectralLattice",
    "oracle_sample",
    "spectral_sample",
    "spectral_samples",
    "empirical_cov",
    "coverage_tolerance",
]

COVERAGE_TOL = 1e-3
BATCH = 8


def coverage_tolerance() -> float:
    return COVERAGE_TOL


# Randomness


def _philox(seed: int, component: int, sample: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, ((component & 0xFFFFFFFF) << 32) | (sample & 0xFFFFFFFF)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _complex_normals(seed: int, component: int, sample: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard complex normals (E|z|^2 = 1), drawn in row-major mode order."""
    g = _philox(seed, component, sample).standard_normal(shape + (2,))
    return (g[..., 0] + 1j * g[..., 1]) * math.sqrt(0.5)


def _real_normals(seed: int, component: int, sample: int, size: int) -> np.ndarray:
    return _philox(seed, component, sample).standard_normal(size)


# Samples


@dataclass
class FieldSample:
    grid: GridSpec
    n_components: int
    values: np.ndarray
    seed: int
    method: dict
    model_hash: str
    sample_index: int = 0

    def __post_init__(self) -> None:
        shape = (self.n_components, self.grid.n_t, self.grid.n_space)
        if self.values.shape != shape:
            raise ShapeMismatch(f"values have shape {self.values.shape}, expected {shape}")
        if not np.all(np.isfinite(self.values)):
            raise RangeError("sample contains non-finite values")

    def header(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "n_components": self.n_components,
            "seed": self.seed,
            "sample_index": self.sample_index,
            "method": self.method,
            "model_hash": self.model_hash,
            "dtype": "<f8",
            "order": "component, time, space",
            "shape": list(self.values.shape),
        }

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    def save(self, stem: str) -> None:
        with open(stem + ".f64", "wb") as fh:
            fh.write(self.to_bytes())
        with open(stem + ".f64.json", "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def oracle_sample(cov: CovMatrix, n_components: int, n_samples: int, seed: int, grid: GridSpec | None = None) -> list[FieldSample]:
    """Exact Gaussian samples with covariance ``cov`` (after its recorded jitter)."""
    if n_components < 1 or n_samples < 1:
        raise RangeError("need at least one component and one sample")
    L = cov.factor
    if L is None:
        from .covariance import _factorize

        L, _ = _factorize(cov.entries)
    n = cov.size
    if grid is None:
        grid = _grid_from_points(cov)
    if grid.size != n:
        raise ShapeMismatch("grid does not match the covariance size")
    out = []
    for s in range(n_samples):
        vals = np.empty((n_components, n))
        for c in range(n_components):
            vals[c] = L @ _real_normals(seed, c, s, n)
        out.append(
            FieldSample(
                grid,
                n_components,
                vals.reshape(n_components, grid.n_t, grid.n_space),
                seed,
                {"kind": "CholeskyOracle", "jitter": cov.jitter},
                cov.model_hash,
                s,
            )
        )
    return out


def _grid_from_points(cov: CovMatrix) -> GridSpec:
    times = sorted({p.t for p in cov.points})
    d = len(cov.points[0].x)
    xs = sorted({p.x[0] for p in cov.points})
    M = max(abs(xs[0]), abs(xs[-1]))
    grid = GridSpec(times[0], times[-1], len(times), M, len(xs), d)
    if grid.size != cov.size:
        raise ShapeMismatch("covariance points do not form a tensor grid; pass grid explicitly")
    return grid


# Frequency lattice


@dataclass(frozen=True)
class Truncation:
    """Frequency lattice layout.

    tau: uniform cells of width ``tau_step`` on [0, tau_knee], then cells
    growing by ``growth`` up to ``tau_cut``. eta (per axis, both signs): the
    same layout with ``eta_step``, ``eta_knee``, ``eta_cut``.
    """

    tau_step: float
    tau_knee: float
    tau_cut: float
    eta_step: float
    eta_knee: float
    eta_cut: float
    growth: float = 1.05

    def __post_init__(self) -> None:
        for name in ("tau_step", "tau_knee", "tau_cut", "eta_step", "eta_knee", "eta_cut"):
            if not getattr(self, name) > 0.0:
                raise RangeError(f"{name} must be positive")
        if self.growth <= 1.0:
            raise RangeError("growth must exceed 1")

    @classmethod
    def default(cls, model: Model, grid: GridSpec) -> "Truncation":
        """Layout chosen from the tail majorants of the model.

        The tau tail of the variance decays like tau_cut^{-2 alpha2} and the eta
        tail like eta_cut^{-2 alpha1}; cuts are set where these majorants fall
        to 1e-4, and the knees where cells of fixed width stop being needed to
        resolve the grid's time and space extent.
        """
        T = model.T
        span = 2.0 * grid.M
        tau_step = math.pi / (8.0 * T)
        eta_step = math.pi / (2.0 * span)
        tau_cut = 10.0 * 1e4 ** (1.0 / (2.0 * model.alpha2))
        eta_cut = max(10.0 * 1e4 ** (1.0 / (2.0 * model.alpha1)), 2.0 * tau_cut ** (1.0 / model.order))
        return cls(tau_step, 400.0 * tau_step, tau_cut, eta_step, 64.0 * eta_step, eta_cut)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("tau_step", "tau_knee", "tau_cut", "eta_step", "eta_knee", "eta_cut", "growth")}


def _half_line_cells(step: float, knee: float, cut: float, growth: float) -> np.ndarray:
    n_uniform = max(1, int(round(knee / step)))
    edges = list(step * np.arange(n_uniform + 1))
    x = edges[-1]
    while x < cut:
        x = max(x * growth, x + step)
        edges.append(x)
    return np.array(edges)


def _axis_mass(edges: np.ndarray, exponent: float, c: float) -> np.ndarray:
    """Masses of c |u|^exponent on [edges[i], edges[i+1]]."""
    q = exponent + 1.0
    return c * (edges[1:] ** q - edges[:-1] ** q) / q


class SpectralLattice:
    """Modes (tau_j, eta_k) with amplitudes g_jk; tau_j > 0, eta over both signs."""

    def __init__(self, model: Model, grid: GridSpec, trunc: Truncation | None = None):
        self.model = model
        self.grid = grid
        self.trunc = trunc or Truncation.default(model, grid)
        tr = self.trunc
        H = model.hurst
        te = _half_line_cells(tr.tau_step, tr.tau_knee, tr.tau_cut, tr.growth)
        # One-point Gauss rule per cell for the weight tau^{1-2H}: the node is
        # the weighted centroid, exact for integrands linear across the cell.
        w_tau = _axis_mass(te, 1.0 - 2.0 * H, 1.0)
        self.tau = _axis_mass(te, 2.0 - 2.0 * H, 1.0) / w_tau
        ee = _half_line_cells(tr.eta_step, tr.eta_knee, tr.eta_cut, tr.growth)
        self.eta_nodes, mass, radius = self._eta_lattice(ee)
        self.lam = psi_radial(model.alpha, model.gamma, radius)
        self.mass = mass
        amp = np.sqrt(beta_h(H) * w_tau[:, None] * mass[None, :])
        self.g = amp / (self.lam[None, :] - 1j * self.tau[:, None])
        self.shape = self.g.shape

    def _eta_lattice(self, half_edges: np.ndarray):
        mid = 0.5 * (half_edges[1:] + half_edges[:-1])
        model = self.model
        noise = model.noise
        axis_nodes = np.concatenate([-mid[::-1], mid])
        if model.d == 1:
            exp, c = _line_density(noise)
            m_half = _axis_mass(half_edges, exp, c)
            mass = np.concatenate([m_half[::-1], m_half])
            return axis_nodes[:, None], mass, np.abs(axis_nodes)
        E1, E2 = np.meshgrid(axis_nodes, axis_nodes, indexing="ij")
        nodes = np.stack([E1.ravel(), E2.ravel()], axis=1)
        full_edges = np.concatenate([-half_edges[::-1], half_edges[1:]])
        mass = _plane_masses(model, full_edges).ravel()
        return nodes, mass, np.hypot(nodes[:, 0], nodes[:, 1])

    @property
    def n_modes(self) -> int:
        return self.g.size

    def time_factors(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """exp(-i tau t) with shape (n_t, n_tau) and exp(-t Psi) with shape (n_t, n_eta)."""
        times = np.asarray(times, dtype=float)
        return np.exp(-1j * times[:, None] * self.tau[None, :]), np.exp(-times[:, None] * self.lam[None, :])

    def space_factors(self, xs: np.ndarray) -> np.ndarray:
        """exp(i <eta, x>) with shape (n_eta, n_space)."""
        return np.exp(1j * self.eta_nodes @ np.atleast_2d(xs).T)

    def variance(self, times: np.ndarray) -> np.ndarray:
        """Lattice variance at each time (independent of x)."""
        Et, Dt = self.time_factors(times)
        g2 = np.abs(self.g) ** 2
        out = np.empty(len(times))
        for i in range(len(times)):
            A = Et[i][:, None] - Dt[i][None, :]
            out[i] = 2.0 * np.sum(g2 * np.abs(A) ** 2)
        return out

    def covariance(self, times: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Deterministic covariance of the lattice field on the grid times x xs, ordered [time][space]."""
        Et, Dt = self.time_factors(times)
        g2 = np.abs(self.g) ** 2
        F = self.space_factors(xs)
        nt, ns = len(times), F.shape[1]
        C = np.empty((nt, ns, nt, ns))
        for i in range(nt):
            Ai = Et[i][:, None] - Dt[i][None, :]
            for j in range(i, nt):
                Aj = Et[j][:, None] - Dt[j][None, :]
                s = np.sum(g2 * Ai * np.conj(Aj), axis=0)
                # E[v(t_i, x) v(t_j, y)] = 2 Re sum s_k exp(i eta_k (x - y))
                Fx = F * s[:, None]
                block = 2.0 * np.real(Fx.T @ np.conj(F))
                C[i, :, j, :] = block
                C[j, :, i, :] = block.T
        return C.reshape(nt * ns, nt * ns)

    def field(self, z: np.ndarray, Et: np.ndarray, Dt: np.ndarray, F: np.ndarray) -> np.ndarray:
        """Realization on times x space for complex normals z of the lattice shape."""
        y = self.g * z
        A = Et @ y - Dt * y.sum(axis=0)[None, :]
        return 2.0 * np.real(A @ F)


def _line_density(noise) -> tuple[float, float]:
    """(exponent e, constant c) with Upsilon(u) = c |u|^e in d=1."""
    if isinstance(noise, White):
        return 0.0, 1.0 / (2.0 * math.pi)
    if isinstance(noise, Riesz):
        return noise.beta - 1.0, riesz_constant(1, noise.beta)
    if isinstance(noise, FractionalSheet):
        (h,) = noise.hursts
        from .model import beta_h as bh

        return 1.0 - 2.0 * h, bh(h)
    if isinstance(noise, Hybrid):
        ((dim, kind),) = noise.groups
        return _line_density(kind)
    raise RangeError(f"unsupported noise {noise!r}")


def _plane_masses(model: Model, edges: np.ndarray) -> np.ndarray:
    """Cell masses of Upsilon on the tensor cells of ``edges`` x ``edges`` (d=2)."""
    prof = model.profile()
    if prof.shape == "product":
        e1, e2 = prof.exponents
        m1 = _signed_axis_mass(edges, e1)
        m2 = _signed_axis_mass(edges, e2)
        return prof.c * m1[:, None] * m2[None, :]
    # radial: c |eta|^{beta-2}; 4x4 Gauss per cell, exact polar formula at the origin cells
    beta = model.beta
    x, w = np.polynomial.legendre.leggauss(4)
    a, b = edges[:-1], edges[1:]
    nodes = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * x
    wts = 0.5 * (b - a)[:, None] * w
    R = np.hypot(nodes[:, None, :, None], nodes[None, :, None, :])
    vals = R ** (beta - 2.0) * wts[:, None, :, None] * wts[None, :, None, :]
    M = prof.c * vals.sum(axis=(2, 3))
    i0 = np.nonzero(a == 0.0)[0]
    if beta < 2.0 and i0.size:
        from scipy.integrate import quad

        side = b[i0[0]]
        # mass of the square [0, side]^2: 2 side^beta / beta int_0^{pi/4} cos^{-beta}
        ang = quad(lambda p: math.cos(p) ** (-beta), 0.0, math.pi / 4)[0]
        corner = prof.c * 2.0 * side**beta / beta * ang
        j = i0[0]
        for di in (j - 1, j):
            for dj in (j - 1, j):
                M[di, dj] = corner
    return M


def _signed_axis_mass(edges: np.ndarray, exponent: float) -> np.ndarray:
    q = exponent + 1.0
    a, b = edges[:-1], edges[1:]
    fa = np.sign(a) * np.abs(a) ** q / q
    fb = np.sign(b) * np.abs(b) ** q / q
    return fb - fa


def _check_coverage(lattice: SpectralLattice, model: Model, grid: GridSpec, spec: QuadratureSpec) -> dict:
    times = grid.times
    target = np.array([variance(model, t, spec) for t in times])
    got = lattice.variance(times)
    rel = np.abs(target - got) / target
    if np.max(rel) > COVERAGE_TOL:
        raise TruncationTooSmall(
            f"lattice variance misses the target by {np.max(rel):.2e} (relative) at t={times[np.argmax(rel)]:.4g}"
        )
    return {"max_rel_variance_gap": float(np.max(rel))}


def spectral_samples(
    model: Model,
    grid: GridSpec,
    n_samples: int,
    n_components: int = 1,
    seed: int = 0,
    trunc: Truncation | None = None,
    workers: int = 1,
    spec: QuadratureSpec = DEFAULT_SPEC,
    start: int = 0,
    lattice: SpectralLattice | None = None,
) -> list[FieldSample]:
    """Independent realizations through the harmonizable lattice sum.

    Sample s of component c uses the Philox stream keyed by (seed, c, start + s).
    """
    if grid.d != model.d:
        raise ShapeMismatch("grid and model dimensions differ")
    if n_samples < 1 or n_components < 1:
        raise RangeError("need at least one sample and one component")
    lat = lattice or SpectralLattice(model, grid, trunc)
    cert = _check_coverage(lat, model, grid, spec)
    Et, Dt = lat.time_factors(grid.times)
    F = lat.space_factors(grid.space_points)
    method = {"kind": "Spectral", "truncation": lat.trunc.to_dict(), "n_modes": lat.n_modes, **cert}
    mhash = model.model_hash()

    def one(s: int) -> FieldSample:
        vals = np.empty((n_components, grid.n_t, grid.n_space))
        for c in range(n_components):
            z = _complex_normals(seed, c, start + s, lat.shape)
            vals[c] = lat.field(z, Et, Dt, F)
        return FieldSample(grid, n_components, vals, seed, method, mhash, start + s)

    batches = [range(i, min(i + BATCH, n_samples)) for i in range(0, n_samples, BATCH)]

    def run(batch: range) -> list[FieldSample]:
        return [one(s) for s in batch]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    return [fs for part in parts for fs in part]


def spectral_sample(
    model: Model,
    grid: GridSpec,
    trunc: Truncation | None = None,
    n_components: int = 1,
    seed: int = 0,
    spec: QuadratureSpec = DEFAULT_SPEC,
) -> FieldSample:
    return spectral_samples(model, grid, 1, n_components, seed, trunc, 1, spec)[0]


def empirical_cov(samples: Sequence[FieldSample]) -> np.ndarray:
    """Unbiased sample covariance of the flattened grid, averaged over components."""
    if len(samples) < 2:
        raise ShapeMismatch("need at least two samples")
    shape = samples[0].values.shape
    if any(s.values.shape != shape for s in samples):
        raise ShapeMismatch("samples live on different grids")
    X = np.stack([s.values.reshape(shape[0], -1) for s in samples], axis=1)  # comp, sample, point
    out = np.zeros((X.shape[2], X.shape[2]))
    for c in range(X.shape[0]):
        Y = X[c] - X[c].mean(axis=0)
        out += Y.T @ Y / (X.shape[1] - 1)
    return out / X.shape[0]
