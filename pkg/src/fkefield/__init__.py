"""Numerics for fractional kinetic equations driven by time-fractional Gaussian noise.

Modules: :mod:`model` (parameters, exponents, gauges), :mod:`quadrature`
(singular time kernels and spectral rules), :mod:`covariance`,
:mod:`green`, :mod:`sampler`, :mod:`regularity`, :mod:`hitting` and the
command-line driver :mod:`cli`.
"""

from .covariance import (
    BandSpec,
    CovMatrix,
    GridSpec,
    SpaceTimePoint,
    band_increment_norm,
    correlation,
    cov_matrix,
    cross_cov_freq,
    cross_cov_time,
    increment_norm,
    variance,
    variance_bounds,
)
from .errors import FkeError, NumericalError, ValidationError
from .green import GaussianBump, TabulatedL1, Zero, drift, green_eval, green_mass
from .hitting import Ball, Box, Point, capacity_estimate, hausdorff_upper, hit_probability_mc, polarity_experiment
from .model import FractionalSheet, Gauge, Hybrid, Model, Riesz, White, psi, spectral_density, validate
from .quadrature import QuadratureSpec, fbm_double_integral, gamma_identity, kernel_freq, kernel_time
from .regularity import detect_log_factor, fit_exponent, metric_ratios, structure_function
from .sampler import FieldSample, Truncation, oracle_sample, spectral_samples

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "BandSpec",
    "Box",
    "CovMatrix",
    "FieldSample",
    "FkeError",
    "FractionalSheet",
    "Gauge",
    "GaussianBump",
    "GridSpec",
    "Hybrid",
    "Model",
    "NumericalError",
    "Point",
    "QuadratureSpec",
    "Riesz",
    "SpaceTimePoint",
    "TabulatedL1",
    "Truncation",
    "ValidationError",
    "White",
    "Zero",
    "band_increment_norm",
    "capacity_estimate",
    "correlation",
    "cov_matrix",
    "cross_cov_freq",
    "cross_cov_time",
    "detect_log_factor",
    "drift",
    "fbm_double_integral",
    "fit_exponent",
    "gamma_identity",
    "green_eval",
    "green_mass",
    "hausdorff_upper",
    "hit_probability_mc",
    "increment_norm",
    "kernel_freq",
    "kernel_time",
    "metric_ratios",
    "oracle_sample",
    "polarity_experiment",
    "psi",
    "spectral_density",
    "spectral_samples",
    "structure_function",
    "validate",
    "variance",
    "variance_bounds",
]
