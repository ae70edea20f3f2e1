"""Debiased inference for high-dimensional linear regression.

A lasso fit is bias-corrected with a diagonally scaled approximate inverse of
the design (Moore-Penrose, random least squares or ridge), which yields
closed-form standard errors and confidence intervals when ``p > n``.
"""

__version__ = "0.1.0"

from .approx_inverse import (
    ApproximateInverse,
    Method,
    OmegaDiagonal,
    build_inverse,
    mpi_inverse,
    omega_diagonal,
    recommended_gamma,
    recommended_k,
    ridge_inverse,
    rls_inverse_ensemble,
    rls_inverse_spectral,
)
from .estimators import DebiasedRegression
from .exceptions import ConfigError, DataError, HDInferError, NumericalError
from .inference import (
    DebiasedFit,
    bias_diagnostic,
    confidence_intervals,
    debias,
    max_offdiag,
    partial_out,
    significant_set,
)
from .lasso import cv_lasso, lasso_fit, lasso_path, noise_level
from .linalg import RngStream
from .simulation import SimulationConfig, run_experiment

__all__ = [
    "ApproximateInverse", "ConfigError", "DataError", "DebiasedFit", "DebiasedRegression",
    "HDInferError", "Method", "NumericalError", "OmegaDiagonal", "RngStream",
    "SimulationConfig", "bias_diagnostic", "build_inverse", "confidence_intervals",
    "cv_lasso", "debias", "lasso_fit", "lasso_path", "max_offdiag", "mpi_inverse",
    "noise_level", "omega_diagonal", "partial_out", "recommended_gamma", "recommended_k",
    "ridge_inverse", "rls_inverse_ensemble", "rls_inverse_spectral", "run_experiment",
    "significant_set",
]
