"""Spectral Galerkin simulation and ergodicity audits for the stochastic
generalized Burgers-Huxley equation on (0, 1) with Dirichlet boundaries."""

from .model import ModelParams, ParameterError, RegimeReport, cramer_constant, lambda0_max, validate_params
from .spectral import GridField, SpectralBasis, SpectralField, eigenvalue
from .noise import NoiseSpec, power_law_noise, validate_noise
from .integrator import DivergenceError, SolverConfig, Trajectory, run_ensemble, run_trajectory

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "ParameterError",
    "RegimeReport",
    "cramer_constant",
    "lambda0_max",
    "validate_params",
    "GridField",
    "SpectralBasis",
    "SpectralField",
    "eigenvalue",
    "NoiseSpec",
    "power_law_noise",
    "validate_noise",
    "DivergenceError",
    "SolverConfig",
    "Trajectory",
    "run_ensemble",
    "run_trajectory",
]
