"""Random walks, densities, and particle currents in space-time i.i.d. environments."""

from .current import (
    gamma_pair,
    limit_cov,
    limit_cov_bm,
    quenched_current_mean,
    simulate_current,
)
from .density import density_at, density_window, harmonicity_residual
from .envmodel import (
    EnvField,
    EnvSpec,
    JumpLaw,
    env_moments,
    field_from_config,
    field_to_config,
    validate_assumptions,
)
from .kernels import (
    beta_fourier,
    beta_from_potential,
    cov_finite,
    cov_limit,
    cov_limit_from_potential,
    drift_and_variance,
    potential_kernel_fourier,
    potential_kernel_series,
)
from .particles import coupling_decay, invariance_check, quenched_profile_check
from .rng import Stream

__all__ = [
    "EnvField",
    "EnvSpec",
    "JumpLaw",
    "Stream",
    "beta_fourier",
    "beta_from_potential",
    "coupling_decay",
    "cov_finite",
    "cov_limit",
    "cov_limit_from_potential",
    "density_at",
    "density_window",
    "drift_and_variance",
    "env_moments",
    "field_from_config",
    "field_to_config",
    "gamma_pair",
    "harmonicity_residual",
    "invariance_check",
    "limit_cov",
    "limit_cov_bm",
    "potential_kernel_fourier",
    "potential_kernel_series",
    "quenched_current_mean",
    "quenched_profile_check",
    "simulate_current",
    "validate_assumptions",
]

__version__ = "0.1.0"
