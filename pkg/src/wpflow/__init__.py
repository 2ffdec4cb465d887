"""Particle approximation of Wasserstein-p gradient flows of internal energies in one dimension."""

from .energy import EnergyModel, FlowParams, custom_model, power_law_model, validate_hypotheses
from .errors import (
    CertificateError,
    ConfigError,
    DegenerateConfigurationError,
    LambdaError,
    ModelError,
    OutOfRangeError,
    QuadratureError,
    StabilityError,
    StiffnessError,
    ToleranceNotMetError,
    WpflowError,
)
from .fv import FvGrid, barenblatt, fv_solve, fv_step
from .integrator import IntegratorSpec, Trajectory, explicit_step, minimizing_movement_step, run
from .particles import (
    DomainSpec,
    ParticleConfig,
    discrete_energy,
    discrete_slope,
    minimal_selection,
    subgradient_element,
    weighted_norm,
)
from .transport import (
    DensityProfile,
    cosine_bump,
    fisher_information,
    interpolant,
    recovery_sequence,
    uniform_density,
    wasserstein_p,
)


__all__ = [
    "EnergyModel",
    "FlowParams",
    "custom_model",
    "power_law_model",
    "validate_hypotheses",
    "CertificateError",
    "ConfigError",
    "DegenerateConfigurationError",
    "LambdaError",
    "ModelError",
    "OutOfRangeError",
    "QuadratureError",
    "StabilityError",
    "StiffnessError",
    "ToleranceNotMetError",
    "WpflowError",
    "FvGrid",
    "barenblatt",
    "fv_solve",
    "fv_step",
    "IntegratorSpec",
    "Trajectory",
    "explicit_step",
    "minimizing_movement_step",
    "run",
    "DomainSpec",
    "ParticleConfig",
    "discrete_energy",
    "discrete_slope",
    "minimal_selection",
    "subgradient_element",
    "weighted_norm",
    "DensityProfile",
    "cosine_bump",
    "fisher_information",
    "interpolant",
    "recovery_sequence",
    "uniform_density",
    "wasserstein_p",
]

__version__ = "0.1.0"
