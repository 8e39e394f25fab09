"""Federated Langevin samplers (FALD, VR-FALD*) with exact Gaussian analytics."""

from .analytics import (
    BudgetProblem,
    GaussianLaw,
    TwoClientGaussianSpec,
    budget_optimize,
    fald_two_step_stationary,
    gaussian_product_posterior,
    heterogeneity_lower_bound,
    reference_step_size,
    w2_gaussian,
)
from .errors import (
    ConfigError,
    DivergenceError,
    InfeasibleBudgetError,
    InputError,
    NumericalError,
    TraceParseError,
)
from .federation import SampleTrace, SamplerConfig, Seeds, run, run_chains, run_ula
from .metrics import empirical_w2_1d, gaussian_fit_w2, hpd_threshold, moments, variance_mse
from .potentials import (
    GaussianPotential,
    LogisticPotential,
    PotentialSet,
    constants,
    generate_gaussian_set,
    heterogeneity,
    load_potential_set,
    minimizer,
)
from .samplers import LocalGradientRule

__version__ = "0.1.0"

__all__ = [
    "BudgetProblem",
    "ConfigError",
    "DivergenceError",
    "GaussianLaw",
    "GaussianPotential",
    "InfeasibleBudgetError",
    "InputError",
    "LocalGradientRule",
    "LogisticPotential",
    "NumericalError",
    "PotentialSet",
    "SampleTrace",
    "SamplerConfig",
    "Seeds",
    "TraceParseError",
    "TwoClientGaussianSpec",
    "budget_optimize",
    "constants",
    "empirical_w2_1d",
    "fald_two_step_stationary",
    "gaussian_fit_w2",
    "gaussian_product_posterior",
    "generate_gaussian_set",
    "heterogeneity",
    "heterogeneity_lower_bound",
    "hpd_threshold",
    "load_potential_set",
    "minimizer",
    "moments",
    "reference_step_size",
    "run",
    "run_chains",
    "run_ula",
    "variance_mse",
    "w2_gaussian",
]
