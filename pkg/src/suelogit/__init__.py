"""Logit stochastic user equilibrium and least-squares estimation of route
choice utility coefficients from link traffic counts."""

from .equilibrium import (
    Coefficients,
    EquilibriumOptions,
    EquilibriumState,
    NonConvergenceWarning,
    solve_sue_logit,
    stochastic_network_loading,
)
from .estimation import (
    EstimationOptions,
    EstimationResult,
    FrozenTimesModel,
    NonIdentifiabilityWarning,
    ObservedCounts,
    bilevel_optimization,
    scan_objective,
)
from .inference import InferenceReport, infer
from .io import InputError, read_counts, read_demand, read_network
from .network import Link, Network, NetworkError, ODDemand, PathSet, build_incidence
from .paths import enumerate_paths, initial_path_set, k_shortest_paths
from .synthetic import (
    DGPConfig,
    MonteCarloConfig,
    builtin_network,
    generate_counts,
    run_monte_carlo,
    two_link_network,
)

__version__ = "0.1.0"

__all__ = [
    "Coefficients", "EquilibriumOptions", "EquilibriumState", "NonConvergenceWarning", "solve_sue_logit",
    "stochastic_network_loading", "EstimationOptions", "EstimationResult", "FrozenTimesModel",
    "NonIdentifiabilityWarning", "ObservedCounts", "bilevel_optimization", "scan_objective",
    "InferenceReport", "infer", "InputError", "read_counts", "read_demand", "read_network", "Link", "Network",
    "NetworkError", "ODDemand", "PathSet", "build_incidence", "enumerate_paths", "initial_path_set",
    "k_shortest_paths", "DGPConfig", "MonteCarloConfig", "builtin_network", "generate_counts",
    "run_monte_carlo", "two_link_network", "__version__",
]
