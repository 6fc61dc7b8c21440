"""Fair survey design under per-group confidence constraints with DP counts."""

from .population import (
    CountMatrix,
    GroupSpec,
    PopulationFrame,
    SyntheticSpec,
    count_matrix,
    generate_synthetic,
    group_stats,
    load_microdata,
)
from .privacy import NO_PRIVACY, PrivacyParams, aggregate_bias, bias_closed_form, privatize_counts
from .proxy import fit_inverse_curve, measure_variance, required_samples
from .allocator import (
    Allocation,
    DesignInstance,
    InfeasibleDesignError,
    brute_force_two_phase,
    heuristic_allocation,
    optimize_phase1,
    optimize_two_phase,
    standard_allocation,
)
from .simulator import replicate, run_survey
from .metrics import fairness_report, fairness_xi

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "CountMatrix",
    "DesignInstance",
    "GroupSpec",
    "InfeasibleDesignError",
    "NO_PRIVACY",
    "PopulationFrame",
    "PrivacyParams",
    "SyntheticSpec",
    "aggregate_bias",
    "bias_closed_form",
    "brute_force_two_phase",
    "count_matrix",
    "fairness_report",
    "fairness_xi",
    "fit_inverse_curve",
    "generate_synthetic",
    "group_stats",
    "heuristic_allocation",
    "load_microdata",
    "measure_variance",
    "optimize_phase1",
    "optimize_two_phase",
    "privatize_counts",
    "replicate",
    "required_samples",
    "run_survey",
    "standard_allocation",
]
