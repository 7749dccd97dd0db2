"""Randomization-based decomposition of treatment effect variation.

Estimators, bounds, sensitivity analyses, and tests for systematic vs
idiosyncratic treatment effect variation in completely randomized
experiments, with and without noncompliance.
"""

from .compliance import (
    ComplianceSummary,
    ComplierRIEffects,
    LateDecomposition,
    LateEstimate,
    StepDistribution,
    TSLSEffects,
    compliance_proportions,
    complier_residual_cdfs,
    decompose_late,
    fit_complier_ri,
    fit_tsls,
    late_r2_sensitivity,
)
from .dataset import Dataset, PotentialTable, load_csv, write_csv
from .decomposition import (
    VariationDecomposition,
    VarianceBounds,
    decompose_itt,
    sensitivity_curve,
    var_tau_bounds,
    variance_ratio_test,
)
from .estimators import (
    AdjustedRIEffects,
    BetaEstimate,
    OLSEffects,
    RIEffects,
    arm_residuals,
    fit_ols,
    fit_ri,
    fit_ri_adjusted,
)
from .exceptions import (
    DegenerateSampleError,
    HetfxError,
    InsufficientDataError,
    MissingColumnError,
    NothingToTestError,
    RankDeficiencyError,
    WeakInstrumentError,
    WeakInstrumentWarning,
)
from .finite_population import (
    arm_covariance,
    covariance_matrix,
    difference_in_means,
    quantile_integral,
)
from .inference import (
    ChiSquare,
    ConfidenceRegion,
    TestResult,
    chi_square,
    coordinate_grid_candidates,
    fisher_confidence_region,
    fisher_randomization_test,
    omnibus_test,
)
from .simulate import (
    SimConfig,
    SimResult,
    generate_itt_dataset,
    generate_late_dataset,
    power_study,
)

__version__ = "1.0.0"

__all__ = [
    "AdjustedRIEffects",
    "BetaEstimate",
    "ChiSquare",
    "ComplianceSummary",
    "ComplierRIEffects",
    "ConfidenceRegion",
    "Dataset",
    "DegenerateSampleError",
    "HetfxError",
    "InsufficientDataError",
    "LateDecomposition",
    "LateEstimate",
    "MissingColumnError",
    "NothingToTestError",
    "OLSEffects",
    "PotentialTable",
    "RIEffects",
    "RankDeficiencyError",
    "SimConfig",
    "SimResult",
    "StepDistribution",
    "TSLSEffects",
    "TestResult",
    "VariationDecomposition",
    "VarianceBounds",
    "WeakInstrumentError",
    "WeakInstrumentWarning",
    "arm_covariance",
    "arm_residuals",
    "chi_square",
    "compliance_proportions",
    "complier_residual_cdfs",
    "coordinate_grid_candidates",
    "covariance_matrix",
    "decompose_itt",
    "decompose_late",
    "difference_in_means",
    "fisher_confidence_region",
    "fisher_randomization_test",
    "fit_complier_ri",
    "fit_ols",
    "fit_ri",
    "fit_ri_adjusted",
    "fit_tsls",
    "generate_itt_dataset",
    "generate_late_dataset",
    "late_r2_sensitivity",
    "load_csv",
    "omnibus_test",
    "power_study",
    "quantile_integral",
    "sensitivity_curve",
    "var_tau_bounds",
    "variance_ratio_test",
    "write_csv",
]
