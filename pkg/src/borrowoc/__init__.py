"""Operating characteristics of clinical trial designs that borrow historical information."""

__version__ = "0.1.0"

from .mixture import MixtureNormal, NormalComponent, TruncatedMixture, robustify
from .mapmeta import (
    EMConvergenceError,
    GriddedDensity,
    HierarchyConfig,
    HistoricalStudy,
    MAPPredictive,
    MixtureFit,
    fit_mixture,
    map_predictive,
)
from .design import (
    ContrastBorrowDesign,
    ControlBorrowDesign,
    MonotonicityError,
    SuccessRule,
    critical_curve,
    critical_value,
    is_success,
    posterior_success_prob,
)
from .metrics import (
    DesignPrior,
    MetricReport,
    MetricRequest,
    average_metric,
    average_type1_null,
    classical_type1,
    conditional_power,
    decision_table,
    evaluate,
    mc_crosscheck,
    power_curve,
    preposterior_fp,
    prior_prob_benefit,
    scan_extremum,
    upper_bound_fp,
)
from .calibration import CalibrationRequest, calibrate, max_weight_for_bound, solve_s_new
from .config import ConfigError, RunConfig, load_historical, parse_config, read_config, run

__all__ = [
    "CalibrationRequest",
    "ConfigError",
    "ContrastBorrowDesign",
    "ControlBorrowDesign",
    "DesignPrior",
    "EMConvergenceError",
    "GriddedDensity",
    "HierarchyConfig",
    "HistoricalStudy",
    "MAPPredictive",
    "MetricReport",
    "MetricRequest",
    "MixtureFit",
    "MixtureNormal",
    "MonotonicityError",
    "NormalComponent",
    "RunConfig",
    "SuccessRule",
    "TruncatedMixture",
    "average_metric",
    "average_type1_null",
    "calibrate",
    "classical_type1",
    "conditional_power",
    "critical_curve",
    "critical_value",
    "decision_table",
    "evaluate",
    "fit_mixture",
    "is_success",
    "load_historical",
    "map_predictive",
    "max_weight_for_bound",
    "mc_crosscheck",
    "parse_config",
    "posterior_success_prob",
    "power_curve",
    "preposterior_fp",
    "prior_prob_benefit",
    "read_config",
    "robustify",
    "run",
    "scan_extremum",
    "solve_s_new",
    "upper_bound_fp",
]
