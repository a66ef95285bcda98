"""Per-instance privacy accounting for ridge regression and smooth ERM releases."""

from .bounds import (  # noqa: F401
    OPS_DELTA_LIMIT,
    GaussianCalibrationRow,
    OpsPdpBound,
    calibrate_gaussian_eps,
    gaussian_delta_exact,
    gaussian_dp_worst_case,
    gaussian_pdp,
    gaussian_pdp_classic,
    gaussian_calibration_table,
    ops_dp_agnostic,
    ops_pdp_agnostic,
    ops_pdp_bound,
    ops_pdp_from_geometry,
)
from .composition import (  # noqa: F401
    PdpBudget,
    advanced_composition_crossover,
    compose_advanced,
    compose_simple,
    group_privacy,
)
from .report import (  # noqa: F401
    PdpDatasetReport,
    PdpForAll,
    PdpPointReport,
    eps_moments,
    pdp_dataset_report,
    pdp_for_all,
    write_report_csv,
)
from .sensitivity import (  # noqa: F401
    LinregSensitivityForms,
    SmoothProblem,
    logistic_loss_problem,
    sensitivity_linreg,
    sensitivity_linreg_forms,
    sensitivity_linreg_refit,
    sensitivity_smooth_exact,
    sensitivity_smooth_quasinewton,
    solve_erm,
    squared_loss_problem,
    validate_problem,
)
from .verify import McVerdict, verify_pdp_mc  # noqa: F401

__all__ = [
    "OPS_DELTA_LIMIT",
    "GaussianCalibrationRow",
    "LinregSensitivityForms",
    "McVerdict",
    "OpsPdpBound",
    "PdpBudget",
    "PdpDatasetReport",
    "PdpForAll",
    "PdpPointReport",
    "SmoothProblem",
    "advanced_composition_crossover",
    "calibrate_gaussian_eps",
    "compose_advanced",
    "compose_simple",
    "eps_moments",
    "gaussian_delta_exact",
    "gaussian_dp_worst_case",
    "gaussian_pdp",
    "gaussian_pdp_classic",
    "group_privacy",
    "gaussian_calibration_table",
    "logistic_loss_problem",
    "ops_dp_agnostic",
    "ops_pdp_agnostic",
    "ops_pdp_bound",
    "ops_pdp_from_geometry",
    "pdp_dataset_report",
    "pdp_for_all",
    "sensitivity_linreg",
    "sensitivity_linreg_forms",
    "sensitivity_linreg_refit",
    "sensitivity_smooth_exact",
    "sensitivity_smooth_quasinewton",
    "solve_erm",
    "squared_loss_problem",
    "validate_problem",
    "verify_pdp_mc",
    "write_report_csv",
]
