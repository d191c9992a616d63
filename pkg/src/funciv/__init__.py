"""Measurement-error-corrected scalar-on-function regression with a functional instrument."""

__version__ = "0.1.0"

from .errors import FunctionalIVError
from .estimators import (
    ESTIMATORS,
    FitResult,
    SimexConfig,
    fit_by_name,
    fit_multi2sls,
    fit_naive,
    fit_oracle,
    fit_pw2sls,
    fit_simex,
    select_K_bic,
)
from .fda import BasisSystem, FunctionalSample, TimeGrid, build_bspline_basis, project_scores
from .harness import bootstrap_ci, run_monte_carlo
from .metrics import abias2, aimse, avar, mspee, percent_difference
from .simgen import CovarianceSpec, Dataset, ScenarioConfig, generate_dataset

__all__ = [
    "BasisSystem",
    "CovarianceSpec",
    "Dataset",
    "ESTIMATORS",
    "FitResult",
    "FunctionalIVError",
    "FunctionalSample",
    "ScenarioConfig",
    "SimexConfig",
    "TimeGrid",
    "__version__",
    "abias2",
    "aimse",
    "avar",
    "bootstrap_ci",
    "build_bspline_basis",
    "fit_by_name",
    "fit_multi2sls",
    "fit_naive",
    "fit_oracle",
    "fit_pw2sls",
    "fit_simex",
    "generate_dataset",
    "mspee",
    "percent_difference",
    "project_scores",
    "run_monte_carlo",
    "select_K_bic",
]
