"""Optimum sample allocation in multivariate stratified sampling."""

from .estimators import (Allocation, AllocationError, cov_hat_stratified, moment_report, trace_moments,
                         variance_hats, vech_cov, vech_mean)
from .solvers import ProblemSpec, SolveReport, check_allocation, enumerate_oracle, solve
from .strata import (StratumSummary, SurveyDataError, SurveyFrame, humboldt, load_survey, save_survey,
                     summarize)

__version__ = "0.1.0"

__all__ = [
    "Allocation", "AllocationError", "ProblemSpec", "SolveReport", "StratumSummary", "SurveyDataError",
    "SurveyFrame", "check_allocation", "cov_hat_stratified", "enumerate_oracle", "humboldt", "load_survey",
    "moment_report", "save_survey", "solve", "summarize", "trace_moments", "variance_hats", "vech_cov",
    "vech_mean",
]
