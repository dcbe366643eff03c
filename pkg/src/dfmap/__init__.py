"""Penalized EM estimation of dynamic factor models with missing data.

The estimator maximizes a shrinkage-penalized likelihood over loadings, VAR
coefficients and precisions by closed-form conditional updates, with the
latent factors integrated out by a Kalman smoother that handles any pattern
of missing observations. A simulation study harness and a CLI ship with the
library.
"""

from .errors import DfmapError, NumericError
from .kalman import ACTIVE_BACKEND, FilterOutput, SmoothedMoments, run_filter, run_smoother
from .model import ModelOrder, Panel, StateSpace, Theta, build_state_space, common_component, standardize
from .priors import PriorSpec, expected_eta_lambda, lag_decay_matrix, log_prior, prior_precisions
from .em import EStepSums, FitResult, e_step, fit, initialize, log_posterior
from .simulate import DgpConfig, SimulatedData, apply_missing, simulate_dgp
from .study import StudyConfig, rmse, run_study

__version__ = "0.1.0"

__all__ = [
    "ACTIVE_BACKEND",
    "DfmapError",
    "DgpConfig",
    "EStepSums",
    "FilterOutput",
    "FitResult",
    "ModelOrder",
    "NumericError",
    "Panel",
    "PriorSpec",
    "SimulatedData",
    "SmoothedMoments",
    "StateSpace",
    "StudyConfig",
    "Theta",
    "apply_missing",
    "build_state_space",
    "common_component",
    "e_step",
    "expected_eta_lambda",
    "fit",
    "initialize",
    "lag_decay_matrix",
    "log_posterior",
    "log_prior",
    "prior_precisions",
    "rmse",
    "run_filter",
    "run_smoother",
    "run_study",
    "simulate_dgp",
    "standardize",
    "__version__",
]
