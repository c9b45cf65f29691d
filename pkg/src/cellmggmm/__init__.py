"""Cellwise-robust multi-group Gaussian mixture models."""

from .estimator import e_step, fit, m_step_moments, m_step_pi, objective, w_step
from .gaussian import FactorizationError, condition_number, conditional_moments, observed_log_density
from .model import (
    CellMask,
    EstimatorConfig,
    FitResult,
    GroupedData,
    MixtureParams,
    PenaltyMatrix,
    RegularizationSpec,
    Responsibilities,
    ValidationError,
    validate,
)

__version__ = "0.1.0"
