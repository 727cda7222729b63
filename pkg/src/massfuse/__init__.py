"""Finite-population mean estimation by predictive mean matching mass imputation."""

from .data import CovariateMatrix, DesignSpec, NonProbSample, ProbSample, validate_pair
from .engine import ImputationSpec
from .estimators import (
    EstimateResult,
    EstimatedN,
    KnownN,
    estimate,
    estimate_glm_mi,
    estimate_pmm,
    naive_mean,
    select_k_dynamic,
)
from .matching import MatchAssignment, match_multirobust, match_nn, match_pmm_a, match_pmm_b
from .regression import ModelSpec, fit
from .variance import VarianceSettings, bootstrap_variance, confidence_interval, variance_v1

__version__ = "0.1.0"
