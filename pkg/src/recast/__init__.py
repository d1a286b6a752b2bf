"""Multivariate and online RECaST transfer learning."""

from .core import Parameterization, PriorSpec, log_joint
from .distributions import CauchyParams, MvCauchyParams
from .errors import RecastError
from .online import (AlphaPrior, OnlinePrior, PosteriorSummary, analytic_alpha_mean,
                     analytic_alpha_mean_multi, build_posterior_summary)
from .predictive import (PredictiveConfig, elliptical_coverage, empirical_coverage, mahalanobis,
                         point_prediction, sample_predictive)
from .samplers import PosteriorChain, SamplerConfig, chain_diagnostics, rw_metropolis
from .source_model import Dataset, RidgeSourceModel, fit_ridge

__version__ = "0.1.0"

__all__ = [
    "Parameterization", "PriorSpec", "log_joint", "CauchyParams", "MvCauchyParams",
    "RecastError", "AlphaPrior", "OnlinePrior", "PosteriorSummary", "analytic_alpha_mean",
    "analytic_alpha_mean_multi", "build_posterior_summary", "PredictiveConfig",
    "elliptical_coverage", "empirical_coverage", "mahalanobis", "point_prediction",
    "sample_predictive", "PosteriorChain", "SamplerConfig", "chain_diagnostics", "rw_metropolis",
    "Dataset", "RidgeSourceModel", "fit_ridge",
]
