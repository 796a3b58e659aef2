"""Sparse mixtures of conditional Gaussian graphical models fitted by penalised EM."""
from ._backend import name as backend
from .baselines import ggm_mixture_fit, ols_fit, residual_ggm_mixture_fit
from .datagen import HighDimConfig, ToyConfig, gen_highdim, gen_toy_2d
from .em import EMConfig, FitResult, e_step, em_fit, sufficient_stats
from .evaluation import (abc_like_metric, degrees_of_freedom, frobenius_error, kl_gaussian_precision,
                         misclassification, select_k, selection_loss)
from .model import (ClassParams, Dataset, DimensionError, MixtureParams, NotPositiveDefiniteError,
                    PenaltyConfig, load_params, log_density_cggm, penalised_observed_neg_loglik,
                    sample_mixture, save_params)
from .penalty import LineSearchError, ProxConfig, SufficientStats, ggl_penalty, prox_ggl, solve_m_step

__version__ = "0.1.0"

__all__ = [
    "backend", "ggm_mixture_fit", "ols_fit", "residual_ggm_mixture_fit", "HighDimConfig", "ToyConfig",
    "gen_highdim", "gen_toy_2d", "EMConfig", "FitResult", "e_step", "em_fit", "sufficient_stats",
    "abc_like_metric", "degrees_of_freedom", "frobenius_error", "kl_gaussian_precision",
    "misclassification", "select_k", "selection_loss", "ClassParams", "Dataset", "DimensionError",
    "MixtureParams", "NotPositiveDefiniteError", "PenaltyConfig", "load_params", "log_density_cggm",
    "penalised_observed_neg_loglik", "sample_mixture", "save_params", "LineSearchError", "ProxConfig",
    "SufficientStats", "ggl_penalty", "prox_ggl", "solve_m_step",
]
