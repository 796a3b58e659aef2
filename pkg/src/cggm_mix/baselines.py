"""Gaussian-mixture comparators built on the same EM engine.

Both baselines replace the co-features by a single constant column, so each
class mean is carried by the transition row: mu_k = -lam_k^{-1} theta_k^T.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .em import EMConfig, FitResult, em_fit
from .model import Dataset, MixtureParams, PenaltyConfig


@dataclass(frozen=True)
class OlsFit:
    beta_hat: np.ndarray  # q x p
    residuals: np.ndarray  # n x p


def ols_fit(X: np.ndarray, Y: np.ndarray) -> OlsFit:
    """Least-squares regression of Y on X (SVD solve, which also reports the rank)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    beta, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank < X.shape[1]:
        raise np.linalg.LinAlgError(f"co-feature matrix is rank deficient ({rank} < {X.shape[1]})")
    return OlsFit(beta, Y - X @ beta)


def _mean_only(cfg: EMConfig) -> EMConfig:
    pen = PenaltyConfig(cfg.pen.lambda1_prec, cfg.pen.lambda2_prec, 0.0, 0.0)
    return replace(cfg, pen=pen)


def ggm_mixture_fit(Y: np.ndarray, K: int, cfg: EMConfig = EMConfig(), labels=None,
                    init: MixtureParams | None = None) -> FitResult:
    """Mixture of GGM with free class means; the mean rows are unpenalised."""
    Y = np.asarray(Y, dtype=float)
    data = Dataset(Y, np.ones((Y.shape[0], 1)))
    return em_fit(data, K, _mean_only(cfg), labels=labels, init=init)


def residual_ggm_mixture_fit(data: Dataset, K: int, cfg: EMConfig = EMConfig(), labels=None,
                             init: MixtureParams | None = None) -> FitResult:
    """Regress Y on X over the whole dataset, then fit a GGM mixture to the residuals."""
    ols = ols_fit(data.X, data.Y)
    res = ggm_mixture_fit(ols.residuals, K, cfg, labels=labels, init=init)
    res.extra["ols"] = ols
    return res


def mean_params(params: MixtureParams) -> tuple[np.ndarray, np.ndarray]:
    """Class means (K, p) and precisions (K, p, p) of a constant-column fit."""
    mus = np.stack([np.linalg.solve(c.lam, -c.theta[0]) for c in params.classes])
    return mus, params.lam_stack
