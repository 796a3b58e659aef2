"""Clustering and reconstruction metrics, and information-criterion model selection."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .em import EMConfig, FitResult, em_fit
from .model import (Dataset, MixtureParams, PenaltyConfig, chol_lower,
                    penalised_observed_neg_loglik, sample_mixture)

MAX_MATCH_K = 10
CRITERIA = ("AIC", "BIC", "AICc")


@dataclass(frozen=True)
class LabelMatching:
    """``permutation[j]`` is the true class matched to predicted class ``j``."""

    permutation: tuple
    matched_soft_error: float
    matched_hard_error: float

    def relabel(self, labels: np.ndarray) -> np.ndarray:
        return np.asarray(self.permutation)[np.asarray(labels)]


def misclassification(true_labels, resp) -> LabelMatching:
    """Soft and hard misclassification under the hard-error-minimising permutation."""
    z = np.asarray(true_labels, dtype=int)
    resp = np.asarray(resp, dtype=float)
    n, K = resp.shape
    if K > MAX_MATCH_K:
        raise ValueError(f"permutation search supports K <= {MAX_MATCH_K}, got {K}")
    if z.shape[0] != n:
        raise ValueError("labels and responsibilities disagree on n")
    if z.size and (z.min() < 0 or z.max() >= K):
        raise ValueError("true labels must lie in [0, K)")
    zhat = np.argmax(resp, axis=1)
    onehot = np.eye(K)[z]
    # confusion[j, k] = #{pred j, true k}; hard error of perm = 1 - sum_j C[j, perm[j]] / n
    confusion = np.zeros((K, K))
    np.add.at(confusion, (zhat, z), 1.0)
    # ties in hard error are broken by the smaller soft error, so the result
    # does not depend on the order of the predicted columns
    best = None
    for perm in permutations(range(K)):
        hits = confusion[np.arange(K), perm].sum()
        matched = np.empty_like(resp)
        matched[:, list(perm)] = resp
        soft = np.abs(onehot - matched).sum() / (2 * n)
        key = (-hits, soft)
        if best is None or key < best[0]:
            best = (key, perm, soft, hits)
    _, perm, soft, hits = best
    return LabelMatching(tuple(int(b) for b in perm), float(soft), float(1.0 - hits / n))


def kl_gaussian_precision(lam_true, lam_est) -> float:
    """KL(N(0, lam_true^{-1}) || N(0, lam_est^{-1}))."""
    lam_true = np.asarray(lam_true, dtype=float)
    lam_est = np.asarray(lam_est, dtype=float)
    Lt, Le = chol_lower(lam_true), chol_lower(lam_est)
    p = lam_true.shape[0]
    # tr(lam_est lam_true^{-1}) = |Lt^{-1} Le|_F^2
    tr = np.sum(solve_triangular(Lt, Le, lower=True) ** 2)
    logdet_t = 2 * np.log(np.diag(Lt)).sum()
    logdet_e = 2 * np.log(np.diag(Le)).sum()
    return float(max(0.5 * (tr - p + logdet_t - logdet_e), 0.0))


def frobenius_error(a, b) -> float:
    """Squared Frobenius norm of ``a - b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def abc_like_metric(real_data: Dataset, fitted: MixtureParams, m: int | None = None, seed=0, *,
                    use_cofeatures: bool = True, mean_offset=None) -> np.ndarray:
    """Nearest-real-neighbour distance of each of ``m`` synthetic draws.

    Co-feature rows are resampled with replacement from the real data. Constant-
    column fits pass ``use_cofeatures=False``; residual fits also pass the
    regression coefficients as ``mean_offset`` (q x p) to map draws back to Y.
    """
    if real_data.n == 0:
        raise ValueError("real data is empty")
    m = real_data.n if m is None else int(m)
    rng = np.random.default_rng(seed)
    idx = rng.integers(real_data.n, size=m)
    xs = real_data.X[idx] if use_cofeatures else np.ones((m, 1))
    Y_syn, _ = sample_mixture(fitted, xs, rng)
    if mean_offset is not None:
        Y_syn = Y_syn + real_data.X[idx] @ np.asarray(mean_offset)
    return cdist(Y_syn, real_data.Y).min(axis=1)


def degrees_of_freedom(K: int, p: int, q: int) -> int:
    return K * (p * (p + 1) // 2 + q * p)


def crit(df: int, n: int, criterion: str) -> float:
    if criterion == "AIC":
        return float(df)
    if criterion == "BIC":
        return df * np.log(n) / 2
    if criterion == "AICc":
        if n <= df + 1:
            raise ValueError(f"AICc needs n > df + 1 (n={n}, df={df})")
        return df + df * (df + 1) / (n - df - 1)
    raise ValueError(f"criterion must be one of {CRITERIA}")


def selection_loss(data: Dataset, fit: FitResult | MixtureParams, pen: PenaltyConfig,
                   criterion: str = "BIC") -> float:
    """Unnormalised penalised negative log-likelihood plus the criterion's complexity term."""
    params = fit.params if isinstance(fit, FitResult) else fit
    df = degrees_of_freedom(params.K, params.p, params.q)
    c = crit(df, data.n, criterion)
    return data.n * penalised_observed_neg_loglik(data, params, pen) + c


@dataclass
class Selection:
    K: int
    losses: dict
    fits: dict = field(default_factory=dict)


def select_k(data: Dataset, k_grid, cfg: EMConfig = EMConfig(), criterion: str = "BIC") -> Selection:
    """Fit every K in ``k_grid`` and keep the minimiser of :func:`selection_loss`."""
    k_grid = [int(k) for k in k_grid]
    if not k_grid:
        raise ValueError("empty K grid")
    losses, fits = {}, {}
    for K in k_grid:
        fit = em_fit(data, K, cfg)
        fits[K] = fit
        losses[K] = selection_loss(data, fit, cfg.pen, criterion)
    best = min(k_grid, key=lambda k: (losses[k], k))
    return Selection(best, losses, fits)


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(np.mean(v)), "std": float(np.std(v)), "median": float(np.median(v))}
