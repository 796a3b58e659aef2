"""Group graphical lasso penalty, its proximal operator and the M-step solver.

The smooth part of the M-step objective, for per-class weights
``w_k = n_k / n`` and moment matrices normalised by ``1/n``, is

    g = sum_k  -w_k logdet(L_k) + <L_k, Syy_k> + 2 tr(T_k Syx_k)
               + tr(T_k L_k^{-1} T_k^T Sxx_k)

(``L`` precision, ``T`` transition). It is twice the responsibility-weighted
negative conditional log-likelihood up to a constant. :func:`solve_m_step`
minimises ``g + ggl_penalty`` by proximal gradient with backtracking.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .model import ClassParams, DimensionError, NotPositiveDefiniteError, PenaltyConfig, chol_lower

MAX_BACKTRACKS = 60


class LineSearchError(RuntimeError):
    """No positive-definite, sufficiently decreasing step was found."""


@dataclass(frozen=True)
class SufficientStats:
    """Responsibility-weighted moments.

    ``nk`` has shape (K,); ``syy`` (K, p, p); ``syx`` (K, p, q); ``sxx`` (K, q, q).
    Moment matrices carry the ``1/n`` factor, ``nk`` does not.
    """

    nk: np.ndarray
    syy: np.ndarray
    syx: np.ndarray
    sxx: np.ndarray
    n: float

    def __post_init__(self):
        K = self.nk.shape[0]
        if not (self.syy.shape[0] == self.syx.shape[0] == self.sxx.shape[0] == K):
            raise DimensionError("moment stacks disagree on K")
        if abs(self.nk.sum() - self.n) > 1e-8 * max(1.0, self.n):
            raise ValueError("class counts must sum to n")

    @property
    def K(self) -> int:
        return self.nk.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self.nk / self.n


@dataclass(frozen=True)
class ProxConfig:
    alpha0: float = 1.0
    beta: float = 0.5
    max_iters: int = 500
    grad_tol: float = 1e-6
    obj_tol: float = 1e-10

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not (self.grad_tol > 0 and self.obj_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class MStepResult:
    classes: list
    objective_trace: np.ndarray
    n_iters: int
    status: str


def soft_threshold(x, lam):
    """sign(x) * max(|x| - lam, 0), elementwise."""
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def ggl_penalty(classes: Sequence[ClassParams], pen: PenaltyConfig) -> float:
    lam = np.stack([c.lam for c in classes])
    theta = np.stack([c.theta for c in classes])
    if lam.ndim != 3 or theta.ndim != 3:
        raise DimensionError("classes must share p and q")
    return ggl_penalty_stacks(lam, theta, pen)


def ggl_penalty_stacks(lam: np.ndarray, theta: np.ndarray, pen: PenaltyConfig) -> float:
    p = lam.shape[1]
    off = ~np.eye(p, dtype=bool)
    lam_off = lam[:, off]
    total = 0.0
    if pen.lambda1_prec:
        total += pen.lambda1_prec * np.abs(lam_off).sum()
    if pen.lambda2_prec:
        total += pen.lambda2_prec * np.sqrt((lam_off ** 2).sum(axis=0)).sum()
    if pen.lambda1_trans:
        total += pen.lambda1_trans * np.abs(theta).sum()
    if pen.lambda2_trans:
        total += pen.lambda2_trans * np.sqrt((theta ** 2).sum(axis=0)).sum()
    return float(total)


def prox_ggl(d_tilde: np.ndarray, alpha: float, lam1: float, lam2: float) -> np.ndarray:
    """Closed-form prox of the GGL penalty on a (K, ...) stack; groups run along axis 0."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    a = soft_threshold(np.asarray(d_tilde, dtype=float), lam1 * alpha)
    norm = np.sqrt((a ** 2).sum(axis=0))
    thr = lam2 * alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(norm > thr, 1.0 - thr / norm, 0.0)
    return a * shrink


def smooth_objective(classes: Sequence[ClassParams], stats: SufficientStats) -> float:
    """Smooth M-step objective; ``inf`` if any precision is not PD."""
    lam = np.stack([c.lam for c in classes])
    theta = np.stack([c.theta for c in classes])
    return float(_backend.py.smooth_objective(lam, theta, stats.syy, stats.syx, stats.sxx, stats.weights))


def smooth_gradient(classes: Sequence[ClassParams], stats: SufficientStats):
    """Per-class ``(grad_lambda, grad_theta)`` pairs of :func:`smooth_objective`."""
    lam = np.stack([c.lam for c in classes])
    theta = np.stack([c.theta for c in classes])
    for l in lam:
        chol_lower(l)
    g_lam, g_theta = _backend.py.smooth_gradient(lam, theta, stats.syy, stats.syx, stats.sxx, stats.weights)
    return list(zip(g_lam, g_theta))


def solve_m_step(init: Sequence[ClassParams], stats: SufficientStats, pen: PenaltyConfig,
                 cfg: ProxConfig = ProxConfig(), *, return_info: bool = False, backend=None):
    """Minimise ``smooth_objective + ggl_penalty`` starting from ``init``.

    Precision diagonals take plain gradient steps; precision off-diagonals and all
    transition entries go through :func:`prox_ggl`. Steps leaving the PD cone are
    rejected by the line search.
    """
    lam = np.ascontiguousarray(np.stack([c.lam for c in init]), dtype=float)
    theta = np.ascontiguousarray(np.stack([c.theta for c in init]), dtype=float)
    if lam.shape[0] != stats.K:
        raise DimensionError("init and stats disagree on K")
    for l in lam:
        chol_lower(l)
    kern = _backend.get(backend)
    lam_out, theta_out, trace, status = kern.prox_gradient(
        lam, theta,
        np.ascontiguousarray(stats.syy, dtype=float),
        np.ascontiguousarray(stats.syx, dtype=float),
        np.ascontiguousarray(stats.sxx, dtype=float),
        np.ascontiguousarray(stats.weights, dtype=float),
        pen.lambda1_prec, pen.lambda2_prec, pen.lambda1_trans, pen.lambda2_trans,
        cfg.alpha0, cfg.beta, cfg.max_iters, cfg.grad_tol, cfg.obj_tol, MAX_BACKTRACKS,
    )
    if status == _backend.STATUS_NOT_PD:
        raise NotPositiveDefiniteError("initial precision matrix is not positive definite")
    if status == _backend.STATUS_LINESEARCH:
        raise LineSearchError(f"no admissible step after {MAX_BACKTRACKS} backtracking reductions")
    classes = [ClassParams(l, t) for l, t in zip(lam_out, theta_out)]
    if not return_info:
        return classes
    return MStepResult(classes, np.asarray(trace), len(trace) - 1, _backend.STATUS_NAMES[status])


def conditional_mle(stats: SufficientStats) -> list:
    """Unpenalised minimiser of :func:`smooth_objective`, class by class.

    With barred moments ``S / w``: cov = Syy - Syx Sxx^{-1} Syx^T and
    theta = -Sxx^{-1} Syx^T lam.
    """
    out = []
    for k in range(stats.K):
        w = stats.weights[k]
        if w <= 0:
            raise ValueError(f"class {k} has no mass")
        syy, syx, sxx = stats.syy[k] / w, stats.syx[k] / w, stats.sxx[k] / w
        beta = np.linalg.solve(sxx, syx.T)  # q x p regression coefficients
        cov = syy - syx @ beta
        cov = 0.5 * (cov + cov.T)
        lam = np.linalg.inv(cov)
        lam = 0.5 * (lam + lam.T)
        out.append(ClassParams(lam, -beta @ lam))
    return out
