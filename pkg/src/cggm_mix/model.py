"""Conditional Gaussian graphical model types, densities and sampling.

A class is parametrised by a precision matrix ``lam`` (p x p) and a
transition matrix ``theta`` (q x p) so that

    Y | X ~ N(-lam^{-1} theta^T X, lam^{-1}).

Class indices are 0-based everywhere in the library.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)
SYMMETRY_RTOL = 1e-8


class NotPositiveDefiniteError(ValueError):
    """Raised when a precision matrix fails its Cholesky factorisation."""


class DimensionError(ValueError):
    """Raised on inconsistent array shapes."""


def chol_lower(lam: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``lam``; the PD test used throughout."""
    try:
        return cholesky(lam, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError("precision matrix is not positive definite") from exc


def _as_symmetric(a: np.ndarray, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class Dataset:
    """Paired features ``Y`` (n x p) and co-features ``X`` (n x q)."""

    Y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.shape[0] != X.shape[0]:
            raise DimensionError(f"Y has {Y.shape[0]} rows but X has {X.shape[0]}")
        if X.shape[1] < 1:
            raise DimensionError("X needs at least one column")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise ValueError("dataset has non-finite entries")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def q(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ClassParams:
    """Precision ``lam`` (p x p, SPD) and transition ``theta`` (q x p) of one class."""

    lam: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        lam = _as_symmetric(self.lam, "lam")
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if theta.shape[1] != lam.shape[0]:
            raise DimensionError(f"theta has {theta.shape[1]} columns, expected {lam.shape[0]}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta has non-finite entries")
        chol_lower(lam)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.lam.shape[0]

    @property
    def q(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class MixtureParams:
    classes: tuple
    weights: np.ndarray

    def __post_init__(self):
        classes = tuple(self.classes)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(classes) < 1:
            raise ValueError("a mixture needs at least one class")
        if weights.shape[0] != len(classes):
            raise DimensionError("one weight per class required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the probability simplex")
        p, q = classes[0].p, classes[0].q
        if any(c.p != p or c.q != q for c in classes):
            raise DimensionError("all classes must share p and q")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "weights", weights)

    @property
    def K(self) -> int:
        return len(self.classes)

    @property
    def p(self) -> int:
        return self.classes[0].p

    @property
    def q(self) -> int:
        return self.classes[0].q

    @property
    def lam_stack(self) -> np.ndarray:
        return np.stack([c.lam for c in self.classes])

    @property
    def theta_stack(self) -> np.ndarray:
        return np.stack([c.theta for c in self.classes])

    @classmethod
    def from_stacks(cls, lam: np.ndarray, theta: np.ndarray, weights) -> "MixtureParams":
        return cls(tuple(ClassParams(l, t) for l, t in zip(lam, theta)), weights)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "weights": self.weights.tolist(),
            "classes": [{"lambda": c.lam.tolist(), "theta": c.theta.tolist()} for c in self.classes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureParams":
        classes = tuple(ClassParams(np.array(c["lambda"]), np.array(c["theta"])) for c in d["classes"])
        params = cls(classes, np.array(d["weights"]))
        if params.p != d["p"] or params.q != d["q"]:
            raise DimensionError("declared p/q disagree with the stored matrices")
        return params


def save_params(params: MixtureParams, path, **extra) -> None:
    doc = {**extra, **params.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_params(path) -> MixtureParams:
    return MixtureParams.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PenaltyConfig:
    """Group graphical lasso weights: l1/l2 parts for precision and transition."""

    lambda1_prec: float = 0.0
    lambda2_prec: float = 0.0
    lambda1_trans: float = 0.0
    lambda2_trans: float = 0.0

    def __post_init__(self):
        for name in ("lambda1_prec", "lambda2_prec", "lambda1_trans", "lambda2_trans"):
            v = float(getattr(self, name))
            if not v >= 0:
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, v)

    def scaled(self, c: float) -> "PenaltyConfig":
        return PenaltyConfig(c * self.lambda1_prec, c * self.lambda2_prec,
                             c * self.lambda1_trans, c * self.lambda2_trans)

    @property
    def is_zero(self) -> bool:
        return not any((self.lambda1_prec, self.lambda2_prec, self.lambda1_trans, self.lambda2_trans))


def _check_dims(cp: ClassParams, p: int, q: int) -> None:
    if cp.p != p or cp.q != q:
        raise DimensionError(f"params are (p={cp.p}, q={cp.q}) but data is (p={p}, q={q})")


def log_density_cggm(y, x, params: ClassParams) -> float:
    """Log of the conditional density p(y | x) of one class."""
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    _check_dims(params, y.size, x.size)
    return float(class_log_densities(y[None, :], x[None, :], params)[0])


def class_log_densities(Y: np.ndarray, X: np.ndarray, params: ClassParams) -> np.ndarray:
    """Row-wise log p(Y_i | X_i) for a single class, shape (n,)."""
    L = chol_lower(params.lam)
    p = params.p
    # residual u = y + lam^{-1} theta^T x, quadratic form u^T lam u = |L^T u|^2
    shift = cho_solve((L, True), params.theta.T @ X.T, check_finite=False)
    U = Y + shift.T
    quad = np.sum((U @ L) ** 2, axis=1)
    half_logdet = np.sum(np.log(np.diag(L)))
    return half_logdet - 0.5 * p * LOG_2PI - 0.5 * quad


def log_density_matrix(data: Dataset, params: MixtureParams) -> np.ndarray:
    """Matrix of log p_k(Y_i | X_i), shape (n, K)."""
    _check_dims(params.classes[0], data.p, data.q)
    return np.column_stack([class_log_densities(data.Y, data.X, c) for c in params.classes])


def conditional_mean(x, params: ClassParams) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != params.q:
        raise DimensionError(f"x has length {x.size}, expected {params.q}")
    L = chol_lower(params.lam)
    return -cho_solve((L, True), params.theta.T @ x, check_finite=False)


def conditional_means(X: np.ndarray, params: ClassParams) -> np.ndarray:
    """Row-wise conditional means, shape (n, p)."""
    L = chol_lower(params.lam)
    return -cho_solve((L, True), params.theta.T @ np.asarray(X, dtype=float).T, check_finite=False).T


def mixture_log_likelihoods(data: Dataset, params: MixtureParams) -> np.ndarray:
    """Per-sample log of sum_k pi_k p_k(Y_i | X_i)."""
    ld = log_density_matrix(data, params)
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    return logsumexp(ld + log_w, axis=1)


def penalised_observed_neg_loglik(data: Dataset, params: MixtureParams, pen: PenaltyConfig) -> float:
    """Mean negative observed log-likelihood of the mixture plus the GGL penalty."""
    from .penalty import ggl_penalty

    nll = -float(np.mean(mixture_log_likelihoods(data, params)))
    return nll + ggl_penalty(params.classes, pen)


def sample_mixture(params: MixtureParams, xs: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw one Y per row of ``xs``; returns (Y, z)."""
    rng = np.random.default_rng(seed)
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[1] != params.q:
        raise DimensionError(f"xs has {xs.shape[1]} columns, expected {params.q}")
    m = xs.shape[0]
    z = rng.choice(params.K, size=m, p=params.weights)
    eps = rng.standard_normal((m, params.p))
    Y = np.empty((m, params.p))
    for k, cp in enumerate(params.classes):
        idx = np.flatnonzero(z == k)
        if idx.size == 0:
            continue
        L = chol_lower(cp.lam)
        # lam = L L^T  =>  cov = L^{-T} L^{-1}; draw L^{-T} e
        noise = solve_triangular(L, eps[idx].T, lower=True, trans="T", check_finite=False).T
        Y[idx] = conditional_means(xs[idx], cp) + noise
    return Y, z


def stack_classes(classes: Sequence[ClassParams]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([c.lam for c in classes]), np.stack([c.theta for c in classes])
