"""Synthetic scenarios: a 2-D toy with one binary co-feature and a sparse
high-dimensional three-class design."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dataset, MixtureParams, chol_lower, sample_mixture


def _rot45(v):
    c = np.cos(np.pi / 4)
    return np.array([[c, -c], [c, c]]) @ np.asarray(v, dtype=float)


@dataclass(frozen=True)
class ToyConfig:
    n: int = 500
    beta1: tuple = tuple(_rot45([2.5, 0.0]))
    beta2: tuple = tuple(_rot45([-2.5, 0.0]))
    lambda1: tuple = ((1.0, 0.0), (0.0, 4.0))
    lambda2: tuple = ((4.0, 0.0), (0.0, 1.0))
    mixing: tuple = (0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        for lam in (self.lambda1, self.lambda2):
            chol_lower(np.asarray(lam, dtype=float))
        if np.allclose(self.beta1, self.beta2):
            raise ValueError("class effects must differ")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class HighDimConfig:
    n: int = 100
    p: int = 10
    q: int = 5
    K: int = 3
    seed: int = 0
    lambda_counts: tuple = (7, 16, 2)
    theta_counts: tuple = (11, 14, 4)
    lambda_magnitude: tuple = (0.2, 0.6)
    theta_magnitude: tuple = (0.5, 1.5)
    n_forced_diag: int = 4

    def __post_init__(self):
        if len(self.lambda_counts) != self.K or len(self.theta_counts) != self.K:
            raise ValueError("one support size per class")
        if max(self.lambda_counts) > self.p * (self.p - 1) // 2:
            raise ValueError("too many off-diagonal nonzeros requested")
        if max(self.theta_counts) > self.p * self.q:
            raise ValueError("too many transition nonzeros requested")
        if self.n_forced_diag > min(self.p, self.q):
            raise ValueError("forced diagonal exceeds matrix size")
        if min(self.theta_counts) < self.n_forced_diag:
            raise ValueError("transition support must include the forced diagonal")


def _signed_uniform(rng, size, lo, hi):
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(lo, hi, size=size)


def gen_sparse_spd_precision(p: int, n_offdiag_nonzero: int, magnitude_range=(0.2, 0.6), seed=None):
    """Diagonally dominant precision with exactly ``n_offdiag_nonzero`` symmetric pairs."""
    iu = np.triu_indices(p, 1)
    if not 0 <= n_offdiag_nonzero <= iu[0].size:
        raise ValueError(f"cannot place {n_offdiag_nonzero} pairs in a {p}x{p} matrix")
    rng = np.random.default_rng(seed)
    pick = rng.choice(iu[0].size, size=n_offdiag_nonzero, replace=False)
    lam = np.zeros((p, p))
    vals = _signed_uniform(rng, n_offdiag_nonzero, *magnitude_range)
    lam[iu[0][pick], iu[1][pick]] = vals
    lam = lam + lam.T
    lam[np.diag_indices(p)] = 1.0 + np.abs(lam).sum(axis=1) + 0.1
    return lam


def toy_truth(cfg: ToyConfig) -> MixtureParams:
    lams = [np.asarray(cfg.lambda1, dtype=float), np.asarray(cfg.lambda2, dtype=float)]
    betas = [np.asarray(cfg.beta1, dtype=float), np.asarray(cfg.beta2, dtype=float)]
    # -lam^{-1} theta^T x = beta x  <=>  theta = -(lam beta)^T
    thetas = [-(l @ b)[None, :] for l, b in zip(lams, betas)]
    return MixtureParams.from_stacks(np.stack(lams), np.stack(thetas), np.asarray(cfg.mixing))


def gen_toy_2d(cfg: ToyConfig = ToyConfig()):
    """Returns ``(Dataset, labels, truth)``; X is a single +-1 column."""
    x_seed, y_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    X = np.random.default_rng(x_seed).choice([-1.0, 1.0], size=(cfg.n, 1))
    truth = toy_truth(cfg)
    Y, z = sample_mixture(truth, X, np.random.default_rng(y_seed))
    return Dataset(Y, X), z, truth


def highdim_truth(cfg: HighDimConfig, seed=None) -> MixtureParams:
    rng = np.random.default_rng(seed)
    p, q = cfg.p, cfg.q
    lams, thetas = [], []
    forced = [(i, i) for i in range(cfg.n_forced_diag)]
    free = [(i, j) for i in range(q) for j in range(p) if (i, j) not in forced]
    for k in range(cfg.K):
        lams.append(gen_sparse_spd_precision(p, cfg.lambda_counts[k], cfg.lambda_magnitude, rng))
        extra = rng.choice(len(free), size=cfg.theta_counts[k] - len(forced), replace=False)
        support = forced + [free[e] for e in extra]
        theta = np.zeros((q, p))
        rows, cols = zip(*support)
        theta[list(rows), list(cols)] = _signed_uniform(rng, len(support), *cfg.theta_magnitude)
        thetas.append(theta)
    return MixtureParams.from_stacks(np.stack(lams), np.stack(thetas), np.full(cfg.K, 1.0 / cfg.K))


def gen_highdim(cfg: HighDimConfig = HighDimConfig()):
    """Returns ``(Dataset, labels, truth)``; the last X column is the constant 1."""
    par_seed, x_seed, y_seed = np.random.SeedSequence(cfg.seed).spawn(3)
    truth = highdim_truth(cfg, par_seed)
    n_random = cfg.q - 1
    X = np.ones((cfg.n, cfg.q))
    X[:, :n_random] = np.random.default_rng(x_seed).choice([-1.0, 1.0], size=(cfg.n, n_random))
    Y, z = sample_mixture(truth, X, np.random.default_rng(y_seed))
    return Dataset(Y, X), z, truth
