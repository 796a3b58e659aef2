"""Penalised EM for mixtures of conditional Gaussian graphical models."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .model import (Dataset, MixtureParams, PenaltyConfig, log_density_matrix,
                    penalised_observed_neg_loglik)
from .penalty import LineSearchError, ProxConfig, SufficientStats, conditional_mle, solve_m_step

INIT_MODES = ("random", "kmeans", "labels")


@dataclass(frozen=True)
class EMConfig:
    """Outer-loop settings.

    ``init`` is one of ``random``, ``kmeans`` or ``labels`` (labels passed to
    :func:`em_fit`). ``restarts`` independent initialisations are run and the
    one with the lowest final objective is kept, preferring runs whose
    smallest class holds at least ``min_class_size`` effective points
    (default p + 1, the fewest that support a nonsingular class covariance).
    """

    max_iters: int = 300
    rel_tol: float = 1e-6
    min_resp_floor: float = 1e-10
    prox: ProxConfig = field(default_factory=ProxConfig)
    pen: PenaltyConfig = field(default_factory=PenaltyConfig)
    seed: int = 0
    init: str = "random"
    restarts: int = 1
    init_theta_scale: float = 0.1
    init_lambda_scale: float = 0.1
    min_class_size: float | None = None

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not self.min_resp_floor >= 0:
            raise ValueError("min_resp_floor must be nonnegative")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")


@dataclass
class FitResult:
    params: MixtureParams
    resp: np.ndarray
    objective_trace: list
    n_iters: int
    wall_time_s: float
    converged: bool
    degenerate: bool = False
    failed: bool = False
    init: MixtureParams | None = None
    restart: int = 0
    extra: dict = field(default_factory=dict)
    time_trace: list = field(default_factory=list)  # elapsed seconds per trace entry

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.resp, axis=1)

    @property
    def class_sizes(self) -> np.ndarray:
        return self.resp.sum(axis=0)

    def is_spurious(self, min_size: float | None = None) -> bool:
        """True when some class is too small to support its own covariance."""
        min_size = self.params.p + 1 if min_size is None else min_size
        return bool(self.class_sizes.min() < min_size)


def e_step(data: Dataset, params: MixtureParams) -> np.ndarray:
    """Posterior class probabilities, shape (n, K); rows sum to one."""
    ld = log_density_matrix(data, params)
    with np.errstate(divide="ignore"):
        ld = ld + np.log(params.weights)
    resp = np.exp(ld - logsumexp(ld, axis=1, keepdims=True))
    return resp / resp.sum(axis=1, keepdims=True)


def sufficient_stats(data: Dataset, resp: np.ndarray, floor: float = 0.0) -> SufficientStats:
    resp = np.asarray(resp, dtype=float)
    if resp.shape[0] != data.n:
        raise ValueError("responsibilities and data disagree on n")
    if floor > 0:
        resp = np.maximum(resp, floor)
        resp = resp / resp.sum(axis=1, keepdims=True)
    n = data.n
    Y, X = data.Y, data.X
    RY = resp.T[:, :, None] * Y[None]  # (K, n, p)
    RX = resp.T[:, :, None] * X[None]
    syy = np.einsum("kip,ir->kpr", RY, Y) / n
    syx = np.einsum("kip,ir->kpr", RY, X) / n
    sxx = np.einsum("kip,ir->kpr", RX, X) / n
    syy = 0.5 * (syy + np.swapaxes(syy, 1, 2))
    sxx = 0.5 * (sxx + np.swapaxes(sxx, 1, 2))
    return SufficientStats(resp.sum(axis=0), syy, syx, sxx, float(n))


def update_weights(stats: SufficientStats) -> np.ndarray:
    if not stats.n > 0:
        raise ValueError("need n > 0")
    w = stats.nk / stats.n
    return w / w.sum()


def kmeans_init(Y: np.ndarray, K: int, seed) -> np.ndarray:
    """Hard labels from k-means++ / Lloyd, best of 10 restarts."""
    from sklearn.cluster import KMeans

    Y = np.asarray(Y, dtype=float)
    if Y.shape[0] < K:
        raise ValueError(f"need at least K={K} points, got {Y.shape[0]}")
    km = KMeans(n_clusters=K, init="k-means++", n_init=10, max_iter=100,
                random_state=_int_seed(seed)).fit(Y)
    labels = km.labels_.astype(int)
    if len(np.unique(labels)) < K:
        raise ValueError("k-means produced an empty cluster")
    return labels


def _int_seed(seed) -> int:
    return int(np.random.default_rng(seed).integers(2**31 - 1))


def random_params(K: int, p: int, q: int, seed, theta_scale: float = 0.1,
                  lambda_scale: float = 0.1) -> MixtureParams:
    """Random initial parameters; the precision stack depends only on (K, p, seed)."""
    ss = np.random.SeedSequence(_int_seed(seed))
    lam_rng, theta_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    lams = []
    for _ in range(K):
        A = lam_rng.normal(0.0, lambda_scale, size=(p, p))
        lams.append(np.eye(p) + A @ A.T / p)
    theta = theta_rng.normal(0.0, theta_scale, size=(K, q, p))
    return MixtureParams.from_stacks(np.stack(lams), theta, np.full(K, 1.0 / K))


def labels_params(data: Dataset, labels: np.ndarray, K: int, floor: float = 1e-10) -> MixtureParams:
    """One unpenalised M step from one-hot responsibilities."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=K)
    if len(counts) > K or np.any(counts < 2):
        raise ValueError(f"every class needs at least 2 members, got counts {counts.tolist()}")
    resp = np.eye(K)[labels]
    stats = sufficient_stats(data, resp, floor)
    return MixtureParams(tuple(conditional_mle(stats)), update_weights(stats))


def init_params(data: Dataset, K: int, seed, labels=None, *, mode: str | None = None,
                theta_scale: float = 0.1, lambda_scale: float = 0.1,
                floor: float = 1e-10) -> MixtureParams:
    mode = mode or ("labels" if labels is not None else "random")
    if mode == "random":
        return random_params(K, data.p, data.q, seed, theta_scale, lambda_scale)
    if mode == "kmeans":
        labels = kmeans_init(data.Y, K, seed)
    elif labels is None:
        raise ValueError("labels mode needs labels")
    return labels_params(data, labels, K, floor)


def _single_fit(data: Dataset, K: int, cfg: EMConfig, params: MixtureParams) -> FitResult:
    t0 = time.perf_counter()
    init = params
    mstep_pen = cfg.pen.scaled(2.0)  # M-step objective is twice the weighted NLL
    obj = penalised_observed_neg_loglik(data, params, cfg.pen)
    trace = [obj]
    times = [time.perf_counter() - t0]
    converged = degenerate = failed = False
    small_run = 0
    n_iters = 0
    for _ in range(cfg.max_iters):
        resp = e_step(data, params)
        stats = sufficient_stats(data, resp, cfg.min_resp_floor)
        weights = update_weights(stats)
        try:
            classes = solve_m_step(params.classes, stats, mstep_pen, cfg.prox)
        except LineSearchError:
            failed = True
            break
        params = MixtureParams(tuple(classes), weights)
        n_iters += 1
        new_obj = penalised_observed_neg_loglik(data, params, cfg.pen)
        trace.append(new_obj)
        times.append(time.perf_counter() - t0)
        small_run = small_run + 1 if np.min(weights) < 1e-6 else 0
        if small_run >= 3:
            degenerate = True
        decrease = obj - new_obj
        obj = new_obj
        if decrease <= cfg.rel_tol * abs(obj):
            converged = True
            break
    if small_run and converged:
        degenerate = True  # still empty at a stationary point
    resp = e_step(data, params)
    return FitResult(params, resp, trace, n_iters, time.perf_counter() - t0, converged,
                     degenerate, failed, init, time_trace=times)


def restart_seeds(seed, restarts: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(_int_seed(seed)).spawn(restarts)]


def em_fit(data: Dataset, K: int, cfg: EMConfig = EMConfig(), labels=None,
           init: MixtureParams | None = None) -> FitResult:
    """Fit a K-class mixture; keeps the best of ``cfg.restarts`` initialisations.

    ``init`` overrides the configured initialisation (single run).
    """
    if data.n <= K:
        raise ValueError(f"need n > K, got n={data.n}, K={K}")
    if init is not None:
        if init.K != K or init.p != data.p or init.q != data.q:
            raise ValueError("init params do not match data/K")
        return _single_fit(data, K, cfg, init)
    best = None
    for r, s in enumerate(restart_seeds(cfg.seed, cfg.restarts)):
        params = init_params(data, K, s, labels, mode=cfg.init, theta_scale=cfg.init_theta_scale,
                             lambda_scale=cfg.init_lambda_scale, floor=cfg.min_resp_floor)
        res = _single_fit(data, K, cfg, params)
        res.restart = r
        if best is None or _better(res, best, cfg.min_class_size):
            best = res
    return best


def rank_key(res: FitResult, min_size: float | None = None) -> tuple:
    """Sort key for restarts: failed last, then spurious, then objective."""
    return (res.failed, res.is_spurious(min_size), res.objective)


def _better(a: FitResult, b: FitResult, min_size: float | None = None) -> bool:
    return rank_key(a, min_size) < rank_key(b, min_size)


def fit_all_restarts(data: Dataset, K: int, cfg: EMConfig, labels=None) -> list:
    """Every restart's FitResult, in restart order."""
    out = []
    for r, s in enumerate(restart_seeds(cfg.seed, cfg.restarts)):
        params = init_params(data, K, s, labels, mode=cfg.init, theta_scale=cfg.init_theta_scale,
                             lambda_scale=cfg.init_lambda_scale, floor=cfg.min_resp_floor)
        res = _single_fit(data, K, cfg, params)
        res.restart = r
        out.append(res)
    return out


def with_overrides(cfg: EMConfig, **kw) -> EMConfig:
    return replace(cfg, **kw)
