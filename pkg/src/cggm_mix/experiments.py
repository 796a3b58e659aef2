"""Replicated comparisons of the conditional mixture against the two GGM baselines.

Every replication draws one dataset; every restart draws one random
initialisation shared by the three methods (same precision stack; the
transition block is sized to each method's co-features).
"""
from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import ols_fit
from .datagen import HighDimConfig, ToyConfig, gen_highdim, gen_toy_2d
from .em import EMConfig, em_fit, random_params, rank_key
from .evaluation import abc_like_metric, frobenius_error, kl_gaussian_precision, misclassification, summarize
from .model import Dataset, PenaltyConfig

METHODS = ("cggm", "ggm", "residual-ggm")
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "toy2d"
    replications: int = 50
    restarts: int = 10
    seed: int = 0
    em: EMConfig = field(default_factory=EMConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    highdim: HighDimConfig = field(default_factory=HighDimConfig)
    methods: tuple = METHODS

    def __post_init__(self):
        if self.experiment not in ("toy2d", "highdim"):
            raise ValueError("experiment must be toy2d or highdim")
        if self.replications < 1 or self.restarts < 1:
            raise ValueError("replications and restarts must be positive")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @property
    def K(self) -> int:
        return 2 if self.experiment == "toy2d" else self.highdim.K


def derived_seed(*parts) -> int:
    """Stable 63-bit seed from integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def generate(cfg: ExperimentConfig, rep: int):
    seed = derived_seed(cfg.seed, rep, 0)
    if cfg.experiment == "toy2d":
        return gen_toy_2d(replace(cfg.toy, seed=seed))
    return gen_highdim(replace(cfg.highdim, seed=seed))


def method_inputs(method: str, data: Dataset, cfg: EMConfig):
    """(dataset, em config, mean offset) seen by ``method``."""
    ones = np.ones((data.n, 1))
    if method == "cggm":
        return data, cfg, None
    mean_only = replace(cfg, pen=PenaltyConfig(cfg.pen.lambda1_prec, cfg.pen.lambda2_prec, 0.0, 0.0))
    if method == "ggm":
        return Dataset(data.Y, ones), mean_only, None
    ols = ols_fit(data.X, data.Y)
    return Dataset(ols.residuals, ones), mean_only, ols.beta_hat


def lambda_digest(lam: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(lam).tobytes()).hexdigest()[:16]


def _max_increase(trace) -> float:
    d = np.diff(np.asarray(trace))
    return float(d.max()) if d.size else 0.0


def run_replication(cfg: ExperimentConfig, rep: int) -> dict:
    """All methods and restarts on one dataset; metrics use the best-objective restart."""
    data, z, truth = generate(cfg, rep)
    K = cfg.K
    inputs = {m: method_inputs(m, data, cfg.em) for m in cfg.methods}
    runs = {m: [] for m in cfg.methods}
    for r in range(cfg.restarts):
        init_seed = derived_seed(cfg.seed, rep, 1, r)
        for m in cfg.methods:
            d_m, cfg_m, _ = inputs[m]
            init = random_params(K, data.p, d_m.q, init_seed, cfg.em.init_theta_scale, cfg.em.init_lambda_scale)
            fit = em_fit(d_m, K, cfg_m, init=init)
            fit.restart = r
            runs[m].append(fit)

    out = {"replication": rep, "methods": {}}
    for m in cfg.methods:
        d_m, _, offset = inputs[m]
        best = min(runs[m], key=lambda f: rank_key(f, cfg.em.min_class_size))
        match = misclassification(z, best.resp)
        abc = abc_like_metric(data, best.params, data.n, derived_seed(cfg.seed, rep, 2),
                              use_cofeatures=(m == "cggm"), mean_offset=offset)
        kl, frob = [], []
        for k_true in range(K):
            j = match.permutation.index(k_true)
            est = best.params.classes[j].lam
            kl.append(kl_gaussian_precision(truth.classes[k_true].lam, est))
            frob.append(frobenius_error(truth.classes[k_true].lam, est))
        out["methods"][m] = {
            "soft_misclassification": match.matched_soft_error,
            "hard_misclassification": match.matched_hard_error,
            "abc_like": float(np.mean(abc)),
            "kl": kl,
            "frobenius": frob,
            "objective": best.objective,
            "best_restart": best.restart,
            "n_iters": best.n_iters,
            "converged": best.converged,
            "degenerate": any(f.degenerate for f in runs[m]),
            "failed_runs": sum(f.failed for f in runs[m]),
            "spurious_runs": sum(f.is_spurious(cfg.em.min_class_size) for f in runs[m]),
            "max_objective_increase": max(_max_increase(f.objective_trace) for f in runs[m]),
            "all_hard_misclassification": [misclassification(z, f.resp).matched_hard_error for f in runs[m]],
            "init_lambda_digests": [lambda_digest(f.init.lam_stack) for f in runs[m]],
            "runtime_s": [f.wall_time_s for f in runs[m]],
        }
    return out


def _run_one(args):
    cfg, rep = args
    try:
        return run_replication(cfg, rep)
    except Exception as exc:  # noqa: BLE001 - partial results are kept per replication
        return {"replication": rep, "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None, progress=None) -> list:
    """Replication records sorted by replication index."""
    jobs = jobs or int(os.environ.get("CGGM_MIX_JOBS", "1"))
    tasks = [(cfg, rep) for rep in range(cfg.replications)]
    if jobs <= 1:
        results = []
        for t in tasks:
            results.append(_run_one(t))
            if progress:
                progress(results[-1])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    return sorted(results, key=lambda r: r["replication"])


SCALAR_METRICS = ("soft_misclassification", "hard_misclassification", "abc_like")
CLASS_METRICS = ("kl", "frobenius")


def metric_records(results: list) -> list:
    """Flat ``{replication, method, metric, class, value}`` records (no timings)."""
    records = []
    for res in results:
        if "error" in res:
            continue
        for m, vals in res["methods"].items():
            for name in SCALAR_METRICS:
                records.append({"replication": res["replication"], "method": m, "metric": name,
                                "class": None, "value": vals[name]})
            for name in CLASS_METRICS:
                for k, v in enumerate(vals[name]):
                    records.append({"replication": res["replication"], "method": m, "metric": name,
                                    "class": k + 1, "value": v})
    return records


def summary_table(results: list) -> list:
    """Rows ``(metric, class, method, mean, std, median)``."""
    records = metric_records(results)
    keys = []
    for r in records:
        key = (r["metric"], r["class"], r["method"])
        if key not in keys:
            keys.append(key)
    rows = []
    for metric, cls, method in keys:
        vals = [r["value"] for r in records if (r["metric"], r["class"], r["method"]) == (metric, cls, method)]
        s = summarize(vals)
        rows.append({"metric": metric, "class": cls, "method": method, **s})
    for method in {m for res in results if "error" not in res for m in res["methods"]}:
        all_hard = [e for res in results if "error" not in res for e in res["methods"][method]["all_hard_misclassification"]]
        rows.append({"metric": "hard_misclassification_all_restarts", "class": None, "method": method,
                     **summarize(all_hard)})
    rows.sort(key=lambda r: (r["metric"], r["class"] or 0, METHODS.index(r["method"])))
    return rows


def timing_table(results: list) -> list:
    rows = []
    for method in METHODS:
        times = [t for res in results if "error" not in res and method in res["methods"]
                 for t in res["methods"][method]["runtime_s"]]
        if times:
            rows.append({"metric": "runtime_s", "class": None, "method": method, **summarize(times)})
    return rows


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0
