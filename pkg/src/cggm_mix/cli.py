"""Command-line batch driver: generate, fit, evaluate, select-k, reproduce.

Every command takes one JSON config (``--config``) plus ``--set key=value``
overrides; dotted keys reach nested sections (``--set pen.lambda1_prec=0.05``).
Precedence is flag > file > scenario default > built-in default.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .datagen import HighDimConfig, ToyConfig, gen_highdim, gen_toy_2d
from .em import EMConfig, em_fit
from .evaluation import (CRITERIA, abc_like_metric, frobenius_error, kl_gaussian_precision,
                         misclassification, select_k, summarize)
from .experiments import (METHODS, MONOTONE_SLACK, ExperimentConfig, method_inputs, metric_records,
                          run_experiment, summary_table, timing_table)
from .model import Dataset, MixtureParams, NotPositiveDefiniteError, PenaltyConfig
from .penalty import LineSearchError, ProxConfig

log = logging.getLogger("cggm_mix")

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE, EXIT_NUMERICAL = 0, 2, 3, 4
SCENARIOS = ("toy2d", "highdim", "csv")

DEFAULTS = {
    "scenario": "toy2d",
    "method": "cggm",
    "K": None,
    "k_grid": [1, 2, 3, 4, 5],
    "criterion": "BIC",
    "data_dir": None,
    "fit_dir": None,
    "output": "out",
    "seed": 0,
    "replications": 1,
    "restarts": 1,
    "bootstrap_fraction": 1.0,
    "abc_m": None,
    "em": {"max_iters": 300, "rel_tol": 1e-6, "min_resp_floor": 1e-10, "init": "random",
           "init_theta_scale": 0.1, "init_lambda_scale": 0.1, "min_class_size": None},
    "pen": {"lambda1_prec": 0.0, "lambda2_prec": 0.0, "lambda1_trans": 0.0, "lambda2_trans": 0.0},
    "prox": asdict(ProxConfig()),
    "toy": {k: v for k, v in asdict(ToyConfig()).items() if k != "seed"},
    "highdim": {k: v for k, v in asdict(HighDimConfig()).items() if k != "seed"},
}

SCENARIO_DEFAULTS = {
    "toy2d": {"K": 2, "replications": 50, "restarts": 10},
    "highdim": {"K": 3, "replications": 20, "restarts": 5,
                "pen": {"lambda1_prec": 0.05, "lambda2_prec": 0.05,
                        "lambda1_trans": 0.02, "lambda2_trans": 0.02}},
    "csv": {},
}

# keys that never change results, so they stay out of the config hash
UNHASHED = ("output", "data_dir", "fit_dir")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_set(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key} does not name a config section")
    node[parts[-1]] = _parse_value(value)


def resolve_config(path=None, sets=(), command_defaults=None) -> dict:
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
    flags = {}
    for item in sets:
        _apply_set(flags, item)
    staged = _merge(_merge(user, command_defaults or {}), flags)
    scenario = staged.get("scenario", DEFAULTS["scenario"])
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    cfg = _merge(_merge(_merge(DEFAULTS, SCENARIO_DEFAULTS[scenario]), user), command_defaults or {})
    cfg = _merge(cfg, flags)
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    if cfg["criterion"] not in CRITERIA:
        raise ConfigError(f"criterion must be one of {CRITERIA}")
    if not 0 < float(cfg["bootstrap_fraction"]) <= 1:
        raise ConfigError("bootstrap_fraction must lie in (0, 1]")
    for key in ("replications", "restarts"):
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if cfg["K"] is not None and (not isinstance(cfg["K"], int) or cfg["K"] < 1):
        raise ConfigError("K must be a positive integer")
    try:
        em_config(cfg)
        toy_config(cfg)
        highdim_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def portable(cfg: dict) -> dict:
    """The config without filesystem locations."""
    return {k: v for k, v in cfg.items() if k not in UNHASHED}


def config_hash(cfg: dict) -> str:
    core = portable(cfg)
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def em_config(cfg: dict) -> EMConfig:
    return EMConfig(**cfg["em"], prox=ProxConfig(**cfg["prox"]), pen=PenaltyConfig(**cfg["pen"]),
                    seed=int(cfg["seed"]), restarts=int(cfg["restarts"]))


def _tuplify(d: dict) -> dict:
    return {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v
            for k, v in d.items()}


def toy_config(cfg: dict, seed: int | None = None) -> ToyConfig:
    return ToyConfig(**_tuplify(cfg["toy"]), seed=int(cfg["seed"] if seed is None else seed))


def highdim_config(cfg: dict, seed: int | None = None) -> HighDimConfig:
    return HighDimConfig(**_tuplify(cfg["highdim"]), seed=int(cfg["seed"] if seed is None else seed))


# ---------------------------------------------------------------- files

def write_csv(path: Path, header, rows, chash: str) -> None:
    """CSV with a leading ``# config_hash:`` comment, then the header row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash: {chash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def read_csv(path: Path):
    """Returns ``(header, float array, config hash or None)``."""
    chash = None
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            if line.startswith("# config_hash:"):
                chash = line.split(":", 1)[1].strip()
            continue
        if line.strip():
            body.append(line)
    if not body:
        raise ConfigError(f"{path} has no header row")
    header = next(csv.reader([body[0]]))
    rows = [[float(x) for x in r] for r in csv.reader(body[1:])]
    arr = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return header, arr, chash


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_dataset(data_dir) -> tuple[Dataset, np.ndarray | None, str]:
    """Dataset, optional labels and the data identity (manifest hash or content hash)."""
    if data_dir is None:
        raise ConfigError("data_dir is required")
    d = Path(data_dir)
    try:
        _, Y, hy = read_csv(d / "Y.csv")
        _, X, hx = read_csv(d / "X.csv")
    except OSError as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from exc
    if Y.shape[0] != X.shape[0]:
        raise ConfigError(f"Y.csv has {Y.shape[0]} rows but X.csv has {X.shape[0]}")
    if hy != hx:
        raise ConfigError("Y.csv and X.csv come from different configs")
    labels = None
    if (d / "labels.csv").exists():
        _, lab, hl = read_csv(d / "labels.csv")
        if hl != hy:
            raise ConfigError("labels.csv comes from a different config than Y.csv")
        labels = lab[:, 0].astype(int)
    ident = hy
    if ident is None:
        h = hashlib.sha256((d / "Y.csv").read_bytes() + (d / "X.csv").read_bytes())
        ident = "content-" + h.hexdigest()[:16]
    return Dataset(Y, X), labels, ident


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: dict) -> int:
    chash = config_hash(cfg)
    if cfg["scenario"] == "toy2d":
        data, z, truth = gen_toy_2d(toy_config(cfg))
    elif cfg["scenario"] == "highdim":
        data, z, truth = gen_highdim(highdim_config(cfg))
    else:
        raise ConfigError("generate needs scenario toy2d or highdim")
    out = _out_dir(cfg)
    write_csv(out / "Y.csv", [f"y{j + 1}" for j in range(data.p)], data.Y, chash)
    write_csv(out / "X.csv", [f"x{j + 1}" for j in range(data.q)], data.X, chash)
    write_csv(out / "labels.csv", ["label"], z[:, None], chash)
    write_json(out / "truth.json", {"config_hash": chash, **truth.to_dict()})
    write_json(out / "manifest.json", {"command": "generate", "config_hash": chash, "seed": cfg["seed"],
                                       "scenario": cfg["scenario"], "n": data.n, "p": data.p,
                                       "q": data.q, "config": portable(cfg)})
    log.info("wrote %d rows to %s", data.n, out)
    return EXIT_OK


def _fit_once(method: str, data: Dataset, K: int, emc: EMConfig, labels=None):
    d_m, cfg_m, offset = method_inputs(method, data, emc)
    return em_fit(d_m, K, cfg_m, labels=labels), offset


def _require_k(cfg: dict) -> int:
    if cfg["K"] is None:
        raise ConfigError("K is required for scenario csv")
    return int(cfg["K"])


def cmd_fit(cfg: dict) -> int:
    data, labels, data_id = load_dataset(cfg["data_dir"])
    K = _require_k(cfg)
    emc = em_config(cfg)
    if emc.init == "labels" and labels is None:
        raise ConfigError("em.init=labels needs labels.csv in the dataset directory")
    chash = config_hash(cfg)
    fit, offset = _fit_once(cfg["method"], data, K, emc, labels if emc.init == "labels" else None)
    out = _out_dir(cfg)
    extra = {"config_hash": chash, "data_hash": data_id, "method": cfg["method"],
             "objective": fit.objective, "converged": fit.converged, "degenerate": fit.degenerate,
             "failed": fit.failed, "n_iters": fit.n_iters, "best_restart": fit.restart}
    if offset is not None:
        extra["ols_beta"] = offset.tolist()
    write_json(out / "params.json", {**extra, **fit.params.to_dict()})
    write_csv(out / "responsibilities.csv", [f"r{k + 1}" for k in range(K)], fit.resp, chash)
    write_csv(out / "trace.csv", ["iteration", "objective", "wall_time"],
              [(i, o, t) for i, (o, t) in enumerate(zip(fit.objective_trace, fit.time_trace))], chash)
    if cfg["bootstrap_fraction"] < 1:
        write_json(out / "bootstrap.json", _bootstrap(cfg, data, K, emc, chash, labels))
    if fit.failed:
        log.error("line search failed; partial fit written")
        return EXIT_NUMERICAL
    if fit.degenerate:
        log.warning("a class emptied out; fit written")
        return EXIT_DEGENERATE
    return EXIT_OK


def _bootstrap(cfg, data, K, emc, chash, labels=None):
    m = max(K + 1, int(round(cfg["bootstrap_fraction"] * data.n)))
    ss = np.random.SeedSequence(int(cfg["seed"])).spawn(cfg["replications"])
    reps = []
    for r, s in enumerate(ss):
        idx = np.sort(np.random.default_rng(s).choice(data.n, size=m, replace=False))
        sub = Dataset(data.Y[idx], data.X[idx])
        sub_labels = labels[idx] if emc.init == "labels" else None
        fit, _ = _fit_once(cfg["method"], sub, K, replace(emc, seed=int(s.generate_state(1)[0])), sub_labels)
        reps.append({"replication": r, "n": m, "objective": fit.objective, "converged": fit.converged,
                     "degenerate": fit.degenerate, "failed": fit.failed, "params": fit.params.to_dict()})
    return {"config_hash": chash, "fraction": cfg["bootstrap_fraction"], "replications": reps}


def cmd_evaluate(cfg: dict) -> int:
    data, labels, data_id = load_dataset(cfg["data_dir"])
    if cfg["fit_dir"] is None:
        raise ConfigError("fit_dir is required")
    fdir = Path(cfg["fit_dir"])
    try:
        doc = json.loads((fdir / "params.json").read_text())
        _, resp, rhash = read_csv(fdir / "responsibilities.csv")
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read fit: {exc}") from exc
    if doc.get("data_hash") != data_id:
        raise ConfigError("fit was produced from a different dataset")
    if rhash != doc.get("config_hash"):
        raise ConfigError("responsibilities.csv and params.json come from different configs")
    params = MixtureParams.from_dict(doc)
    method = doc.get("method", "cggm")
    offset = np.asarray(doc["ols_beta"]) if "ols_beta" in doc else None
    m = cfg["abc_m"] or data.n
    abc = abc_like_metric(data, params, m, int(cfg["seed"]), use_cofeatures=(method == "cggm"),
                          mean_offset=offset)
    records = [{"metric": "objective", "class": None, "value": doc["objective"]},
               {"metric": "abc_like", "class": None, "value": float(np.mean(abc))}]
    truth_path = Path(cfg["data_dir"]) / "truth.json"
    if labels is not None:
        match = misclassification(labels, resp)
        records += [{"metric": "soft_misclassification", "class": None, "value": match.matched_soft_error},
                    {"metric": "hard_misclassification", "class": None, "value": match.matched_hard_error}]
        if truth_path.exists():
            truth = MixtureParams.from_dict(json.loads(truth_path.read_text()))
            if truth.K == params.K:
                for k_true in range(truth.K):
                    est = params.classes[match.permutation.index(k_true)].lam
                    records.append({"metric": "kl", "class": k_true + 1,
                                    "value": kl_gaussian_precision(truth.classes[k_true].lam, est)})
                    records.append({"metric": "frobenius", "class": k_true + 1,
                                    "value": frobenius_error(truth.classes[k_true].lam, est)})
    chash = config_hash(cfg)
    out = _out_dir(cfg)
    write_json(out / "metrics.json", {"config_hash": chash, "fit_config_hash": doc["config_hash"],
                                      "method": method, "records": records})
    rows = []
    for r in records:
        s = summarize([r["value"]])
        rows.append((r["metric"], r["class"], method, s["mean"], s["std"], s["median"]))
    write_csv(out / "summary.csv", ["metric", "class", "method", "mean", "std", "median"], rows, chash)
    return EXIT_OK


def cmd_select_k(cfg: dict) -> int:
    data, _, data_id = load_dataset(cfg["data_dir"])
    emc = em_config(cfg)
    d_m, cfg_m, _ = method_inputs(cfg["method"], data, emc)
    sel = select_k(d_m, cfg["k_grid"], cfg_m, cfg["criterion"])
    chash = config_hash(cfg)
    out = _out_dir(cfg)
    write_json(out / "selection.json", {"config_hash": chash, "data_hash": data_id,
                                        "criterion": cfg["criterion"], "K": sel.K,
                                        "losses": {str(k): v for k, v in sel.losses.items()}})
    write_csv(out / "selection.csv", ["K", "loss"], sorted(sel.losses.items()), chash)
    print(sel.K)
    return EXIT_OK


def experiment_config(cfg: dict) -> ExperimentConfig:
    if cfg["scenario"] not in ("toy2d", "highdim"):
        raise ConfigError("reproduce needs scenario toy2d or highdim")
    return ExperimentConfig(cfg["scenario"], cfg["replications"], cfg["restarts"], int(cfg["seed"]),
                            em_config(cfg), toy_config(cfg), highdim_config(cfg))


def cmd_reproduce(cfg: dict, jobs: int | None = None) -> int:
    exp = experiment_config(cfg)
    chash = config_hash(cfg)
    results = run_experiment(exp, jobs)
    out = _out_dir(cfg)
    errors = [r for r in results if "error" in r]
    status = []
    for res in results:
        if "error" in res:
            status.append({"replication": res["replication"], "status": "error", "error": res["error"]})
            continue
        entry = {"replication": res["replication"], "status": "ok", "methods": {}}
        for m, vals in res["methods"].items():
            entry["methods"][m] = {k: v for k, v in vals.items() if k != "runtime_s"}
        status.append(entry)
    rows = summary_table(results)
    write_json(out / "metrics.json", {"config_hash": chash, "experiment": exp.experiment,
                                      "records": metric_records(results), "summary": rows})
    write_json(out / "replications.json", {"config_hash": chash, "replications": status})
    header = ["metric", "class", "method", "mean", "std", "median"]
    write_csv(out / "summary.csv", header, [[r[h] for h in header] for r in rows], chash)
    write_csv(out / "timings.csv", header, [[r[h] for h in header] for r in timing_table(results)], chash)
    write_json(out / "manifest.json", {"command": "reproduce", "config_hash": chash, "config": portable(cfg)})
    worst = max((v["max_objective_increase"] for r in results if "error" not in r
                 for v in r["methods"].values()), default=0.0)
    if worst > MONOTONE_SLACK:
        log.warning("objective increased by %.3g in some run", worst)
    if errors:
        log.error("%d replication(s) failed; see replications.json", len(errors))
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cggm-mix", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "fit", "evaluate", "select-k", "reproduce"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--out", help="output directory")
        if name in ("fit", "evaluate", "select-k"):
            p.add_argument("--data", help="dataset directory with Y.csv and X.csv")
        if name == "evaluate":
            p.add_argument("--fit", help="directory written by the fit command")
        if name == "reproduce":
            p.add_argument("experiment", nargs="?", choices=("toy2d", "highdim"))
            p.add_argument("--jobs", type=int, default=None,
                           help="parallel replications (default $CGGM_MIX_JOBS or 1)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {}
    if args.out:
        overrides["output"] = args.out
    if getattr(args, "data", None):
        overrides["data_dir"] = args.data
    if getattr(args, "fit", None):
        overrides["fit_dir"] = args.fit
    if getattr(args, "experiment", None):
        overrides["scenario"] = args.experiment
    try:
        cfg = resolve_config(args.config, args.set, overrides)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "select-k":
            return cmd_select_k(cfg)
        jobs = args.jobs if args.jobs is not None else int(os.environ.get("CGGM_MIX_JOBS", "1"))
        return cmd_reproduce(cfg, jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotPositiveDefiniteError, LineSearchError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
