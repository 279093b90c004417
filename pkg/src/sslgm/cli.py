"""Command-line interface: ``sslgm generate | fit | score | eval``.

Exit codes: 0 success, 1 invalid configuration or inputs, 2 data/runtime error.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .changepoint import SegmentationConfig
from .cohort import (CohortSpec, CovariateSampler, generate_cohort, read_dataset, reference_model,
                     write_dataset, write_truth)
from .errors import ConfigurationError, DataError, LearningError, SSLGMError
from .evaluation import LogisticBaseline, metrics_report, pr_auc, summarize, summary_features
from .inference import score_session
from .learning import EMConfig, FitConfig, backward_labeling_em
from .model import load_model, save_model

log = logging.getLogger("sslgm")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

DEFAULTS = {
    "seed": 0,
    "data": None,
    "model": None,
    "out": ".",
    "states": 3,
    "components": 1,
    "threads": 1,
    "generate": {
        "K": 1000,
        "separation": 2.0,
        "obs_dim": 3,
        "latent_dim": 2,
        "q_continuous": 1,
        "q_categorical": [],
        "max_stay": 500,
        "step_hours": 4.0,
    },
    "fit": {
        "latent_dim": None,
        "max_iters": 200,
        "tol": 1e-6,
        "min_occupancy": None,
        "restarts": 0,
        "beta": 0.5,
        "mixture_iters": 30,
        "segmentation": {
            "zeta": 1.0,
            "min_size": 4,
            "n_permutations": 199,
            "significance": 0.05,
            "max_changepoints": 10,
        },
    },
    "score": {"d_max": 200, "mode": "imm", "rule": "soft", "summary": "max"},
    "eval": {"scores": None, "tpr_targets": [0.5], "ppv_targets": [], "baseline": True,
             "baseline_folds": 5},
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"config key '{where}{key}' must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigurationError("config file must hold a JSON object")
        cfg = _merge(cfg, user)
    for key in ("seed", "data", "model", "out", "states", "components", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.command == "generate" and args.K is not None:
        cfg["generate"]["K"] = args.K
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigurationError(msg)

    need(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a nonnegative integer")
    need(isinstance(cfg["states"], int) and cfg["states"] >= 3, "states must be an integer >= 3")
    need(isinstance(cfg["components"], int) and cfg["components"] >= 1, "components must be >= 1")
    need(isinstance(cfg["threads"], int) and cfg["threads"] >= 1, "threads must be >= 1")
    g = cfg["generate"]
    need(isinstance(g["K"], int) and g["K"] >= 1, "generate.K must be an integer >= 1")
    need(g["separation"] > 0, "generate.separation must be positive")
    need(1 <= g["latent_dim"] <= g["obs_dim"], "generate.latent_dim must lie in [1, obs_dim]")
    need(g["step_hours"] > 0, "generate.step_hours must be positive")
    s = cfg["score"]
    need(s["mode"] in ("imm", "gpb2"), "score.mode must be 'imm' or 'gpb2'")
    need(s["rule"] in ("soft", "hard"), "score.rule must be 'soft' or 'hard'")
    need(s["summary"] in ("max", "last"), "score.summary must be 'max' or 'last'")
    need(isinstance(s["d_max"], int) and s["d_max"] >= 2, "score.d_max must be an integer >= 2")
    SegmentationConfig(**cfg["fit"]["segmentation"])


def _clean(obj):
    """Replace NaN/inf by None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from None
    return out


def _require(cfg, key):
    if not cfg[key]:
        raise ConfigurationError(f"--{key} is required")
    if not Path(cfg[key]).exists():
        raise ConfigurationError(f"{key} file {cfg[key]} does not exist")
    return cfg[key]


def cmd_generate(cfg: dict) -> int:
    g = cfg["generate"]
    if cfg["model"]:
        model = load_model(_require(cfg, "model"))
    else:
        model = reference_model(g["separation"], g["obs_dim"], g["latent_dim"],
                                q_dim=g["q_continuous"] + sum(len(p) for p in g["q_categorical"]))
    spec = CohortSpec(g["K"], model, CovariateSampler(g["q_continuous"], g["q_categorical"]),
                      g["max_stay"], cfg["seed"], g["step_hours"])
    cohort = generate_cohort(spec)
    out = _outdir(cfg)
    write_dataset(cohort.records, out / "dataset.jsonl", meta={"config": cfg})
    write_truth(cohort.truth, out / "truth.jsonl")
    _write_json(out / "generate_report.json",
                {"config": cfg, "K": g["K"], "n_resampled": cohort.n_resampled,
                 "n_icu": int(sum(r.F for r in cohort.records))})
    log.info("wrote %d episodes to %s", g["K"], out)
    return EXIT_OK


def fit_config_from(cfg: dict) -> FitConfig:
    f = cfg["fit"]
    seg = SegmentationConfig(**f["segmentation"], seed=cfg["seed"])
    em = EMConfig(latent_dim=f["latent_dim"], max_iters=f["max_iters"], tol=f["tol"],
                  min_occupancy=f["min_occupancy"], restarts=f["restarts"], seed=cfg["seed"])
    return FitConfig(N=cfg["states"], G=cfg["components"], segmentation=seg, em=em,
                     beta=f["beta"], mixture_iters=f["mixture_iters"])


def cmd_fit(cfg: dict) -> int:
    records = read_dataset(_require(cfg, "data"))
    fc = fit_config_from(cfg)
    out = _outdir(cfg)
    try:
        res = backward_labeling_em(records, fc)
    except LearningError as exc:
        _write_json(out / "diagnostics.json", {"config": cfg, "error": str(exc), **exc.diagnostics})
        raise
    res.model.meta = {"config": cfg}
    save_model(res.model, out / "model.json")
    _write_json(out / "diagnostics.json", {"config": cfg, **res.diagnostics})
    return EXIT_OK


def cmd_score(cfg: dict) -> int:
    model = load_model(_require(cfg, "model"))
    records = read_dataset(_require(cfg, "data"))
    for r in records:
        if r.Y.shape[1] != model.obs_dim or len(r.q) != model.q_dim:
            raise DataError(f"record {r.id} does not match the model dimensions "
                            f"(M={model.obs_dim}, q_dim={model.q_dim})")
    s = cfg["score"]
    out = _outdir(cfg)
    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)

    def run(rec):
        return score_session(model, rec, s["d_max"], s["mode"], s["rule"])

    with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
        sessions = list(pool.map(run, records))
    patients = []
    for rec, sess in zip(records, sessions):
        tr = sess.trajectory()
        (tdir / f"{rec.id}.csv").write_text(tr.to_csv(), encoding="utf-8")
        series = tr.R[1:]
        patients.append({"id": rec.id, "F": rec.F, "J": rec.J, "step_hours": rec.step_hours,
                         "score": summarize(series, s["summary"]), "loglik": sess.loglik,
                         "R": [float(x) for x in series]})
    _write_json(out / "scores.json", {"config": cfg, "patients": patients})
    return EXIT_OK


def _cv_baseline(records, folds: int) -> np.ndarray:
    X = np.array([summary_features(r.Y) for r in records])
    y = np.array([r.F for r in records])
    pred = np.zeros(len(y))
    fold = np.arange(len(y)) % folds
    for k in range(folds):
        test = fold == k
        train = ~test
        if y[train].min() == y[train].max():
            pred[test] = y[train].mean()
            continue
        pred[test] = LogisticBaseline.fit(X[train], y[train]).predict(X[test])
    return pred


def cmd_eval(cfg: dict) -> int:
    e = cfg["eval"]
    scores_path = e["scores"] or str(Path(cfg["out"]) / "scores.json")
    try:
        with open(scores_path, encoding="utf-8") as fh:
            doc = json.load(fh)
        patients = doc["patients"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read scores {scores_path}: {exc}") from None
    out = _outdir(cfg)
    scores = np.array([p["score"] for p in patients], dtype=float)
    labels = np.array([p["F"] for p in patients], dtype=int)
    report = {"config": cfg}
    report["sslgm"] = metrics_report(scores, labels, [p["R"] for p in patients],
                                     [p["J"] for p in patients],
                                     np.array([p["step_hours"] for p in patients]),
                                     e["tpr_targets"], e["ppv_targets"]) if patients else {"n": 0}
    if e["baseline"] and cfg["data"] and patients:
        records = {r.id: r for r in read_dataset(_require(cfg, "data"))}
        recs = [records[p["id"]] for p in patients if p["id"] in records]
        if len(recs) == len(patients) and 0 < labels.sum() < len(labels):
            pred = _cv_baseline(recs, e["baseline_folds"])
            report["logistic_baseline"] = {"pr_auc_icu": pr_auc(pred, labels),
                                           "folds": e["baseline_folds"]}
        else:
            report["logistic_baseline"] = {"pr_auc_icu": None, "undefined": "single-class or missing records"}
    _write_json(out / "metrics.json", report)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "score": cmd_score, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sslgm",
                                description="Semi-Markov switching linear Gaussian models for ICU-transfer risk.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--data", help="dataset (JSON lines)")
    common.add_argument("--model", help="model file (sslgm-model/1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--states", type=int, help="number of clinical states N")
    common.add_argument("--components", type=int, help="number of mixture components G")
    common.add_argument("--threads", type=int)
    sub = p.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", parents=[common], help="generate a synthetic cohort")
    gen.add_argument("-K", type=int, help="number of patients")
    sub.add_parser("fit", parents=[common], help="learn a model from a dataset")
    sub.add_parser("score", parents=[common], help="score every patient of a dataset")
    sub.add_parser("eval", parents=[common], help="compute metrics from scores")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SSLGM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "K", None) is None:
        args.K = None
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigurationError as exc:
        print(f"sslgm {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DataError, LearningError, SSLGMError, OSError) as exc:
        print(f"sslgm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
