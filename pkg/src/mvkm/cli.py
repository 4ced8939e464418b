"""Command-line entry point: synth | train | eval | grid | analyze | validate.

Configuration lives in a JSON file with one top-level section per
concern (``synth``, ``hyperparams``, ``eval``); command-line flags
override file values.  Every command writes a run-manifest JSON beside
its primary output recording the effective config, seed, package
version, and wall time.  Output artifacts themselves contain nothing
time-dependent, so a rerun from the same manifest reproduces them
byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor


from . import __version__
from .analysis import (
    bias_score_correlation,
    knowledge_curves,
    material_clusters,
    spectral_cluster,
)
from .data import Dataset, load_dataset, save_dataset
from .errors import ConfigError, MvkmError
from .evaluate import evaluate_online, grid_search
from .model import HyperParams, load_params, save_params
from .synth import SynthConfig, generate
from .train import fit

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_BAD_CONFIG = 3
EXIT_MISSING_FILE = 4


def _default_seed() -> int:
    return int(os.environ.get("MVKM_SEED", "0"))


def _load_config(path) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad config {path}: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_manifest(out_path, command, cfg, seed, elapsed, outputs):
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(elapsed, 3),
        "outputs": outputs,
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")


def _resolve_gamma(gamma_cfg, ds: Dataset) -> dict[int, float]:
    """Gamma weights keyed by view name or numeric id in configs."""
    out = {}
    for key, val in gamma_cfg.items():
        try:
            out[int(key)] = float(val)
        except ValueError:
            out[ds.view_by_name(str(key)).view_id] = float(val)
    return out


def _hyperparams(cfg: dict, ds: Dataset, seed: int) -> HyperParams:
    section = dict(cfg.get("hyperparams", {}))
    gamma = section.pop("gamma", None)
    hp = HyperParams(seed=seed)
    for key, val in section.items():
        if not hasattr(hp, key):
            raise ConfigError(f"unknown hyperparameter {key!r}")
        setattr(hp, key, type(getattr(hp, key))(val))
    if gamma is not None:
        hp.gamma = _resolve_gamma(gamma, ds)
    else:
        hp.gamma = {v.view_id: 1.0 for v in ds.views}
    hp.validate()
    return hp


def _synth_config(cfg: dict, seed: int) -> SynthConfig:
    section = dict(cfg.get("synth", {}))
    sc = SynthConfig(seed=seed)
    for key, val in section.items():
        if not hasattr(sc, key):
            raise ConfigError(f"unknown synth option {key!r}")
        if isinstance(val, list):
            val = tuple(val) if key in ("materials_per_view", "gain_scale", "view_names") else [tuple(x) if isinstance(x, list) else x for x in val]
        setattr(sc, key, val)
    sc.validate()
    return sc


# -- subcommands ---------------------------------------------------------


def _cmd_synth(args):
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", _default_seed())
    sc = _synth_config(cfg, seed)
    start = time.monotonic()
    ds, truth = generate(sc)
    save_dataset(ds, args.out)
    truth_path = f"{args.out}.truth.json"
    truth_obj = {
        "Q": {str(r): q.tolist() for r, q in truth["Q"].items()},
        "K": truth["K"].tolist(),
    }
    if "archetypes" in truth:
        truth_obj["archetypes"] = truth["archetypes"].tolist()
    with open(truth_path, "w", encoding="utf-8") as f:
        json.dump(truth_obj, f, sort_keys=True)
        f.write("\n")
    _write_manifest(
        args.out, "synth", cfg, seed, time.monotonic() - start, [args.out, truth_path]
    )
    print(f"wrote {len(ds.records)} records for {ds.num_students} students to {args.out}")
    return EXIT_OK


def _cmd_train(args):
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", _default_seed())
    ds = load_dataset(args.data)
    hp = _hyperparams(cfg, ds, seed)
    ablation = args.ablation.replace("-", "_")
    start = time.monotonic()
    params, history = fit(ds, hp, ablation=ablation)
    save_params(params, hp, args.out)
    history_path = f"{args.out}.history.csv"
    with open(history_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "l1", "l2", "total"])
        for epoch, br in enumerate(history):
            writer.writerow([epoch, repr(br.l1), repr(br.l2), repr(br.total)])
    _write_manifest(
        args.out, "train", cfg, seed, time.monotonic() - start, [args.out, history_path]
    )
    print(f"trained {len(history)} epochs, final objective {history[-1].total:.6f}")
    return EXIT_OK


def _eval_one(task):
    ds_path, cfg, seed, ablation, folds, fraction = task
    ds = load_dataset(ds_path)
    hp = _hyperparams(cfg, ds, seed)
    report = evaluate_online(
        ds, hp, ablation=ablation, folds=folds, seed=seed, fraction=fraction
    )
    return ablation, report.to_dict()


def _cmd_eval(args):
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", _default_seed())
    folds = args.folds if args.folds is not None else cfg.get("eval", {}).get("folds", 5)
    fraction = cfg.get("eval", {}).get("fraction", 0.5)
    ablations = [a.strip().replace("-", "_") for a in args.ablations.split(",")]
    if not os.path.exists(args.data):
        raise FileNotFoundError(args.data)
    start = time.monotonic()
    tasks = [(args.data, cfg, seed, a, folds, fraction) for a in ablations]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_eval_one, tasks))
    else:
        results = [_eval_one(t) for t in tasks]
    report = {
        "config_hash": _config_hash(cfg),
        "folds": folds,
        "seed": seed,
        "methods": {label: rep for label, rep in results},
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=1)
        f.write("\n")
    _write_manifest(args.out, "eval", cfg, seed, time.monotonic() - start, [args.out])
    for label, rep in results:
        print(
            f"{label}: rmse {rep['rmse_mean']:.4f} +/- {rep['rmse_var']:.4f}, "
            f"mae {rep['mae_mean']:.4f} +/- {rep['mae_var']:.4f}"
        )
    return EXIT_OK


def _cmd_grid(args):
    cfg = _load_config(args.config)
    grid_cfg = _load_config(args.grid)
    seed = args.seed if args.seed is not None else cfg.get("seed", _default_seed())
    ds = load_dataset(args.data)
    base_hp = _hyperparams(cfg, ds, seed)
    grid = {k: list(v) for k, v in grid_cfg.items()}
    start = time.monotonic()
    best, table = grid_search(ds, grid, folds=args.folds, seed=seed, base_hp=base_hp)
    out_obj = {
        "config_hash": _config_hash(cfg),
        "best": {k: (v if not isinstance(v, dict) else {str(a): b for a, b in v.items()}) for k, v in best.__dict__.items()},
        "table": table,
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(out_obj, f, sort_keys=True, indent=1)
        f.write("\n")
    _write_manifest(args.out, "grid", cfg, seed, time.monotonic() - start, [args.out])
    print(f"evaluated {len(table)} grid points; best rmse {min(r['rmse'] for r in table):.4f}")
    return EXIT_OK


def _cmd_analyze(args):
    params, hp = load_params(args.model)
    outputs = []
    start = time.monotonic()
    ds = load_dataset(args.data) if args.data else None
    if args.curves:
        curves = knowledge_curves(params)
        with open(args.curves, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["concept"] + [f"attempt_{a}" for a in range(curves.shape[1])])
            for c in range(curves.shape[0]):
                writer.writerow([c] + [repr(x) for x in curves[c]])
        outputs.append(args.curves)
    out_dir = args.out_dir
    if args.cluster_students:
        assignment = spectral_cluster(params.S, args.cluster_students, seed=args.seed or 0)
        path = os.path.join(out_dir, "student_clusters.csv")
        _write_clusters(path, assignment, _mean_scores_by_student(ds) if ds else None)
        outputs.append(path)
    if args.cluster_materials:
        assignment = material_clusters(
            params, sorted(params.Q), args.cluster_materials, seed=args.seed or 0
        )
        path = os.path.join(out_dir, "material_clusters.csv")
        _write_clusters(path, assignment, None)
        outputs.append(path)
    if args.bias_corr:
        if ds is None:
            raise ConfigError("--bias-corr requires --data")
        view = ds.graded_view_ids()[0]
        rho = bias_score_correlation(params, ds, view)
        path = os.path.join(out_dir, "bias_correlation.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["view", "spearman_rho"])
            writer.writerow([view, repr(rho)])
        outputs.append(path)
        print(f"bias/score spearman rho = {rho:.4f}")
    if not outputs:
        raise ConfigError("nothing to do: pass --curves, --cluster-*, or --bias-corr")
    _write_manifest(outputs[0], "analyze", {}, args.seed or 0, time.monotonic() - start, outputs)
    return EXIT_OK


def _mean_scores_by_student(ds):
    sums, counts = {}, {}
    graded = set(ds.graded_view_ids())
    for r in ds.records:
        if r.view in graded:
            sums[r.student] = sums.get(r.student, 0.0) + r.value
            counts[r.student] = counts.get(r.student, 0) + 1
    return {s: sums[s] / counts[s] for s in sums}


def _write_clusters(path, assignment, mean_scores):
    """One row per item; includes per-cluster mean score when available."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        if mean_scores is None:
            writer.writerow(["item", "cluster"])
            for item, label in zip(assignment.item_ids, assignment.labels):
                writer.writerow([item, int(label)])
        else:
            writer.writerow(["item", "cluster", "mean_score", "cluster_mean_score"])
            cluster_scores = {}
            for item, label in zip(assignment.item_ids, assignment.labels):
                if item in mean_scores:
                    cluster_scores.setdefault(int(label), []).append(mean_scores[item])
            cluster_means = {
                c: sum(v) / len(v) for c, v in cluster_scores.items() if v
            }
            for item, label in zip(assignment.item_ids, assignment.labels):
                writer.writerow(
                    [
                        item,
                        int(label),
                        repr(mean_scores.get(item, "")) if item in mean_scores else "",
                        repr(cluster_means.get(int(label), "")) if int(label) in cluster_means else "",
                    ]
                )


def _cmd_validate(args):
    ds = load_dataset(args.data)
    print(
        f"{args.data}: {len(ds.records)} records, {ds.num_students} students, "
        f"{len(ds.views)} views, {ds.max_attempts} max attempts"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvkm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output dataset path (.csv or .json)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--ablation", default="full", choices=["full", "base", "no-penalty", "no_penalty"])
    p.add_argument("--out", required=True, help="model checkpoint path (JSON)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="cross-validated online evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--folds", type=int)
    p.add_argument("--ablations", default="full,base,no-penalty,avg")
    p.add_argument("--out", required=True, help="report path (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grid", help="hyperparameter grid search")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="JSON file mapping fields to value lists")
    p.add_argument("--config")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("analyze", help="latent-structure analysis of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--curves", help="write mean knowledge curves CSV here")
    p.add_argument("--cluster-students", type=int, metavar="K")
    p.add_argument("--cluster-materials", type=int, metavar="K")
    p.add_argument("--bias-corr", action="store_true")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("validate", help="check a dataset file")
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except MvkmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
