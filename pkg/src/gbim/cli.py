"""Command-line entry point and experiment harness.

Three subcommands cover the workflow: ``prepare`` builds or ingests a
dataset and writes a single-file bundle, ``optimize`` runs one
seed-selection method on a bundle, ``benchmark`` runs a spec-driven
experiment (method x seed-size grid, exploit-ratio sweep, or scalability
timing) and emits plot-ready CSV files.

Exit codes: 0 success, 1 validation/config/input error, 2 runtime failure.

Reproducibility contract: every cell of a benchmark derives its seed from
the master seed and its position in the spec, and rows are written in spec
order, so grid and alpha-sweep CSVs are byte-identical across reruns.
Wall-clock timings are inherently unrepeatable; they go to timings.txt
(and to the scalability CSV, whose entire point is timing).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import baselines, netdata, optimizer
from .diffusion import DiffusionConfig
from .netdata import ParseError, ValidationError
from .surrogate import TrainConfig

logger = logging.getLogger(__name__)

RESULT_SCHEMA_VERSION = 1
HISTORY_COLUMNS = ("round", "loss", "best_so_far", "evals")
GRID_COLUMNS = ("schema_version", "method", "k", "rep", "cell_seed",
                "influence", "evaluations", "error")
ALPHA_COLUMNS = ("schema_version", "alpha", "rep", "round", "best_so_far",
                 "cumulative_evals")
SCALABILITY_COLUMNS = ("schema_version", "vary", "value", "users", "items",
                       "k", "wall_time_s")

METHOD_CHOICES = ("gbim",) + baselines.METHODS


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None


def _take(cfg: dict, allowed: set, where: str) -> dict:
    unknown = set(cfg) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    return cfg


def _derive_seed(master: int, *coords) -> int:
    # crc32 for strings: stable across processes, unlike builtin hash()
    entropy = [int(master)] + [zlib.crc32(c.encode()) if isinstance(c, str)
                               else int(c) for c in coords]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def build_diffusion_config(cfg: dict, default_seed: int = 0) -> DiffusionConfig:
    cfg = dict(_take(cfg, {"model", "beta", "simulations", "seed"}, "diffusion"))
    cfg.setdefault("seed", default_seed)
    return DiffusionConfig(**cfg)


def build_train_config(cfg: dict) -> TrainConfig:
    cfg = dict(_take(cfg, {"d", "t", "hidden", "learning_rate", "epochs",
                           "batch_size", "weight_decay", "seed", "dtype"}, "train"))
    if "hidden" in cfg:
        cfg["hidden"] = tuple(cfg["hidden"])
    return TrainConfig(**cfg)


def build_gbim_config(cfg: dict, *, k: int, diffusion: DiffusionConfig,
                      seed: int) -> optimizer.GbimConfig:
    cfg = dict(_take(cfg, {"initial_design", "rounds", "patience", "batch_size",
                           "fraction", "alpha", "top_pool_fraction", "sigma_w2",
                           "round_epochs", "retrain_from_scratch", "train"},
                     "gbim"))
    train = build_train_config(cfg.pop("train", {}))
    return optimizer.GbimConfig(k=k, diffusion=diffusion, train=train,
                                seed=seed, **cfg)


def _materialize_dataset(cfg: dict, master_seed: int):
    """Build (social, items, prefs) from a dataset spec block."""
    cfg = _take(cfg, {"synthetic", "files", "bundle"}, "dataset")
    if sum(key in cfg for key in ("synthetic", "files", "bundle")) != 1:
        raise ValidationError(
            "dataset must contain exactly one of: synthetic, files, bundle")
    if "bundle" in cfg:
        return netdata.load_bundle(cfg["bundle"])
    if "synthetic" in cfg:
        syn = dict(_take(cfg["synthetic"],
                         {"users", "user_edges", "items", "item_edges", "seed"},
                         "dataset.synthetic"))
        seed = syn.pop("seed", _derive_seed(master_seed, "dataset"))
        return netdata.generate_synthetic(
            syn["users"], syn["user_edges"], syn["items"], syn["item_edges"],
            seed=seed)
    files = dict(_take(cfg["files"],
                       {"social", "interactions", "weight_mode", "users", "items",
                        "similarity_threshold", "cf_fill"}, "dataset.files"))
    social = netdata.load_social_graph(
        files["social"], files.get("weight_mode", "reciprocal-in-degree"),
        n=files.get("users"))
    interactions = netdata.load_interactions(files["interactions"])
    m = files.get("items",
                  int(interactions.items.max()) + 1 if len(interactions) else 0)
    items = netdata.build_item_graph(interactions, m,
                                     files.get("similarity_threshold", 0.5))
    prefs = netdata.build_preference_matrix(interactions, social.n, m,
                                            fill=files.get("cf_fill", 0.1))
    return social, items, prefs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    spec = _load_json(args.config)
    spec = _take(spec, {"dataset", "seed"}, "prepare config")
    master = args.seed if args.seed is not None else spec.get("seed", 0)
    social, items, prefs = _materialize_dataset(spec["dataset"], master)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle_path = out_dir / "bundle.txt"
    netdata.save_bundle(bundle_path, social, items, prefs)
    stats = netdata.bundle_stats(social, items)
    print(" ".join(f"{key}={value}" for key, value in stats.items()))
    print(f"bundle written to {bundle_path}")
    return 0


def _run_single_method(method: str, social, items, prefs,
                       diffusion: DiffusionConfig, k: int, seed: int,
                       gbim_overrides: dict):
    """(influence, evaluations, wall_time_s, seed_set, gbim result or None)."""
    if method == "gbim":
        cfg = build_gbim_config(gbim_overrides, k=k, diffusion=diffusion, seed=seed)
        start = time.perf_counter()
        result = optimizer.run(cfg, social, items, prefs)
        wall = time.perf_counter() - start
        return (result.best_influence, result.total_evaluations, wall,
                result.best_seed_set, result)
    res = baselines.run_baseline(method, social, items, prefs, diffusion, k,
                                 seed=seed)
    return res.influence, res.evaluations, res.wall_time_s, res.seed_set, None


def cmd_optimize(args) -> int:
    spec = _load_json(args.config) if args.config else {}
    spec = _take(spec, {"diffusion", "gbim", "seed"}, "optimize config")
    master = args.seed if args.seed is not None else spec.get("seed", 0)
    social, items, prefs = netdata.load_bundle(args.bundle)
    diffusion = build_diffusion_config(spec.get("diffusion", {}),
                                       default_seed=_derive_seed(master, "diffusion"))
    influence, evaluations, wall, seed_set, result = _run_single_method(
        args.method, social, items, prefs, diffusion, args.k, master,
        spec.get("gbim", {}))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "schema_version": RESULT_SCHEMA_VERSION,
        "method": args.method,
        "k": args.k,
        "seed": master,
        "influence": influence,
        "evaluations": evaluations,
        "wall_time_s": wall,
        "seed_set": sorted(seed_set.pairs),
    }
    with open(out_dir / "result.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
    if result is not None:
        rows = [(rec.round, rec.loss, rec.best_so_far, rec.evals)
                for rec in result.history]
        _write_csv(out_dir / "history.csv", HISTORY_COLUMNS, rows)
    print(f"method={args.method} k={args.k} influence={influence!r} "
          f"evaluations={evaluations}")
    return 0


def _grid_cells(spec: dict):
    methods = spec.get("methods", ["gbim", "maxdegree", "random"])
    for method in methods:
        if method not in METHOD_CHOICES:
            raise ValidationError(f"unknown method {method!r} in spec")
    k_grid = spec.get("k_grid", [5])
    reps = int(spec.get("repetitions", 1))
    if not methods or not k_grid or reps < 1:
        raise ValidationError("benchmark needs methods, a k grid and repetitions >= 1")
    cells = []
    for method in methods:
        for k in k_grid:
            for rep in range(reps):
                cells.append((method, int(k), rep))
    return cells


def _run_grid_cell(payload: dict):
    """Worker entry; re-materializes the dataset so cells are independent."""
    social, items, prefs = _materialize_dataset(payload["dataset"],
                                                payload["master"])
    method, k, rep = payload["cell"]
    cell_seed = payload["cell_seed"]
    diffusion = build_diffusion_config(payload["diffusion"],
                                       default_seed=_derive_seed(cell_seed, "d"))
    try:
        influence, evaluations, wall, _, _ = _run_single_method(
            method, social, items, prefs, diffusion, k, cell_seed,
            payload.get("gbim", {}))
        return (method, k, rep, cell_seed, influence, evaluations, ""), wall
    except Exception as exc:  # error row, other cells continue
        logger.warning("cell %s failed: %s", payload["cell"], exc)
        return (method, k, rep, cell_seed, "", "", f"{type(exc).__name__}"), 0.0


def _benchmark_grid(spec, master, out_dir, jobs) -> None:
    cells = _grid_cells(spec)
    payloads = []
    for index, cell in enumerate(cells):
        payloads.append({
            "dataset": spec["dataset"],
            "diffusion": spec.get("diffusion", {}),
            "gbim": spec.get("gbim", {}),
            "master": master,
            "cell": cell,
            "cell_seed": _derive_seed(master, "cell", index),
        })
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_grid_cell, payloads))
    else:
        outcomes = [_run_grid_cell(p) for p in payloads]
    rows = [(RESULT_SCHEMA_VERSION, *out[0]) for out in outcomes]
    _write_csv(out_dir / "benchmark.csv", GRID_COLUMNS, rows)
    with open(out_dir / "timings.txt", "w", encoding="utf-8") as fh:
        for (row, wall) in outcomes:
            fh.write(f"{row[0]} k={row[1]} rep={row[2]}: {wall:.3f}s\n")
    _write_summary(out_dir, rows)


def _write_summary(out_dir: Path, rows) -> None:
    by_method_k: dict[tuple, list[float]] = {}
    for row in rows:
        _, method, k, _, _, influence, _, error = row
        if error == "":
            by_method_k.setdefault((method, k), []).append(float(influence))
    lines = ["mean influence by method and seed-set size:"]
    for (method, k), vals in sorted(by_method_k.items()):
        lines.append(f"  {method} k={k}: {np.mean(vals):.3f} over {len(vals)} reps")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _benchmark_alpha_sweep(spec, master, out_dir) -> None:
    alphas = spec.get("alphas", [0.0, 0.25, 0.5, 0.75, 1.0])
    reps = int(spec.get("repetitions", 1))
    k = int(spec.get("k", 5))
    rows = []
    for a_idx, alpha in enumerate(alphas):
        for rep in range(reps):
            cell_seed = _derive_seed(master, "alpha", a_idx, rep)
            social, items, prefs = _materialize_dataset(spec["dataset"], master)
            diffusion = build_diffusion_config(spec.get("diffusion", {}),
                                               default_seed=_derive_seed(cell_seed, "d"))
            overrides = dict(spec.get("gbim", {}))
            overrides["alpha"] = float(alpha)
            cfg = build_gbim_config(overrides, k=k, diffusion=diffusion,
                                    seed=cell_seed)
            result = optimizer.run(cfg, social, items, prefs)
            for rec in result.history:
                rows.append((RESULT_SCHEMA_VERSION, float(alpha), rep, rec.round,
                             rec.best_so_far, rec.cumulative_evals))
    _write_csv(out_dir / "alpha_sweep.csv", ALPHA_COLUMNS, rows)


def _benchmark_scalability(spec, master, out_dir) -> None:
    scal = _take(spec.get("scalability", {}),
                 {"vary", "values", "users", "items", "k", "avg_out_degree",
                  "item_edges"}, "scalability")
    vary = scal.get("vary", "users")
    if vary not in ("users", "items"):
        raise ValidationError("scalability.vary must be 'users' or 'items'")
    values = scal.get("values")
    if not values:
        raise ValidationError("scalability.values must be a non-empty list")
    k = int(scal.get("k", 5))
    degree = int(scal.get("avg_out_degree", 4))
    rows = []
    for v_idx, value in enumerate(values):
        n = int(value) if vary == "users" else int(scal.get("users", 5000))
        m = int(scal.get("items", 100)) if vary == "users" else int(value)
        cell_seed = _derive_seed(master, "scal", v_idx)
        social, items, prefs = netdata.generate_synthetic(
            n, n * degree, m, int(scal.get("item_edges", 3 * m)),
            seed=_derive_seed(master, "scal-data", v_idx))
        diffusion = build_diffusion_config(spec.get("diffusion", {}),
                                           default_seed=_derive_seed(cell_seed, "d"))
        cfg = build_gbim_config(spec.get("gbim", {}), k=k, diffusion=diffusion,
                                seed=cell_seed)
        start = time.perf_counter()
        optimizer.run(cfg, social, items, prefs)
        wall = time.perf_counter() - start
        rows.append((RESULT_SCHEMA_VERSION, vary, int(value), n, m, k, wall))
    _write_csv(out_dir / "scalability.csv", SCALABILITY_COLUMNS, rows)


def cmd_benchmark(args) -> int:
    spec = _load_json(args.config)
    spec = _take(spec, {"mode", "dataset", "diffusion", "methods", "k_grid",
                        "repetitions", "gbim", "alphas", "k", "scalability",
                        "seed"}, "benchmark spec")
    master = args.seed if args.seed is not None else spec.get("seed", 0)
    if "dataset" not in spec:
        raise ValidationError("benchmark spec needs a dataset block")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = spec.get("mode", "grid")
    if mode == "grid":
        _benchmark_grid(spec, master, out_dir, args.jobs)
    elif mode == "alpha-sweep":
        _benchmark_alpha_sweep(spec, master, out_dir)
    elif mode == "scalability":
        _benchmark_scalability(spec, master, out_dir)
    else:
        raise ValidationError(f"unknown benchmark mode {mode!r}")
    print(f"benchmark mode={mode} written to {out_dir}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbim",
        description="multiplex influence maximization: dataset preparation, "
                    "seed-set optimization, and experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    prepare = sub.add_parser("prepare", help="build a dataset bundle")
    prepare.add_argument("--config", required=True, help="dataset spec (JSON)")
    prepare.add_argument("--out", required=True, help="output directory")
    prepare.add_argument("--seed", type=int, default=None)
    prepare.set_defaults(func=cmd_prepare)

    optimize = sub.add_parser("optimize", help="run one method on a bundle")
    optimize.add_argument("--bundle", required=True)
    optimize.add_argument("--method", required=True, choices=METHOD_CHOICES)
    optimize.add_argument("--k", type=int, required=True)
    optimize.add_argument("--config", default=None,
                          help="method/diffusion overrides (JSON)")
    optimize.add_argument("--out", required=True)
    optimize.add_argument("--seed", type=int, default=None)
    optimize.set_defaults(func=cmd_optimize)

    benchmark = sub.add_parser("benchmark", help="run an experiment spec")
    benchmark.add_argument("--config", required=True, help="experiment spec (JSON)")
    benchmark.add_argument("--out", required=True)
    benchmark.add_argument("--seed", type=int, default=None)
    benchmark.add_argument("--jobs", type=int, default=1,
                           help="parallel grid cells (determinism preserved)")
    benchmark.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("runtime failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
