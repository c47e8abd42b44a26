"""Command-line entry point.

Subcommands: generate, infer-psm (alias psm-infer), train, eval, compare,
gradcheck. Shared flags: --config, --seed (overrides the config seed),
--threads, --out (overrides the config output dir). The CTXPOSE_LOG
environment variable sets log verbosity (DEBUG/INFO/WARNING).

Exit codes: 0 ok, 2 config error, 3 graph error, 4 data mismatch,
1 internal error. Every output artifact is machine-readable and
deterministic given (config, seed); wall-clock timestamps appear only in
the training log preamble.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .config import load_config
from .errors import (
    ConfigError,
    CtxposeError,
    CyclicGraph,
    DataMismatch,
    DisconnectedGraph,
)
from .gradcheck import gradient_check
from .grid import PoseEstimate, VoxelGrid
from .io import read_volume
from .metrics import evaluate_poses, mpjpe_p1
from .psm import (
    BRUTE_FORCE_CAP,
    PsmConfig,
    UnaryScores,
    brute_force_map,
    decode_assignment,
    default_epsilon,
    dp_map,
    reproject_check,
)
from .skeleton import load_skeleton, root_tree
from .synthgen import SynthConfig, generate_dataset, load_dataset
from .train import load_checkpoint, predict_dataset, run_training

log = logging.getLogger("ctxpose")


def _setup_logging() -> None:
    level = os.environ.get("CTXPOSE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _require(cfg_or_args_value, what: str):
    if cfg_or_args_value is None:
        raise ConfigError(f"missing required {what}")
    return cfg_or_args_value


def _load_skeleton_file(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"skeleton file not found: {p}")
    return load_skeleton(p)


def _out_dir(args, cfg) -> Path:
    out = args.out or (cfg or {}).get("out")
    out = Path(_require(out, "output dir (--out or config.out)"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = load_config(_require(args.config, "--config"))
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = _out_dir(args, cfg)
    if cfg["synth"] is None:
        raise ConfigError("generate needs a 'synth' section in the config")
    grid = cfg["grid"]
    if grid is None:
        raise ConfigError("generate needs a 'grid' section in the config")
    g, _priors = _load_skeleton_file(_require(cfg.get("skeleton"), "config.skeleton"))
    synth = SynthConfig(seed=seed, grid=grid, **cfg["synth"])
    manifest = generate_dataset(synth, g, out, threads=args.threads)
    summary = {
        "out": str(out),
        "n_samples": len(manifest["samples"]),
        "n_joints": g.n_joints,
        "grid_dims": list(grid.dims),
        "seed": seed,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _unary_from_features(grid: VoxelGrid, values: np.ndarray) -> UnaryScores:
    # channel 0 carries the appearance signal
    return UnaryScores(grid=grid, values=np.ascontiguousarray(values[:, :, 0]))


def cmd_infer_psm(args) -> int:
    if args.dataset is None and args.unary is None:
        raise ConfigError("infer-psm needs --dataset or --unary")

    if args.dataset is not None:
        ds = load_dataset(args.dataset)
        graph, priors, grid = ds.graph, ds.priors, ds.grid
        if args.skeleton is not None:
            graph, file_priors = _load_skeleton_file(args.skeleton)
            if file_priors is not None:
                priors = file_priors
        items = [
            (ds.samples[i]["id"], _unary_from_features(grid, ds.load_features(i).values), ds.gt_pose(i))
            for i in range(len(ds))
        ]
    else:
        graph, priors = _load_skeleton_file(_require(args.skeleton, "--skeleton"))
        grid, values = read_volume(args.unary)
        if values.shape[2] != 1:
            values = values[:, :, :1]
        items = [("000000", UnaryScores(grid=grid, values=values[:, :, 0]), None)]

    if priors is None:
        raise ConfigError("no limb priors available (skeleton file lacks 'priors')")
    tree = root_tree(graph, args.root)
    eps = args.epsilon if args.epsilon is not None else default_epsilon(grid)
    cfg = PsmConfig(epsilon_mm=eps)

    records = []
    joint_errs = []
    limb_errs = []
    disagreements = 0
    oracle_runs = 0
    for sid, unary, gt in items:
        assign, en = dp_map(unary, tree, priors, cfg)
        rec = {
            "id": sid,
            "assignment": [int(a) for a in assign],
            "centers": [[float(c) for c in row] for row in grid.centers[assign]],
            "energy": en,
        }
        if gt is not None:
            limb_err, joint_err = reproject_check(assign, grid, gt, graph)
            rec["joint_err_mm"] = joint_err
            rec["limb_err_mm"] = limb_err
            rec["mpjpe_p1"] = mpjpe_p1(decode_assignment(assign, grid), gt, root=args.root)
            joint_errs.append(joint_err)
            limb_errs.append(limb_err)
        if args.oracle:
            if grid.n_voxels ** graph.n_joints <= BRUTE_FORCE_CAP:
                bf_assign, bf_en = brute_force_map(unary, graph, priors, cfg)
                agree = bool(np.array_equal(bf_assign, assign) and bf_en == en)
                rec["oracle_agrees"] = agree
                oracle_runs += 1
                disagreements += not agree
            else:
                rec["oracle_agrees"] = None
        records.append(rec)

    result = {"epsilon_mm": eps, "root": args.root, "samples": records, "aggregate": {}}
    if joint_errs:
        result["aggregate"]["mean_joint_err_mm"] = float(np.mean(joint_errs))
        result["aggregate"]["mean_limb_err_mm"] = float(np.mean(limb_errs))
    if args.oracle:
        result["aggregate"]["oracle_runs"] = oracle_runs
        result["aggregate"]["oracle_disagreements"] = disagreements

    out = Path(_require(args.out, "--out"))
    if out.suffix == ".json":
        out.parent.mkdir(parents=True, exist_ok=True)
        path = out
    else:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "psm_result.json"
    report.write_json(path, result)
    print(json.dumps({"out": str(path), **result["aggregate"]}, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(_require(args.config, "--config"))
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args, cfg)
    ds = load_dataset(_require(cfg.get("dataset"), "config.dataset"))
    val_ds = load_dataset(cfg["val_dataset"]) if cfg.get("val_dataset") else None
    preamble = {"time": time.strftime("%Y-%m-%dT%H:%M:%S"), "seed": cfg["seed"], "method": cfg["method"]}
    summary = run_training(
        cfg, ds, out, val_ds=val_ds, resume=args.resume, log_preamble=preamble
    )
    report.write_training_curves(out, summary["epochs"])
    last = summary["epochs"][-1]
    print(
        json.dumps(
            {
                "checkpoint": str(summary["checkpoint"]),
                "epochs": last["epoch"],
                "final_loss": last["loss"],
            },
            sort_keys=True,
        )
    )
    return 0


def _read_pred_csv(path, n_joints: int) -> dict[str, np.ndarray]:
    poses: dict[str, np.ndarray] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = row["sample_id"]
            if sid not in poses:
                poses[sid] = np.zeros((n_joints, 3))
            poses[sid][int(row["joint"])] = (
                float(row["x_mm"]),
                float(row["y_mm"]),
                float(row["z_mm"]),
            )
    return poses


def cmd_eval(args) -> int:
    ds = load_dataset(_require(args.dataset, "--dataset"))
    out = Path(_require(args.out, "--out"))
    root = int(ds.config["root"])
    gts = [ds.gt_pose(i) for i in range(len(ds))]
    ids = ds.sample_ids()
    if args.checkpoint is not None:
        model, _state, _epoch, _meta = load_checkpoint(args.checkpoint)
        if model.grid != ds.grid or model.graph.n_joints != ds.graph.n_joints:
            raise DataMismatch("checkpoint grid/skeleton does not match the dataset")
        preds = predict_dataset(model, ds)
    elif args.pred is not None:
        by_id = _read_pred_csv(args.pred, ds.graph.n_joints)
        missing = [s for s in ids if s not in by_id]
        extra = sorted(set(by_id) - set(ids))
        if missing or extra:
            raise DataMismatch(
                f"prediction sample set differs from dataset (missing {missing[:5]}, extra {extra[:5]})"
            )
        preds = [PoseEstimate(joints=by_id[s]) for s in ids]
    else:
        raise ConfigError("eval needs --checkpoint or --pred")

    rep, rows = evaluate_poses(
        preds, gts, ds.graph, root=root, with_scale=args.with_scale, sample_ids=ids
    )
    report.write_eval_report(out, rep, rows, with_scale=args.with_scale)
    with open(out / "poses_pred.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "joint", "x_mm", "y_mm", "z_mm"])
        for sid, pose in zip(ids, preds):
            for u, p in enumerate(pose.joints):
                writer.writerow([sid, u, f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"])
    print(json.dumps({"out": str(out), **rep.as_dict()}, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    rows_a = report.load_per_sample(args.run_a)
    rows_b = report.load_per_sample(args.run_b)
    out = Path(_require(args.out, "--out"))
    summary = report.write_compare_report(out, rows_a, rows_b, metric=args.metric)
    print(json.dumps({"out": str(out), **summary}, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + args.instances)
    results = [gradient_check(s) for s in seeds]
    worst = max(r["max_rel_err"] for r in results)
    doc = {
        "instances": args.instances,
        "first_seed": args.seed,
        "max_rel_err": worst,
        "tolerance": args.tolerance,
        "passed": bool(worst < args.tolerance),
        "per_instance": [
            {"seed": r["seed"], "max_rel_err": r["max_rel_err"]} for r in results
        ],
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / "gradcheck.json", doc)
    print(json.dumps({"max_rel_err": worst, "passed": doc["passed"]}, sort_keys=True))
    return 0 if doc["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="experiment config JSON")
    shared.add_argument("--seed", type=int, help="override the config seed")
    shared.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1,
        help="worker threads for parallel sections (default: cores)",
    )
    shared.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="ctxpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[shared], help="write a synthetic dataset")

    p = sub.add_parser(
        "infer-psm", parents=[shared], aliases=["psm-infer"],
        help="tree dynamic-programming pose inference",
    )
    p.add_argument("--dataset", help="dataset directory (uses channel 0 as unary)")
    p.add_argument("--unary", help="single unary volume file")
    p.add_argument("--skeleton", help="skeleton JSON (required with --unary)")
    p.add_argument("--root", type=int, default=0, help="tree root joint")
    p.add_argument("--epsilon", type=float, help="window half-width in mm (default: half voxel diagonal)")
    p.add_argument("--oracle", action="store_true", help="cross-check against brute force when feasible")

    p = sub.add_parser("train", parents=[shared], help="train the toy pipeline")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("eval", parents=[shared], help="evaluate predictions against a dataset")
    p.add_argument("--dataset", help="dataset directory with ground truth")
    p.add_argument("--checkpoint", help="model checkpoint to run")
    p.add_argument("--pred", help="predictions CSV (sample_id, joint, x_mm, y_mm, z_mm)")
    p.add_argument("--with-scale", action="store_true", help="also report scale-corrected protocol #2")

    p = sub.add_parser("compare", parents=[shared], help="per-sample difference of two eval runs")
    p.add_argument("--run-a", required=True, help="eval output dir (reference)")
    p.add_argument("--run-b", required=True, help="eval output dir (candidate)")
    p.add_argument("--metric", default="mplle", choices=["mplle", "mpjpe_p1", "mpjpe_p2", "mplae"])

    p = sub.add_parser("gradcheck", parents=[shared], help="finite-difference gradient verification")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-5)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "infer-psm": cmd_infer_psm,
    "psm-infer": cmd_infer_psm,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    seed_default = getattr(args, "seed", None)
    if args.command == "gradcheck" and seed_default is None:
        args.seed = 0
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CyclicGraph, DisconnectedGraph) as exc:
        print(f"graph error: {exc}", file=sys.stderr)
        return 3
    except DataMismatch as exc:
        print(f"data mismatch: {exc}", file=sys.stderr)
        return 4
    except CtxposeError as exc:
        log.debug("internal error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        log.debug("unexpected error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
