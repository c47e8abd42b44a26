"""Toy training loop: Adam over the end-to-end pipeline, with JSONL logs
and float32 checkpoints.

Checkpoints hold the parameters, the optimizer moments, and the seed in one
container file. Parameters train in float64 but serialize in float32; to
keep a resumed run bit-identical to the run that wrote the checkpoint, the
trainer reloads every checkpoint it writes and continues from the rounded
state. Batch order depends only on (seed, epoch), never on history.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .contextpose import ContextParams
from .errors import ConfigError, DataMismatch
from .grid import VoxelGrid
from .io import read_container, write_container
from .losses import LossConfig, total_loss
from .metrics import mpjpe_p1, mplle
from .model import (
    AdamState,
    ToyModel,
    adam_step,
    backward,
    forward,
    init_adam_state,
    init_model,
    model_params,
)
from .skeleton import LimbPrior, build_graph
from .synthgen import Dataset, sample_rng


def canonical_method(cfg: dict) -> str:
    method = cfg["method"]
    if method == "baseline":
        return "baseline"
    if method != "contextpose":
        raise ConfigError(
            f"method {method!r} has no toy training pipeline; "
            "train supports 'contextpose' and 'baseline' (use infer-psm for psm)"
        )
    ga, pa = cfg["context"]["ga"], cfg["context"]["pa"]
    if ga and pa:
        return "contextpose"
    if ga:
        return "ga_only"
    if pa:
        return "pa_only"
    raise ConfigError("context.ga and context.pa cannot both be false")


def model_from_dataset(cfg: dict, ds: Dataset) -> ToyModel:
    method = canonical_method(cfg)
    return init_model(
        graph=ds.graph,
        grid=ds.grid,
        priors=ds.priors,
        channels=int(ds.config["channels"]),
        method=method,
        readout_scale=cfg["train"]["readout_scale"],
        alpha=cfg["context"]["alpha"],
        eps=max(cfg["context"]["eps"], 1e-300),
    )


def save_checkpoint(path, model: ToyModel, state: AdamState, epoch: int, seed: int) -> None:
    method = (
        "baseline"
        if not model.use_context
        else {(True, True): "contextpose", (True, False): "ga_only", (False, True): "pa_only"}[
            (model.use_ga, model.use_pa)
        ]
    )
    meta = {
        "epoch": epoch,
        "adam_t": state.t,
        "seed": seed,
        "method": method,
        "alpha": model.context.alpha,
        "eps": model.context.eps,
        "channels": model.channels,
        "grid": {
            "dims": list(model.grid.dims),
            "origin": list(model.grid.origin),
            "spacing": list(model.grid.spacing),
        },
        "skeleton": {
            "n_joints": model.graph.n_joints,
            "edges": [list(e) for e in model.graph.edges],
            "priors": [
                {"u": u, "v": v, "mu": model.priors[(u, v)].mu, "sigma": model.priors[(u, v)].sigma}
                for u, v in model.graph.edges
            ],
        },
    }
    arrays = dict(model_params(model))
    for k, m in state.m.items():
        arrays[f"adam.m.{k}"] = m
    for k, v in state.v.items():
        arrays[f"adam.v.{k}"] = v
    write_container(path, meta, arrays)


def load_checkpoint(path) -> tuple[ToyModel, AdamState, int, dict]:
    meta, arrays = read_container(path)
    sk = meta["skeleton"]
    graph = build_graph(sk["n_joints"], sk["edges"])
    priors = {
        (min(r["u"], r["v"]), max(r["u"], r["v"])): LimbPrior(r["mu"], r["sigma"])
        for r in sk["priors"]
    }
    grid = VoxelGrid(
        dims=tuple(meta["grid"]["dims"]),
        origin=tuple(meta["grid"]["origin"]),
        spacing=tuple(meta["grid"]["spacing"]),
    )
    method = meta["method"]
    model = ToyModel(
        graph=graph,
        grid=grid,
        priors=priors,
        context=ContextParams(
            W=arrays["context.W"],
            d=arrays["context.d"],
            alpha=meta["alpha"],
            eps=meta["eps"],
        ),
        readout_w=arrays["readout.w"],
        readout_b=arrays["readout.b"],
        use_context=method != "baseline",
        use_ga=method in ("contextpose", "ga_only"),
        use_pa=method in ("contextpose", "pa_only"),
    )
    params = model_params(model)
    state = AdamState(
        m={k: arrays[f"adam.m.{k}"] for k in params},
        v={k: arrays[f"adam.v.{k}"] for k in params},
        t=int(meta["adam_t"]),
    )
    return model, state, int(meta["epoch"]), meta


def _reload_in_place(path, model: ToyModel, state: AdamState) -> None:
    """Adopt the float32-rounded state just written, so continuing equals
    resuming from this file."""
    _meta, arrays = read_container(path)
    for k, p in model_params(model).items():
        p[...] = arrays[k]
        state.m[k][...] = arrays[f"adam.m.{k}"]
        state.v[k][...] = arrays[f"adam.v.{k}"]


def _epoch_batches(n: int, batch: int, seed: int, epoch: int) -> list[np.ndarray]:
    perm = sample_rng(seed, 9001, epoch).permutation(n)
    return [perm[i : i + batch] for i in range(0, n, batch)]


def train_step(model: ToyModel, ds: Dataset, idx, loss_cfg: LossConfig) -> tuple[dict, float, float]:
    """Mean gradients and mean loss components over one batch."""
    grads_sum: dict[str, np.ndarray] | None = None
    l3d_sum = 0.0
    lga_sum = 0.0
    for i in idx:
        x = ds.load_features(int(i))
        gt = ds.gt_pose(int(i))
        pose, hm, ga, tape = forward(model, x)
        _val, parts, d_pose, d_heat, d_ga = total_loss(pose, gt, hm, ga, loss_cfg)
        grads = backward(model, tape, d_pose, d_heat, d_ga)
        if grads_sum is None:
            grads_sum = {k: grads[k] for k in model_params(model)}
        else:
            for k in grads_sum:
                grads_sum[k] = grads_sum[k] + grads[k]
        l3d_sum += parts["l3d"]
        lga_sum += parts["lga"]
    scale = 1.0 / len(idx)
    grads_mean = {k: g * scale for k, g in grads_sum.items()}
    return grads_mean, l3d_sum * scale, lga_sum * scale


def evaluate_model(model: ToyModel, ds: Dataset) -> dict:
    """Held-out MPJPE (protocol #1) and MPLLE means."""
    p1 = []
    ll = []
    for i in range(len(ds)):
        x = ds.load_features(i)
        gt = ds.gt_pose(i)
        pose, _hm, _ga, _tape = forward(model, x)
        p1.append(mpjpe_p1(pose, gt, root=int(ds.config["root"])))
        ll.append(mplle(pose, gt, ds.graph))
    return {"mpjpe_p1": float(np.mean(p1)), "mplle": float(np.mean(ll))}


def predict_dataset(model: ToyModel, ds: Dataset) -> list:
    preds = []
    for i in range(len(ds)):
        pose, _hm, _ga, _tape = forward(model, ds.load_features(i))
        preds.append(pose)
    return preds


def run_training(
    cfg: dict,
    ds: Dataset,
    out_dir,
    val_ds: Dataset | None = None,
    resume=None,
    log_preamble: dict | None = None,
) -> dict:
    """Train per config; writes train_log.jsonl and checkpoint files.

    Returns a summary with the final checkpoint path and epoch rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg["train"]
    loss_cfg = LossConfig(
        beta=cfg["loss"]["beta"],
        lam=cfg["loss"]["lambda"],
        ga_sigma_mm=cfg["loss"]["ga_sigma_mm"],
    )
    seed = cfg["seed"]

    if resume is not None:
        model, state, start_epoch, _meta = load_checkpoint(resume)
        if model.graph.n_joints != ds.graph.n_joints or model.grid != ds.grid:
            raise DataMismatch("checkpoint does not match the training dataset")
    else:
        model = model_from_dataset(cfg, ds)
        state = init_adam_state(model_params(model))
        start_epoch = 0

    epochs = int(tcfg["epochs"])
    if start_epoch >= epochs:
        raise ConfigError(
            f"nothing to do: checkpoint is at epoch {start_epoch}, config trains {epochs}"
        )

    log_path = out / "train_log.jsonl"
    epoch_rows = []
    with open(log_path, "w") as log:
        preamble = {"event": "start", **(log_preamble or {})}
        log.write(json.dumps(preamble, sort_keys=True) + "\n")
        for epoch in range(start_epoch, epochs):
            l3d_vals = []
            lga_vals = []
            for idx in _epoch_batches(len(ds), int(tcfg["batch"]), seed, epoch):
                grads, l3d, lga = train_step(model, ds, idx, loss_cfg)
                adam_step(
                    model_params(model),
                    grads,
                    state,
                    lr=tcfg["lr"],
                    betas=tuple(tcfg["betas"]),
                )
                l3d_vals.append(l3d)
                lga_vals.append(lga)
            row = {
                "event": "epoch",
                "epoch": epoch + 1,
                "l3d": float(np.mean(l3d_vals)),
                "lga": float(np.mean(lga_vals)),
                "lga_weighted": float(cfg["loss"]["lambda"] * np.mean(lga_vals)),
                "loss": float(np.mean(l3d_vals) + cfg["loss"]["lambda"] * np.mean(lga_vals)),
            }
            if val_ds is not None:
                val = evaluate_model(model, val_ds)
                row["val_mpjpe_p1"] = val["mpjpe_p1"]
                row["val_mplle"] = val["mplle"]
            epoch_rows.append(row)
            log.write(json.dumps(row, sort_keys=True) + "\n")
            every = int(tcfg["checkpoint_every"])
            if every and (epoch + 1) % every == 0 and epoch + 1 < epochs:
                ck = out / f"ckpt_{epoch + 1:04d}.ckpt"
                save_checkpoint(ck, model, state, epoch + 1, seed)
                _reload_in_place(ck, model, state)
        final = out / "checkpoint.ckpt"
        save_checkpoint(final, model, state, epochs, seed)
        log.write(json.dumps({"event": "end", "checkpoint": final.name}, sort_keys=True) + "\n")
    return {"checkpoint": final, "log": log_path, "epochs": epoch_rows, "model": model}
