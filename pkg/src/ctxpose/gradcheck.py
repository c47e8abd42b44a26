"""Finite-difference verification of the hand-derived gradients.

Builds small random end-to-end instances (attention on a tiny grid through
the readout, softmax, integral regression, and the full training loss) and
compares every analytic parameter gradient against central differences with
a per-parameter step scaled to the parameter magnitude.
"""

from __future__ import annotations

import numpy as np

from .contextpose import ContextParams
from .grid import FeatureVolume, PoseEstimate, VoxelGrid
from .losses import LossConfig, total_loss
from .model import ToyModel, backward, forward, model_params
from .skeleton import LimbPrior, build_graph


def random_instance(
    seed: int,
    n_joints: int = 2,
    dims: tuple[int, int, int] = (2, 2, 2),
    channels: int = 2,
    method: str = "contextpose",
):
    """A random trainable instance: (model, features, gt pose, loss config)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 424242]))
    grid = VoxelGrid(dims=dims, origin=(0.0, 0.0, 0.0), spacing=(100.0, 100.0, 100.0))
    graph = build_graph(n_joints, [(i, i + 1) for i in range(n_joints - 1)])
    priors = {
        e: LimbPrior(mu=float(rng.uniform(80.0, 180.0)), sigma=float(rng.uniform(1.0, 30.0)))
        for e in graph.edges
    }
    params = ContextParams(
        W=rng.normal(0.0, 0.4, size=(n_joints, n_joints, channels, channels)),
        d=rng.normal(0.0, 0.5, size=(n_joints, channels)),
    )
    readout_w = rng.normal(0.0, 1.0, size=(n_joints, channels))
    readout_w[:, 0] += 2.0
    model = ToyModel(
        graph=graph,
        grid=grid,
        priors=priors,
        context=params,
        readout_w=readout_w,
        readout_b=rng.normal(0.0, 0.5, size=n_joints),
        use_context=method != "baseline",
        use_ga=method in ("contextpose", "ga_only"),
        use_pa=method in ("contextpose", "pa_only"),
    )
    x = FeatureVolume(grid, rng.normal(0.0, 1.0, size=(n_joints, grid.n_voxels, channels)))
    margin = 0.1 * grid.extent
    lo = np.asarray(grid.origin) + margin
    hi = np.asarray(grid.origin) + grid.extent - margin
    gt = PoseEstimate(joints=rng.uniform(lo, hi, size=(n_joints, 3)))
    cfg = LossConfig(beta=1e-2, lam=1e6, ga_sigma_mm=150.0)
    return model, x, gt, cfg


def loss_value(model, x, gt, cfg) -> float:
    pose, hm, ga, _tape = forward(model, x)
    value, _parts, _dp, _dh, _dg = total_loss(pose, gt, hm, ga, cfg)
    return value


def gradient_check(
    seed: int, h_rel: float = 1e-4, method: str = "contextpose"
) -> dict:
    """Max relative error between analytic and central-difference gradients.

    Relative error uses max(|analytic|, |numeric|, 1) in the denominator so
    near-zero gradients are judged on absolute error.
    """
    model, x, gt, cfg = random_instance(seed, method=method)
    pose, hm, ga, tape = forward(model, x)
    _value, _parts, d_pose, d_heat, d_ga = total_loss(pose, gt, hm, ga, cfg)
    analytic = backward(model, tape, d_pose, d_heat, d_ga)

    per_param: dict[str, float] = {}
    for key, arr in model_params(model).items():
        flat = arr.ravel()
        ana = analytic[key].ravel()
        worst = 0.0
        for i in range(flat.size):
            theta = flat[i]
            h = h_rel * max(1.0, abs(theta))
            flat[i] = theta + h
            fp = loss_value(model, x, gt, cfg)
            flat[i] = theta - h
            fm = loss_value(model, x, gt, cfg)
            flat[i] = theta
            numeric = (fp - fm) / (2.0 * h)
            err = abs(ana[i] - numeric) / max(abs(ana[i]), abs(numeric), 1.0)
            worst = max(worst, err)
        per_param[key] = worst
    return {
        "seed": seed,
        "method": method,
        "max_rel_err": max(per_param.values()),
        "per_param": per_param,
    }


def input_gradient_check(seed: int, h_rel: float = 1e-4) -> float:
    """Finite-difference check of the gradient with respect to the input
    features; returns the max relative error."""
    model, x, gt, cfg = random_instance(seed)
    pose, hm, ga, tape = forward(model, x)
    _value, _parts, d_pose, d_heat, d_ga = total_loss(pose, gt, hm, ga, cfg)
    analytic = backward(model, tape, d_pose, d_heat, d_ga)["input.x"].ravel()
    flat = x.values.ravel()
    worst = 0.0
    for i in range(flat.size):
        theta = flat[i]
        h = h_rel * max(1.0, abs(theta))
        flat[i] = theta + h
        fp = loss_value(model, x, gt, cfg)
        flat[i] = theta - h
        fm = loss_value(model, x, gt, cfg)
        flat[i] = theta
        numeric = (fp - fm) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1.0))
    return worst
