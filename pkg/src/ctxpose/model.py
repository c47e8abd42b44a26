"""Toy end-to-end differentiable pipeline with hand-derived gradients.

Forward path: per-joint voxel features -> context attention update -> a
per-joint affine readout (M channels to one score per voxel) -> spatial
softmax -> integral pose regression. Every operation is differentiable, so
the whole pipeline trains end-to-end; the backward pass is written by hand
(including the pairwise-attention normalizer's dependence on the global
attention) and is verified against central finite differences in the tests.

Variants: the baseline skips the context update entirely; "ga only" drops
the pairwise kernels; "pa only" freezes the global attention at uniform.
All variants share the readout so they can be trained identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contextpose import (
    ContextParams,
    context_update,
    global_attention,
    pairwise_kernel,
    uniform_attention,
    zero_params,
)
from .errors import ShapeMismatch, TapeConsumed
from .grid import FeatureVolume, Heatmap, PoseEstimate, VoxelGrid, spatial_softmax
from .skeleton import SkeletonGraph

METHODS = ("contextpose", "baseline", "ga_only", "pa_only")


@dataclass
class ToyModel:
    graph: SkeletonGraph
    grid: VoxelGrid
    priors: dict
    context: ContextParams
    readout_w: np.ndarray  # (N, M)
    readout_b: np.ndarray  # (N,)
    use_context: bool = True
    use_ga: bool = True
    use_pa: bool = True

    def __post_init__(self):
        self.readout_w = np.asarray(self.readout_w, dtype=np.float64)
        self.readout_b = np.asarray(self.readout_b, dtype=np.float64)
        n, m = self.context.n_joints, self.context.channels
        if self.graph.n_joints != n:
            raise ShapeMismatch("graph and context params disagree on joint count")
        if self.readout_w.shape != (n, m) or self.readout_b.shape != (n,):
            raise ShapeMismatch(
                f"readout must be ({n}, {m}) weights and ({n},) biases"
            )

    @property
    def n_joints(self) -> int:
        return self.graph.n_joints

    @property
    def channels(self) -> int:
        return self.context.channels


def init_model(
    graph: SkeletonGraph,
    grid: VoxelGrid,
    priors: dict,
    channels: int,
    method: str = "contextpose",
    readout_scale: float = 20.0,
    alpha: float = 1500.0,
    eps: float = 1e-8,
) -> ToyModel:
    """Fresh model: zero context weights and a readout that reads channel 0.

    With zero context weights every variant computes exactly the baseline
    forward, so ablation arms start from identical behavior.
    """
    if method not in METHODS:
        raise ShapeMismatch(f"method must be one of {METHODS}, got {method!r}")
    n = graph.n_joints
    rw = np.zeros((n, channels))
    rw[:, 0] = readout_scale
    return ToyModel(
        graph=graph,
        grid=grid,
        priors=priors,
        context=zero_params(n, channels, alpha=alpha, eps=eps),
        readout_w=rw,
        readout_b=np.zeros(n),
        use_context=method != "baseline",
        use_ga=method in ("contextpose", "ga_only"),
        use_pa=method in ("contextpose", "pa_only"),
    )


@dataclass
class GradientTape:
    """Intermediates of one forward pass; consumed by a single backward."""

    x: np.ndarray
    y: np.ndarray
    ga: np.ndarray
    kernels: dict
    heat: np.ndarray
    consumed: bool = False


def forward(
    model: ToyModel, x: FeatureVolume
) -> tuple[PoseEstimate, Heatmap, np.ndarray, GradientTape]:
    """Run the pipeline; returns (pose, heatmap, global attention, tape)."""
    if not isinstance(x, FeatureVolume):
        raise ShapeMismatch("forward expects a FeatureVolume")
    if x.grid != model.grid:
        raise ShapeMismatch("feature volume grid differs from model grid")
    if x.n_joints != model.n_joints or x.channels != model.channels:
        raise ShapeMismatch("feature volume does not match model shape")
    n, nv = model.n_joints, model.grid.n_voxels
    kernels: dict = {}
    if model.use_context:
        if model.use_ga:
            ga = global_attention(x, model.context.d)
        else:
            ga = uniform_attention(n, nv)
        if model.use_pa:
            for u in range(n):
                for v in model.graph.neighbors(u):
                    prior = model.priors[(min(u, v), max(u, v))]
                    kernels[(u, v)] = pairwise_kernel(
                        model.grid, prior, ga[v], model.context
                    )
        y = context_update(x, ga, kernels, model.context)
    else:
        ga = uniform_attention(n, nv)
        y = x.values.copy()
    scores = np.einsum("nvm,nm->nv", y, model.readout_w) + model.readout_b[:, None]
    heat = spatial_softmax(scores)
    pose = PoseEstimate(
        joints=heat @ model.grid.centers, confidence=heat.max(axis=1)
    )
    tape = GradientTape(x=x.values, y=y, ga=ga, kernels=kernels, heat=heat)
    return pose, Heatmap(model.grid, heat), ga, tape


def _zero_grads(model: ToyModel) -> dict[str, np.ndarray]:
    return {
        "context.W": np.zeros_like(model.context.W),
        "context.d": np.zeros_like(model.context.d),
        "readout.w": np.zeros_like(model.readout_w),
        "readout.b": np.zeros_like(model.readout_b),
    }


def backward(
    model: ToyModel,
    tape: GradientTape,
    d_pose: np.ndarray | None = None,
    d_heatmap: np.ndarray | None = None,
    d_ga: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of the composed forward.

    Upstream gradients may be given with respect to the pose (N, 3), the
    post-softmax heatmap (N, V), and the global attention (N, V); missing
    ones are treated as zero. Returns gradients for the parameters plus the
    input features under key "input.x". The tape is consumed.
    """
    if tape.consumed:
        raise TapeConsumed("this tape has already been used")
    tape.consumed = True
    n, nv, m = tape.x.shape
    centers = model.grid.centers
    d_pose = np.zeros((n, 3)) if d_pose is None else np.asarray(d_pose, dtype=np.float64)
    d_heat = np.zeros((n, nv)) if d_heatmap is None else np.asarray(d_heatmap, dtype=np.float64)
    d_ga_up = np.zeros((n, nv)) if d_ga is None else np.asarray(d_ga, dtype=np.float64)
    if d_pose.shape != (n, 3) or d_heat.shape != (n, nv) or d_ga_up.shape != (n, nv):
        raise ShapeMismatch("upstream gradient shapes do not match the forward")

    grads = _zero_grads(model)
    heat = tape.heat

    # integral regression: pose = heat @ centers
    dh = d_heat + d_pose @ centers.T
    # spatial softmax
    ds = heat * (dh - np.sum(dh * heat, axis=1, keepdims=True))
    # per-joint affine readout
    grads["readout.w"] = np.einsum("nvm,nv->nm", tape.y, ds)
    grads["readout.b"] = ds.sum(axis=1)
    dy = ds[:, :, None] * model.readout_w[:, None, :]

    if not model.use_context:
        grads["input.x"] = dy
        return grads

    x, ga, w = tape.x, tape.ga, model.context.W
    dx = dy.copy()
    dga = np.zeros((n, nv))
    for u in range(n):
        upstream = dy[u]  # (V, M)
        for v in range(n):
            msgs = x[v] @ w[u, v].T  # (V, M)
            pairwise = tape.kernels.get((u, v))
            if pairwise is not None:
                combined = ga[v][None, :] * pairwise  # (V, V)
                mbar = combined @ x[v]
                grads["context.W"][u, v] += upstream.T @ mbar
                dx[v] += combined.T @ (upstream @ w[u, v])
                if model.use_ga:
                    t = upstream @ msgs.T  # (V, V)
                    s = np.sum(combined * t, axis=1)
                    dga[v] += np.sum(pairwise * (t - s[:, None]), axis=0)
            else:
                # non-connected rule: combined weight is ga[v] for every q
                u_sum = upstream.sum(axis=0)
                grads["context.W"][u, v] += np.outer(u_sum, ga[v] @ x[v])
                dx[v] += ga[v][:, None] * (u_sum @ w[u, v])[None, :]
                if model.use_ga:
                    col = msgs @ u_sum  # (V,)
                    dga[v] += col - ga[v] @ col

    if model.use_ga:
        dga_total = dga + d_ga_up
        dlogits = ga * (dga_total - np.sum(dga_total * ga, axis=1, keepdims=True))
        grads["context.d"] = np.einsum("nvm,nv->nm", x, dlogits)
        dx += dlogits[:, :, None] * model.context.d[:, None, :]

    grads["input.x"] = dx
    return grads


def model_params(model: ToyModel) -> dict[str, np.ndarray]:
    """The trainable arrays, keyed like the gradient dict."""
    return {
        "context.W": model.context.W,
        "context.d": model.context.d,
        "readout.w": model.readout_w,
        "readout.b": model.readout_b,
    }


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def init_adam_state(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps_adam: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction, applied in place."""
    b1, b2 = betas
    state.t += 1
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g**2
        m_hat = state.m[k] / (1.0 - b1**state.t)
        v_hat = state.v[k] / (1.0 - b2**state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps_adam)
    return params, state
