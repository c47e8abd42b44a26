"""Attention-based context module over per-joint voxel features.

Each joint's features at every voxel receive a residual update: a convex
combination of linearly transformed features of all joints at all voxels.
The combination weight factors into a global attention G (a per-joint
softmax over voxels of a learned score, concentrating weight where the
joint is likely to be) and a pairwise attention P (a Gaussian of the
deviation of the voxel pair's distance from the prior limb length, with
tolerance governed by alpha * sigma^2). For each query voxel the product
G * P is normalized to sum to one over voxels. Joint pairs not connected
by a limb use P = 1, so their weights reduce to the global attention,
which is already normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNormalizer, ShapeMismatch
from .grid import FeatureVolume, VoxelGrid, spatial_softmax
from .skeleton import LimbPrior, SkeletonGraph

DEFAULT_ALPHA = 1500.0
DEFAULT_EPS = 1e-8


@dataclass
class ContextParams:
    """Learnable parameters: per-pair feature transforms W[u,v] (M x M),
    per-joint attention vectors d[v], and the kernel constants.

    alpha widens the tolerance to limb-length deviation (dimensionless;
    all lengths are millimeters). eps keeps the kernel denominator positive
    even for zero-sigma priors, in mm^2.
    """

    W: np.ndarray  # (N, N, M, M)
    d: np.ndarray  # (N, M)
    alpha: float = DEFAULT_ALPHA
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.W.ndim != 4 or self.W.shape[0] != self.W.shape[1] or self.W.shape[2] != self.W.shape[3]:
            raise ShapeMismatch(f"W must be (N, N, M, M), got {self.W.shape}")
        if self.W.shape[2] < 1:
            raise ShapeMismatch("feature width M must be at least 1")
        if self.d.shape != (self.W.shape[0], self.W.shape[2]):
            raise ShapeMismatch(
                f"d must be ({self.W.shape[0]}, {self.W.shape[2]}), got {self.d.shape}"
            )
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.d))):
            raise ShapeMismatch("parameters must be finite")
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not (self.eps > 0):
            raise ValueError(f"eps must be > 0, got {self.eps}")

    @property
    def n_joints(self) -> int:
        return self.W.shape[0]

    @property
    def channels(self) -> int:
        return self.W.shape[2]


def zero_params(n_joints: int, channels: int, alpha: float = DEFAULT_ALPHA, eps: float = DEFAULT_EPS) -> ContextParams:
    return ContextParams(
        W=np.zeros((n_joints, n_joints, channels, channels)),
        d=np.zeros((n_joints, channels)),
        alpha=alpha,
        eps=eps,
    )


def random_params(
    n_joints: int,
    channels: int,
    rng: np.random.Generator,
    scale: float = 0.5,
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
) -> ContextParams:
    return ContextParams(
        W=rng.normal(0.0, scale, size=(n_joints, n_joints, channels, channels)),
        d=rng.normal(0.0, scale, size=(n_joints, channels)),
        alpha=alpha,
        eps=eps,
    )


def save_params(path, params: ContextParams) -> None:
    """Write attention parameters to the container format, transforms keyed
    per (u, v) alongside the per-joint attention vectors."""
    from .io import write_container

    n = params.n_joints
    arrays = {f"W:{u}:{v}": params.W[u, v] for u in range(n) for v in range(n)}
    for v in range(n):
        arrays[f"d:{v}"] = params.d[v]
    write_container(path, {"n_joints": n, "alpha": params.alpha, "eps": params.eps}, arrays)


def load_params(path) -> ContextParams:
    from .io import read_container

    meta, arrays = read_container(path)
    n = int(meta["n_joints"])
    m = arrays["d:0"].shape[0]
    w = np.zeros((n, n, m, m))
    d = np.zeros((n, m))
    for u in range(n):
        d[u] = arrays[f"d:{u}"]
        for v in range(n):
            w[u, v] = arrays[f"W:{u}:{v}"]
    return ContextParams(W=w, d=d, alpha=float(meta["alpha"]), eps=float(meta["eps"]))


def export_attention(path, grid: VoxelGrid, ga: np.ndarray) -> None:
    """Write attention maps to the volume file format for inspection."""
    from .io import write_volume

    write_volume(path, grid, np.asarray(ga, dtype=np.float64))


def _feature_values(x) -> np.ndarray:
    v = x.values if isinstance(x, FeatureVolume) else np.asarray(x, dtype=np.float64)
    if v.ndim != 3:
        raise ShapeMismatch(f"features must be (N, V, M), got {v.shape}")
    return v


def global_attention(x, d: np.ndarray) -> np.ndarray:
    """Per-joint softmax over voxels of the inner product d_v . x_{v,k}.

    Returns (N, V) weights, each row nonnegative and summing to 1.
    """
    v = _feature_values(x)
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (v.shape[0], v.shape[2]):
        raise ShapeMismatch(f"d must be ({v.shape[0]}, {v.shape[2]}), got {d.shape}")
    logits = np.einsum("nvm,nm->nv", v, d)
    return spatial_softmax(logits)


def uniform_attention(n_joints: int, n_voxels: int) -> np.ndarray:
    return np.full((n_joints, n_voxels), 1.0 / n_voxels)


def kernel_unnormalized(grid: VoxelGrid, prior: LimbPrior, alpha: float, eps: float) -> np.ndarray:
    """(V, V) Gaussian-of-distance kernel exp(-(||q-k|| - mu)^2 / (2 alpha sigma^2 + eps)).

    Symmetric in (q, k). On a regular grid the distance depends only on the
    index offset, so the underlying exponentials are evaluated once over
    offset space and gathered into the full table.
    """
    from .grid import _offset_norms

    denom = 2.0 * alpha * prior.sigma**2 + eps
    table = np.exp(-((_offset_norms(grid) - prior.mu) ** 2) / denom)
    d, h, w = grid.dims
    ix, iy, iz = np.unravel_index(np.arange(grid.n_voxels), grid.dims)
    return table[
        ix[:, None] - ix[None, :] + (d - 1),
        iy[:, None] - iy[None, :] + (h - 1),
        iz[:, None] - iz[None, :] + (w - 1),
    ]


def pairwise_kernel(
    grid: VoxelGrid,
    prior: LimbPrior,
    ga_v: np.ndarray,
    params: ContextParams,
) -> np.ndarray:
    """Normalized pairwise attention P[q, k] for one connected ordered pair.

    Each row is the unnormalized kernel divided by the attention-weighted
    normalizer Z[q] = sum_k G[v,k] * kernel[q,k], so that
    sum_k G[v,k] * P[q,k] = 1 for every query voxel q. The normalizer mixes
    magnitudes across all voxels and is accumulated in extended precision.
    Raises DegenerateNormalizer when Z underflows to zero, which signals
    that alpha * sigma^2 + eps is too small for the grid scale.
    """
    ga_v = np.asarray(ga_v, dtype=np.float64)
    if ga_v.shape != (grid.n_voxels,):
        raise ShapeMismatch(f"ga row must be ({grid.n_voxels},), got {ga_v.shape}")
    kern = kernel_unnormalized(grid, prior, params.alpha, params.eps)
    z = np.sum(kern * ga_v[None, :], axis=1, dtype=np.longdouble).astype(np.float64)
    if np.any(z <= 0.0):
        raise DegenerateNormalizer(
            "pairwise normalizer underflowed; increase alpha, sigma, or eps"
        )
    return kern / z[:, None]


def non_connected_rule(u: int, v: int, g: SkeletonGraph, grid: VoxelGrid) -> np.ndarray:
    """All-ones kernel for a pair without a limb: combined weights reduce to
    the global attention, which is already normalized."""
    if g.has_edge(u, v):
        raise ShapeMismatch(f"({u},{v}) is a skeleton edge; the rule applies to non-edges")
    return np.ones((grid.n_voxels, grid.n_voxels))


def context_update(
    x,
    ga: np.ndarray,
    kernels: dict[tuple[int, int], np.ndarray],
    params: ContextParams,
) -> np.ndarray:
    """Residual update y[u,q] = x[u,q] + sum_v sum_k G[v,k] P[q,k] W[u,v] x[v,k].

    The inner sum runs over every joint v (including u itself): connected
    pairs use their normalized kernel from `kernels`, all other pairs fall
    back to the non-connected rule, where the message collapses to one
    G-weighted average shared by all query voxels.
    """
    xv = _feature_values(x)
    n, nv, _ = xv.shape
    if ga.shape != (n, nv):
        raise ShapeMismatch(f"ga must be ({n}, {nv}), got {ga.shape}")
    if params.n_joints != n or params.channels != xv.shape[2]:
        raise ShapeMismatch("params do not match feature shape")
    y = xv.copy()
    for u in range(n):
        for v in range(n):
            msgs = xv[v] @ params.W[u, v].T  # (V, M)
            p = kernels.get((u, v))
            if p is not None:
                combined = ga[v][None, :] * p  # (V, V)
                y[u] += combined @ msgs
            else:
                # non-connected rule: P = 1, weights reduce to G alone and
                # the message is the same for every query voxel
                y[u] += (ga[v] @ msgs)[None, :]
    return y


def context_forward(
    x,
    g: SkeletonGraph,
    priors: dict,
    params: ContextParams,
    use_ga: bool = True,
    use_pa: bool = True,
) -> tuple[FeatureVolume, np.ndarray]:
    """Full module: global attention, per-pair kernels, residual update.

    Returns the updated feature volume and the global attention map (the
    latter also feeds the attention supervision loss). `use_ga=False`
    freezes the attention at uniform; `use_pa=False` drops the pairwise
    kernels so every pair follows the non-connected rule.
    """
    if not isinstance(x, FeatureVolume):
        raise ShapeMismatch("context_forward expects a FeatureVolume")
    n, nv = x.n_joints, x.grid.n_voxels
    if params.n_joints != n or params.channels != x.channels:
        raise ShapeMismatch("params do not match feature volume")
    ga = global_attention(x, params.d) if use_ga else uniform_attention(n, nv)
    kernels: dict[tuple[int, int], np.ndarray] = {}
    if use_pa:
        for u in range(n):
            for v in g.neighbors(u):
                prior = priors[(min(u, v), max(u, v))]
                kernels[(u, v)] = pairwise_kernel(x.grid, prior, ga[v], params)
    y = context_update(x, ga, kernels, params)
    return FeatureVolume(x.grid, y), ga
