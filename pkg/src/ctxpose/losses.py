"""Training objective: L1 pose loss with a heatmap regularizer, an
attention supervision loss, and their weighted sum.

The pose term averages per-joint L1 errors and subtracts beta times the log
of the heatmap value read at the ground-truth location, which rewards mass
concentrated near the truth and promotes a Gaussian-shaped field. The
attention term is the mean squared difference between the global attention
maps and unnormalized Gaussian targets (peak 1) centered on the true
joints. Every loss returns its analytic gradients alongside the value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GtOutsideGrid, ShapeMismatch
from .grid import Heatmap, PoseEstimate, VoxelGrid, gaussian_heatmap

DEFAULT_BETA = 1e-2
DEFAULT_LAMBDA = 1e6


@dataclass
class LossConfig:
    """beta weights the heatmap regularizer, lam the attention loss, and
    ga_sigma_mm is the width of the attention target Gaussian (defaults to
    two voxel pitches when left unset)."""

    beta: float = DEFAULT_BETA
    lam: float = DEFAULT_LAMBDA
    ga_sigma_mm: float | None = None

    def __post_init__(self):
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lambda must be nonnegative")
        if self.ga_sigma_mm is not None and not (self.ga_sigma_mm > 0):
            raise ValueError("ga_sigma_mm must be positive")

    def resolve_sigma(self, grid: VoxelGrid) -> float:
        if self.ga_sigma_mm is not None:
            return self.ga_sigma_mm
        return 2.0 * float(np.mean(grid.spacing))


def _check_inside(grid: VoxelGrid, joints: np.ndarray) -> None:
    for u, p in enumerate(joints):
        if not grid.contains(p):
            raise GtOutsideGrid(f"ground-truth joint {u} at {p} lies outside the grid box")


def _trilinear(grid: VoxelGrid, point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Corner flat indices and weights for trilinear interpolation at a point."""
    f = (point - np.asarray(grid.origin)) / np.asarray(grid.spacing) - 0.5
    base = np.floor(f).astype(int)
    frac = f - base
    idxs = []
    wts = []
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner = np.clip(base + (dx, dy, dz), 0, np.asarray(grid.dims) - 1)
                wx = frac[0] if dx else 1.0 - frac[0]
                wy = frac[1] if dy else 1.0 - frac[1]
                wz = frac[2] if dz else 1.0 - frac[2]
                idxs.append(grid.xyz_to_flat(*corner))
                wts.append(wx * wy * wz)
    return np.array(idxs), np.array(wts)


def loss_3d(
    pred: PoseEstimate,
    gt: PoseEstimate,
    hm: Heatmap,
    cfg: LossConfig,
    interpolation: str = "nearest",
) -> tuple[float, np.ndarray, np.ndarray]:
    """L1 pose loss with the heatmap regularizer.

    value = (1/N) sum_u ( ||J_u - J_u^gt||_1 - beta * log V_u(gt) )

    The heatmap is read at the ground truth with nearest-voxel lookup by
    default; pass interpolation="trilinear" for the interpolated reading.
    Returns (value, d_pose, d_heatmap).
    """
    if interpolation not in ("nearest", "trilinear"):
        raise ShapeMismatch(f"unknown interpolation {interpolation!r}")
    n = pred.n_joints
    if gt.n_joints != n or hm.n_joints != n:
        raise ShapeMismatch("pose/heatmap joint counts disagree")
    grid = hm.grid
    _check_inside(grid, gt.joints)
    sums = hm.values.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ShapeMismatch("loss_3d expects a normalized heatmap")

    diff = pred.joints - gt.joints
    value = float(np.abs(diff).sum() / n)
    d_pose = np.sign(diff) / n
    d_heat = np.zeros_like(hm.values)
    if cfg.beta > 0:
        for u in range(n):
            if interpolation == "nearest":
                k = grid.nearest_voxel(gt.joints[u])
                val = hm.values[u, k]
                value -= cfg.beta * float(np.log(val)) / n
                d_heat[u, k] -= cfg.beta / (n * val)
            else:
                idxs, wts = _trilinear(grid, gt.joints[u])
                val = float(hm.values[u, idxs] @ wts)
                value -= cfg.beta * float(np.log(val)) / n
                np.add.at(d_heat[u], idxs, -cfg.beta * wts / (n * val))
    return value, d_pose, d_heat


def ga_target(grid: VoxelGrid, gt: PoseEstimate, sigma_mm: float) -> np.ndarray:
    """Unnormalized Gaussian attention targets, one per joint. (N, V)."""
    _check_inside(grid, gt.joints)
    return np.stack([gaussian_heatmap(grid, p, sigma_mm) for p in gt.joints])


def loss_ga(
    ga: np.ndarray,
    gt: PoseEstimate,
    grid: VoxelGrid,
    cfg: LossConfig,
) -> tuple[float, np.ndarray]:
    """Mean squared error between attention maps and their Gaussian targets.

    value = (1 / (N * V)) * sum_{u,k} (G[u,k] - target[u,k])^2

    Returns (value, d_ga).
    """
    ga = np.asarray(ga, dtype=np.float64)
    n, nv = ga.shape
    if gt.n_joints != n or grid.n_voxels != nv:
        raise ShapeMismatch("attention map does not match pose/grid")
    target = ga_target(grid, gt, cfg.resolve_sigma(grid))
    diff = ga - target
    value = float((diff**2).sum() / (n * nv))
    return value, 2.0 * diff / (n * nv)


def total_loss(
    pred: PoseEstimate,
    gt: PoseEstimate,
    hm: Heatmap,
    ga: np.ndarray,
    cfg: LossConfig,
    interpolation: str = "nearest",
) -> tuple[float, dict, np.ndarray, np.ndarray, np.ndarray]:
    """Weighted sum of the pose and attention losses.

    Returns (value, parts, d_pose, d_heatmap, d_ga) where parts records the
    unweighted components {"l3d", "lga"}. The attention component is always
    evaluated (for logging) but contributes to the value and gradients only
    through its weight.
    """
    l3, d_pose, d_heat = loss_3d(pred, gt, hm, cfg, interpolation=interpolation)
    lg, d_ga = loss_ga(ga, gt, hm.grid, cfg)
    value = l3 + cfg.lam * lg
    return value, {"l3d": l3, "lga": lg}, d_pose, d_heat, cfg.lam * d_ga
