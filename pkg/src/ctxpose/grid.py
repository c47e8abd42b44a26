"""Regular voxel grids, heatmap utilities, and integral (soft-argmax) regression.

Layout contract: the flat voxel index is x-major. For dims (D, H, W) and
integer coordinates (x, y, z) with x in [0, D), y in [0, H), z in [0, W):

    flat = x * H * W + y * W + z

The center of voxel (x, y, z) is origin + (index + 0.5) * spacing per axis,
in millimeters. This layout is frozen; the volume file format depends on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    IndexOutOfRange,
    NonPositiveSigma,
    ShapeMismatch,
    UnnormalizedHeatmap,
)


@dataclass(frozen=True)
class VoxelGrid:
    """Regular discretization of a 3D box.

    dims: (D, H, W) voxel counts per axis.
    origin: low corner of the box in millimeters.
    spacing: voxel edge lengths in millimeters, per axis.
    """

    dims: tuple[int, int, int]
    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be three positive counts, got {self.dims}")
        if len(origin) != 3:
            raise ValueError("origin must be a 3-vector")
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive lengths, got {self.spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)

    @property
    def n_voxels(self) -> int:
        d, h, w = self.dims
        return d * h * w

    @property
    def extent(self) -> np.ndarray:
        """Physical box edge lengths in millimeters."""
        return np.asarray(self.dims, dtype=np.float64) * np.asarray(self.spacing)

    @cached_property
    def centers(self) -> np.ndarray:
        """(|grid|, 3) voxel-center coordinates in flat-index order."""
        d, h, w = self.dims
        xs, ys, zs = np.meshgrid(
            np.arange(d), np.arange(h), np.arange(w), indexing="ij"
        )
        idx = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3).astype(np.float64)
        return np.asarray(self.origin) + (idx + 0.5) * np.asarray(self.spacing)

    def flat_to_xyz(self, i: int) -> tuple[int, int, int]:
        if not (0 <= i < self.n_voxels):
            raise IndexOutOfRange(f"flat index {i} outside grid of {self.n_voxels}")
        _, h, w = self.dims
        x, rem = divmod(int(i), h * w)
        y, z = divmod(rem, w)
        return x, y, z

    def xyz_to_flat(self, x: int, y: int, z: int) -> int:
        d, h, w = self.dims
        if not (0 <= x < d and 0 <= y < h and 0 <= z < w):
            raise IndexOutOfRange(f"voxel ({x},{y},{z}) outside dims {self.dims}")
        return (x * h + y) * w + z

    def voxel_center(self, i: int) -> np.ndarray:
        """Physical center of the voxel at flat index i."""
        x, y, z = self.flat_to_xyz(i)
        return np.asarray(self.origin) + (np.array([x, y, z], dtype=np.float64) + 0.5) * np.asarray(self.spacing)

    def nearest_voxel(self, point) -> int:
        """Flat index of the voxel whose center is nearest to `point`.

        Points outside the box clamp to the boundary voxel.
        """
        p = np.asarray(point, dtype=np.float64)
        f = (p - np.asarray(self.origin)) / np.asarray(self.spacing) - 0.5
        idx = np.clip(np.rint(f).astype(int), 0, np.asarray(self.dims) - 1)
        return self.xyz_to_flat(*idx)

    def contains(self, point) -> bool:
        """True iff the point lies inside the closed grid box."""
        p = np.asarray(point, dtype=np.float64)
        lo = np.asarray(self.origin)
        return bool(np.all(p >= lo) and np.all(p <= lo + self.extent))

    def pairwise_distances(self) -> np.ndarray:
        """(V, V) Euclidean distances between voxel centers.

        On a regular grid the distance depends only on the integer index
        offset, so norms are precomputed once over offset space and gathered,
        which keeps repeated kernels over the same grid numerically identical.
        """
        dn = _offset_norms(self)
        d, h, w = self.dims
        ix, iy, iz = np.unravel_index(np.arange(self.n_voxels), self.dims)
        gx = ix[:, None] - ix[None, :] + (d - 1)
        gy = iy[:, None] - iy[None, :] + (h - 1)
        gz = iz[:, None] - iz[None, :] + (w - 1)
        return dn[gx, gy, gz]


def _offset_norms(grid: VoxelGrid) -> np.ndarray:
    """Norms of index-offset displacements, cached per grid."""
    cached = _OFFSET_NORM_CACHE.get(grid)
    if cached is None:
        d, h, w = grid.dims
        ox = np.arange(-(d - 1), d)[:, None, None] * grid.spacing[0]
        oy = np.arange(-(h - 1), h)[None, :, None] * grid.spacing[1]
        oz = np.arange(-(w - 1), w)[None, None, :] * grid.spacing[2]
        cached = np.sqrt(ox**2 + oy**2 + oz**2)
        if len(_OFFSET_NORM_CACHE) > 16:
            _OFFSET_NORM_CACHE.clear()
        _OFFSET_NORM_CACHE[grid] = cached
    return cached


_OFFSET_NORM_CACHE: dict[VoxelGrid, np.ndarray] = {}


@dataclass
class PoseEstimate:
    """Continuous 3D joint locations in millimeters with per-joint confidence."""

    joints: np.ndarray  # (N, 3)
    confidence: np.ndarray | None = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise ShapeMismatch(f"joints must be (N, 3), got {self.joints.shape}")
        if self.confidence is None:
            self.confidence = np.ones(self.joints.shape[0])
        else:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
            if self.confidence.shape != (self.joints.shape[0],):
                raise ShapeMismatch("confidence must be one scalar per joint")

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]


@dataclass
class Heatmap:
    """Per-joint scalar field over the voxels of one grid. Shape (N, V)."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_voxels:
            raise ShapeMismatch(
                f"heatmap values must be (N, {self.grid.n_voxels}), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ShapeMismatch("heatmap values must be finite")

    @property
    def n_joints(self) -> int:
        return self.values.shape[0]

    def normalize(self) -> "Heatmap":
        """Scale each joint's field to unit mass. Requires nonnegative values."""
        if np.any(self.values < 0):
            raise UnnormalizedHeatmap("cannot normalize a field with negative values")
        sums = self.values.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise UnnormalizedHeatmap("cannot normalize a joint field with zero mass")
        return Heatmap(self.grid, self.values / sums)


@dataclass
class FeatureVolume:
    """Per-joint, per-voxel feature vectors. Shape (N, V, M)."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[1] != self.grid.n_voxels:
            raise ShapeMismatch(
                f"feature values must be (N, {self.grid.n_voxels}, M), got {self.values.shape}"
            )
        if self.values.shape[2] < 1:
            raise ShapeMismatch("feature width M must be at least 1")
        if not np.all(np.isfinite(self.values)):
            raise ShapeMismatch("feature values must be finite")

    @property
    def n_joints(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def gaussian_heatmap(grid: VoxelGrid, center, sigma_mm: float) -> np.ndarray:
    """Unnormalized 3D Gaussian sampled at voxel centers (peak <= 1).

    Value at voxel k is exp(-||c_k - center||^2 / (2 sigma^2)).
    """
    if not (sigma_mm > 0):
        raise NonPositiveSigma(f"sigma_mm must be > 0, got {sigma_mm}")
    center = np.asarray(center, dtype=np.float64)
    d2 = np.sum((grid.centers - center) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * sigma_mm**2))


def spatial_softmax(field: np.ndarray) -> np.ndarray:
    """Softmax over the last (voxel) axis, max-subtracted for stability."""
    field = np.asarray(field, dtype=np.float64)
    if not np.all(np.isfinite(field)):
        raise ShapeMismatch("softmax input must be finite")
    shifted = field - field.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def integrate_pose(hm: Heatmap, tol: float = 1e-6) -> PoseEstimate:
    """Continuous joint locations as expectations over voxel centers.

    Each joint's field must already be normalized to unit mass; the estimate
    is sum_k c_k * V_u(k) in millimeters. Confidence is the per-joint peak
    value of the normalized field.
    """
    sums = hm.values.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise UnnormalizedHeatmap(
            f"joint {worst} field sums to {sums[worst]:.9f}, expected 1 within {tol}"
        )
    joints = hm.values @ hm.grid.centers
    return PoseEstimate(joints=joints, confidence=hm.values.max(axis=1))
