"""Synthetic skeleton data: rigid-limb pose sampling and volume rendering.

Poses are sampled along the kinematic chain: the root lands near the box
center and each child joint extends from its parent by the configured limb
length in a direction drawn from per-edge canonical spherical angles plus a
uniform jitter. Limb lengths are exact by construction, so estimated priors
recover them with zero spread. Rendering places a Gaussian bump at each
visible joint over a uniform noise floor; occluded joints get a flat,
uninformative field (information removal, not wrong peaks). Per-sample RNG
streams are derived from (seed, sample index), so generation order does not
affect content.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BoxTooSmall, ConfigError
from .grid import FeatureVolume, PoseEstimate, VoxelGrid, gaussian_heatmap
from .io import read_volume, write_volume
from .psm import UnaryScores
from .skeleton import LimbPrior, RootedTree, SkeletonGraph, root_tree

PRIOR_SIGMA_FLOOR_MM = 1.0


@dataclass
class SynthConfig:
    """Everything needed to generate one dataset deterministically."""

    seed: int
    n_samples: int
    grid: VoxelGrid
    limb_length_mm: float = 150.0
    angle_range_rad: float = 0.5
    bump_sigma_mm: float = 60.0
    noise: float = 0.1
    occlusion_prob: float = 0.0
    channels: int = 1
    occluded_level: float = 0.1
    root_jitter_mm: float = 0.0
    root: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ConfigError("n_samples must be nonnegative")
        if not (0.0 <= self.occlusion_prob <= 1.0):
            raise ConfigError("occlusion_prob must lie in [0, 1]")
        if self.limb_length_mm <= 0:
            raise ConfigError("limb_length_mm must be positive")
        if self.channels < 1:
            raise ConfigError("channels must be at least 1")


def sample_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream keyed by (seed, *keys); order of use is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def synthetic_priors(g: SkeletonGraph, limb_length_mm: float) -> dict:
    """Priors matching the generator: exact lengths, sigma floored at 1 mm
    so attention kernels keep a usable width."""
    return {
        e: LimbPrior(mu=float(limb_length_mm), sigma=PRIOR_SIGMA_FLOOR_MM)
        for e in g.edges
    }


def _canonical_angles(n_edges: int) -> np.ndarray:
    """Deterministic per-edge (theta, phi): limbs fan out in distinct
    directions so the zero-jitter pose is non-degenerate."""
    ranks = np.arange(n_edges)
    theta = np.pi / 2 + (ranks % 3 - 1) * 0.6
    phi = 2.0 * np.pi * ranks / max(n_edges, 1)
    return np.stack([theta, phi], axis=1)


def sample_pose(
    cfg: SynthConfig,
    tree: RootedTree,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> PoseEstimate:
    """Rigid-limb pose via kinematic-chain sampling, rejected until it fits
    inside the grid box."""
    n = tree.n_joints
    angles = _canonical_angles(max(n - 1, 0))
    box_center = np.asarray(cfg.grid.origin) + 0.5 * cfg.grid.extent
    # edge rank: child joints in BFS order, skipping the root
    rank = {child: i for i, child in enumerate(tree.order[1:])}
    for _ in range(max_tries):
        joints = np.zeros((n, 3))
        jitter = (
            rng.uniform(-cfg.root_jitter_mm, cfg.root_jitter_mm, size=3)
            if cfg.root_jitter_mm > 0
            else np.zeros(3)
        )
        joints[tree.root] = box_center + jitter
        ok = True
        for u in tree.order:
            for child in tree.children[u]:
                theta0, phi0 = angles[rank[child]]
                theta = theta0 + rng.uniform(-cfg.angle_range_rad, cfg.angle_range_rad)
                phi = phi0 + rng.uniform(-cfg.angle_range_rad, cfg.angle_range_rad)
                direction = np.array(
                    [
                        np.sin(theta) * np.cos(phi),
                        np.sin(theta) * np.sin(phi),
                        np.cos(theta),
                    ]
                )
                joints[child] = joints[u] + cfg.limb_length_mm * direction
        for p in joints:
            if not cfg.grid.contains(p):
                ok = False
                break
        if ok:
            return PoseEstimate(joints=joints)
    raise BoxTooSmall(
        f"no pose fit inside the grid box after {max_tries} tries; "
        "enlarge the grid or shorten the limbs"
    )


def render_unaries(
    pose: PoseEstimate,
    grid: VoxelGrid,
    cfg: SynthConfig,
    occluded,
    rng: np.random.Generator,
) -> UnaryScores:
    """Gaussian bump per visible joint plus a uniform noise floor; occluded
    joints render as a flat constant field."""
    n = pose.n_joints
    values = np.zeros((n, grid.n_voxels))
    occluded = set(int(u) for u in occluded)
    for u in range(n):
        noise = rng.uniform(0.0, cfg.noise, size=grid.n_voxels) if cfg.noise > 0 else 0.0
        if u in occluded:
            values[u] = cfg.occluded_level
        else:
            values[u] = gaussian_heatmap(grid, pose.joints[u], cfg.bump_sigma_mm) + noise
    return UnaryScores(grid=grid, values=values)


def render_features(
    pose: PoseEstimate,
    grid: VoxelGrid,
    cfg: SynthConfig,
    occluded,
    rng: np.random.Generator,
) -> FeatureVolume:
    """Channel 0 carries the unary signal; remaining channels carry seeded
    noise (zero when the noise level is zero), so a readout of channel 0 is
    sufficient to localize visible joints."""
    unary = render_unaries(pose, grid, cfg, occluded, rng)
    n, nv, m = pose.n_joints, grid.n_voxels, cfg.channels
    values = np.zeros((n, nv, m))
    values[:, :, 0] = unary.values
    if m > 1:
        extra = rng.normal(0.0, 1.0, size=(n, nv, m - 1)) * cfg.noise
        values[:, :, 1:] = extra
    return FeatureVolume(grid=grid, values=values)


def _sample_occlusion(cfg: SynthConfig, n_joints: int, rng: np.random.Generator) -> list[int]:
    if cfg.occlusion_prob <= 0:
        return []
    draws = rng.uniform(size=n_joints)
    return [int(u) for u in np.flatnonzero(draws < cfg.occlusion_prob)]


def generate_sample(
    cfg: SynthConfig, tree: RootedTree, index: int
) -> tuple[PoseEstimate, list[int], FeatureVolume]:
    """One fully deterministic sample: pose, occluded joints, features."""
    rng = sample_rng(cfg.seed, index)
    pose = sample_pose(cfg, tree, rng)
    occluded = _sample_occlusion(cfg, tree.n_joints, rng)
    features = render_features(pose, cfg.grid, cfg, occluded, rng)
    return pose, occluded, features


def config_as_dict(cfg: SynthConfig) -> dict:
    return {
        "seed": cfg.seed,
        "n_samples": cfg.n_samples,
        "grid": {
            "dims": list(cfg.grid.dims),
            "origin": list(cfg.grid.origin),
            "spacing": list(cfg.grid.spacing),
        },
        "limb_length_mm": cfg.limb_length_mm,
        "angle_range_rad": cfg.angle_range_rad,
        "bump_sigma_mm": cfg.bump_sigma_mm,
        "noise": cfg.noise,
        "occlusion_prob": cfg.occlusion_prob,
        "channels": cfg.channels,
        "occluded_level": cfg.occluded_level,
        "root_jitter_mm": cfg.root_jitter_mm,
        "root": cfg.root,
    }


def generate_dataset(
    cfg: SynthConfig,
    g: SkeletonGraph,
    out_dir,
    threads: int = 1,
) -> dict:
    """Write a dataset directory: manifest.json, poses.csv, volumes/*.vol.

    Sample content depends only on (seed, index), so rendering may run in
    parallel; files are written in index order either way. Returns the
    manifest document.
    """
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    tree = root_tree(g, cfg.root)
    priors = synthetic_priors(g, cfg.limb_length_mm)

    indices = list(range(cfg.n_samples))
    if threads > 1 and indices:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: generate_sample(cfg, tree, i), indices))
    else:
        results = [generate_sample(cfg, tree, i) for i in indices]

    samples = []
    with open(out / "poses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "joint", "x_mm", "y_mm", "z_mm"])
        for i, (pose, occluded, features) in zip(indices, results):
            sid = f"{i:06d}"
            rel = f"volumes/{sid}.vol"
            write_volume(out / rel, cfg.grid, features.values)
            samples.append({"id": sid, "features": rel, "occluded": occluded})
            for u, p in enumerate(pose.joints):
                writer.writerow([sid, u, f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"])

    manifest = {
        "config": config_as_dict(cfg),
        "skeleton": {
            "n_joints": g.n_joints,
            "edges": [list(e) for e in g.edges],
            "names": list(g.names) if g.names is not None else None,
            "priors": [
                {"u": u, "v": v, "mu": priors[(u, v)].mu, "sigma": priors[(u, v)].sigma}
                for u, v in g.edges
            ],
        },
        "samples": samples,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


@dataclass
class Dataset:
    """Loaded dataset: graph, priors, grid, ground truth, and sample index."""

    root_dir: Path
    graph: SkeletonGraph
    priors: dict
    grid: VoxelGrid
    config: dict
    samples: list[dict] = field(default_factory=list)
    poses: np.ndarray | None = None  # (S, N, 3)

    def __len__(self) -> int:
        return len(self.samples)

    def sample_ids(self) -> list[str]:
        return [s["id"] for s in self.samples]

    def load_features(self, i: int) -> FeatureVolume:
        grid, values = read_volume(self.root_dir / self.samples[i]["features"])
        return FeatureVolume(grid=grid, values=values)

    def gt_pose(self, i: int) -> PoseEstimate:
        return PoseEstimate(joints=self.poses[i])


def load_dataset(root_dir) -> Dataset:
    from .skeleton import build_graph

    root = Path(root_dir)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    sk = manifest["skeleton"]
    g = build_graph(sk["n_joints"], sk["edges"], names=sk.get("names"))
    priors = {
        (min(r["u"], r["v"]), max(r["u"], r["v"])): LimbPrior(r["mu"], r["sigma"])
        for r in sk["priors"]
    }
    gcfg = manifest["config"]["grid"]
    grid = VoxelGrid(
        dims=tuple(gcfg["dims"]),
        origin=tuple(gcfg["origin"]),
        spacing=tuple(gcfg["spacing"]),
    )
    samples = manifest["samples"]
    n = g.n_joints
    poses = np.zeros((len(samples), n, 3))
    order = {s["id"]: i for i, s in enumerate(samples)}
    with open(root / "poses.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            i = order[row["sample_id"]]
            poses[i, int(row["joint"])] = (
                float(row["x_mm"]),
                float(row["y_mm"]),
                float(row["z_mm"]),
            )
    return Dataset(
        root_dir=root,
        graph=g,
        priors=priors,
        grid=grid,
        config=manifest["config"],
        samples=samples,
        poses=poses,
    )
