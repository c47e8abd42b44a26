"""Pictorial structure model on a voxel grid.

The model scores a joint-to-voxel assignment by the product of per-joint
appearance likelihoods and hard limb-length compatibility terms over the
skeleton edges. `brute_force_map` maximizes by exhaustive enumeration;
`dp_map` runs max-product dynamic programming on a rooted tree, passing
messages leaf-to-root and backtracking the argmax. Both solvers work in
log space internally so long chains of sub-unit factors cannot underflow,
and both report the linear-scale energy of the assignment they return.

Tie-breaking is the lowest flat voxel index at every decision point; for
brute force this is equivalent to returning the lexicographically smallest
optimal index vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import SearchSpaceTooLarge, ShapeMismatch
from .grid import PoseEstimate, VoxelGrid
from .skeleton import LimbPrior, RootedTree, SkeletonGraph, build_graph

BRUTE_FORCE_CAP = 1_000_000


@dataclass(frozen=True)
class PsmConfig:
    """Tolerance window half-width for the hard pairwise term, in mm."""

    epsilon_mm: float

    def __post_init__(self):
        if not (self.epsilon_mm > 0):
            raise ValueError(f"epsilon_mm must be > 0, got {self.epsilon_mm}")


def default_epsilon(grid: VoxelGrid) -> float:
    """Half the voxel diagonal: the smallest window that always admits the
    discretization error of neighboring voxels."""
    return 0.5 * float(np.linalg.norm(grid.spacing))


@dataclass
class UnaryScores:
    """Per-joint nonnegative appearance likelihood over the voxels. (N, V)."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_voxels:
            raise ShapeMismatch(
                f"unary values must be (N, {self.grid.n_voxels}), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ShapeMismatch("unary values must be finite and nonnegative")

    @property
    def n_joints(self) -> int:
        return self.values.shape[0]


def hard_pairwise(q, k, prior: LimbPrior, cfg: PsmConfig) -> int:
    """1 iff the distance between points q and k lies in the closed window
    [mu - epsilon, mu + epsilon], else 0."""
    dist = float(np.linalg.norm(np.asarray(q, dtype=np.float64) - np.asarray(k, dtype=np.float64)))
    return int(prior.mu - cfg.epsilon_mm <= dist <= prior.mu + cfg.epsilon_mm)


def _window_mask(dist: np.ndarray, prior: LimbPrior, cfg: PsmConfig) -> np.ndarray:
    return (dist >= prior.mu - cfg.epsilon_mm) & (dist <= prior.mu + cfg.epsilon_mm)


def energy(
    assign: np.ndarray,
    unary: UnaryScores,
    g: SkeletonGraph,
    priors: dict,
    cfg: PsmConfig,
) -> float:
    """Energy of one assignment: product of unaries times pairwise terms.

    Each unordered edge contributes exactly one factor. Computed as a plain
    product; at desk scale (dozens of joints) this cannot underflow.
    """
    assign = np.asarray(assign, dtype=int)
    if assign.shape != (unary.n_joints,):
        raise ShapeMismatch(f"assignment must be ({unary.n_joints},), got {assign.shape}")
    centers = unary.grid.centers
    total = 1.0
    for u in range(unary.n_joints):
        total *= unary.values[u, assign[u]]
    for u, v in g.edges:
        if not hard_pairwise(centers[assign[u]], centers[assign[v]], priors[(u, v)], cfg):
            return 0.0
    return float(total)


def brute_force_map(
    unary: UnaryScores,
    g: SkeletonGraph,
    priors: dict,
    cfg: PsmConfig,
    cap: int = BRUTE_FORCE_CAP,
) -> tuple[np.ndarray, float]:
    """Globally optimal assignment by exhaustive enumeration.

    The full |grid|^N table of log energies is materialized, so the search
    space is capped (default 10^6 assignments). Ties break to the
    lexicographically smallest index vector.
    """
    n, v = unary.n_joints, unary.grid.n_voxels
    if v**n > cap:
        raise SearchSpaceTooLarge(f"{v}^{n} assignments exceed cap {cap}")
    with np.errstate(divide="ignore"):
        log_unary = np.log(unary.values)
    dist = unary.grid.pairwise_distances()
    total = np.zeros((v,) * n)
    for u in range(n):
        shape = [1] * n
        shape[u] = v
        total = total + log_unary[u].reshape(shape)
    with np.errstate(divide="ignore"):
        for u, w in g.edges:
            shape = [1] * n
            shape[u] = v
            shape[w] = v
            mask = _window_mask(dist, priors[(u, w)], cfg)
            total = total + np.where(mask, 0.0, -np.inf).reshape(shape)
    # C-order argmax scans assignments in lexicographic order and keeps the
    # first maximum, which is exactly the tie-break contract
    best = int(np.argmax(total))
    assign = np.array(np.unravel_index(best, (v,) * n), dtype=int)
    return assign, energy(assign, unary, g, priors, cfg)


def dp_map(
    unary: UnaryScores,
    tree: RootedTree,
    priors: dict,
    cfg: PsmConfig,
) -> tuple[np.ndarray, float]:
    """Max-product dynamic programming on a rooted tree, with backtracking.

    Upward pass: the log-likelihood of the subtree rooted at u with u placed
    at voxel q is log x_{u,q} plus, for each child v, the max over k of
    log psi(q, k) + y_{v,k}. The per-(child, q) argmax voxels are recorded;
    the root argmax plus a downward pass decodes the assignment.

    If the optimal energy is zero, every assignment is optimal and the
    all-zeros vector is returned (the lexicographically smallest optimum,
    matching brute force).
    """
    n, v = unary.n_joints, unary.grid.n_voxels
    if tree.n_joints != n:
        raise ShapeMismatch(f"tree has {tree.n_joints} joints, unary has {n}")
    with np.errstate(divide="ignore"):
        log_y = np.log(unary.values).copy()
    dist = unary.grid.pairwise_distances()
    back: dict[tuple[int, int], np.ndarray] = {}
    neg = np.float64(-np.inf)
    for u in reversed(tree.order):
        for child in tree.children[u]:
            prior = priors[(min(u, child), max(u, child))]
            mask = _window_mask(dist, prior, cfg)
            scores = np.where(mask, log_y[child][None, :], neg)
            back[(u, child)] = np.argmax(scores, axis=1)
            log_y[u] = log_y[u] + scores.max(axis=1)
    root_best = int(np.argmax(log_y[tree.root]))
    if log_y[tree.root, root_best] == -np.inf:
        assign = np.zeros(n, dtype=int)
    else:
        assign = np.zeros(n, dtype=int)
        assign[tree.root] = root_best
        for u in tree.order:
            for child in tree.children[u]:
                assign[child] = back[(u, child)][assign[u]]
    g = build_graph(n, tree.edge_list()) if n > 1 else build_graph(n, [])
    return assign, energy(assign, unary, g, priors, cfg)


def decode_assignment(assign: np.ndarray, grid: VoxelGrid) -> PoseEstimate:
    """Voxel-center pose for an assignment."""
    return PoseEstimate(joints=grid.centers[np.asarray(assign, dtype=int)])


def reproject_check(
    assign: np.ndarray,
    grid: VoxelGrid,
    gt: PoseEstimate,
    g: SkeletonGraph,
) -> tuple[float, float]:
    """Limb-length error and plain joint error of the decoded voxel pose.

    Returns (limb_err, joint_err): the mean absolute limb-length difference
    against the ground truth and the unaligned mean Euclidean joint error.
    A pose can score near-zero limb error while the joint error stays large,
    which is the depth-ambiguity failure mode of appearance-only inference.
    """
    decoded = decode_assignment(assign, grid)
    limb_err = metrics.mplle(decoded, gt, g)
    joint_err = float(np.linalg.norm(decoded.joints - gt.joints, axis=1).mean())
    return limb_err, joint_err
