"""Pose evaluation metrics.

MPJPE protocol #1 aligns root joints (translation only) before averaging
per-joint Euclidean errors; protocol #2 first solves the least-squares
rigid alignment (rotation + translation, reflections excluded; uniform
scale optional behind a flag). MPLLE and MPLAE compare limb lengths and
limb directions edge by edge. PCK counts joints within a distance
threshold; AUC averages PCK over a threshold sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, ShapeMismatch, ZeroLengthLimb
from .grid import PoseEstimate
from .skeleton import SkeletonGraph


def _joints(p) -> np.ndarray:
    a = np.asarray(getattr(p, "joints", p), dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3) joints, got {a.shape}")
    return a


def _paired(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _joints(pred), _joints(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pose shapes differ: {p.shape} vs {g.shape}")
    return p, g


def mpjpe_p1(pred, gt, root: int = 0) -> float:
    """Mean per-joint error after aligning the root joints (mm)."""
    p, g = _paired(pred, gt)
    shifted = p - p[root] + g[root]
    return float(np.linalg.norm(shifted - g, axis=1).mean())


def rigid_align(pred, gt, with_scale: bool = False) -> np.ndarray:
    """Least-squares rigid alignment of pred onto gt (Kabsch).

    Rotation comes from the SVD of the centered cross-covariance with the
    reflection corrected so det(R) = +1. With `with_scale`, the optimal
    uniform scale is applied as well. Requires N >= 3 and a gt that is not
    collinear.
    """
    p, g = _paired(pred, gt)
    n = p.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"rigid alignment needs >= 3 joints, got {n}")
    cp, cg = p.mean(axis=0), g.mean(axis=0)
    pc, gc = p - cp, g - cg
    if np.linalg.matrix_rank(gc, tol=1e-9 * max(1.0, np.abs(gc).max())) < 2:
        raise DegenerateConfiguration("ground-truth joints are collinear")
    h = pc.T @ gc
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.diag([1.0, 1.0, d])
    rot = vt.T @ corr @ u.T
    if with_scale:
        denom = (pc**2).sum()
        if denom <= 0:
            raise DegenerateConfiguration("prediction collapses to a single point")
        scale = float((s * np.diag(corr)).sum() / denom)
    else:
        scale = 1.0
    return scale * pc @ rot.T + cg


def mpjpe_p2(pred, gt, with_scale: bool = False) -> float:
    """Mean per-joint error after optimal rigid alignment (mm)."""
    aligned = rigid_align(pred, gt, with_scale=with_scale)
    return float(np.linalg.norm(aligned - _joints(gt), axis=1).mean())


def _limb_vectors(p: np.ndarray, g: SkeletonGraph) -> np.ndarray:
    # orientation u -> v fixed by ascending index (edges are stored sorted)
    edges = np.asarray(g.edges, dtype=int)
    return p[edges[:, 1]] - p[edges[:, 0]]


def mplle(pred, gt, g: SkeletonGraph) -> float:
    """Mean absolute limb-length error over the skeleton edges (mm)."""
    p, q = _paired(pred, gt)
    lp = np.linalg.norm(_limb_vectors(p, g), axis=1)
    lg = np.linalg.norm(_limb_vectors(q, g), axis=1)
    return float(np.abs(lp - lg).mean())


def mplae(pred, gt, g: SkeletonGraph) -> float:
    """Mean angle between corresponding limb direction vectors (radians)."""
    p, q = _paired(pred, gt)
    vp = _limb_vectors(p, g)
    vg = _limb_vectors(q, g)
    np_len = np.linalg.norm(vp, axis=1)
    ng_len = np.linalg.norm(vg, axis=1)
    if np.any(np_len <= 1e-6) or np.any(ng_len <= 1e-6):
        raise ZeroLengthLimb("limb angle undefined for zero-length limbs")
    cos = np.sum(vp * vg, axis=1) / (np_len * ng_len)
    return float(np.arccos(np.clip(cos, -1.0, 1.0)).mean())


def pck_auc(
    preds,
    gts,
    threshold_mm: float = 150.0,
    curve_max_mm: float = 150.0,
    curve_step_mm: float = 5.0,
) -> tuple[float, float]:
    """PCK at one threshold and AUC over a threshold sweep.

    Joint errors are pooled over all samples. Callers align poses (e.g. per
    protocol #1) beforehand; this function measures raw distances. The AUC
    sweep runs thresholds 0, step, ..., curve_max inclusive.
    """
    errs = []
    for pred, gt in zip(preds, gts, strict=True):
        p, g = _paired(pred, gt)
        errs.append(np.linalg.norm(p - g, axis=1))
    errors = np.concatenate(errs)
    pck = float((errors <= threshold_mm).mean())
    thresholds = np.arange(0.0, curve_max_mm + 0.5 * curve_step_mm, curve_step_mm)
    auc = float(np.mean([(errors <= t).mean() for t in thresholds]))
    return pck, auc


@dataclass
class MetricReport:
    """Aggregate metrics over a sample set (means of per-sample values;
    PCK/AUC pooled over all joints)."""

    mpjpe_p1: float
    mpjpe_p2: float
    mplle: float
    mplae: float
    pck: float
    auc: float
    n_samples: int
    mpjpe_p2_scaled: float | None = None

    def as_dict(self) -> dict:
        doc = {
            "mpjpe_p1": self.mpjpe_p1,
            "mpjpe_p2": self.mpjpe_p2,
            "mplle": self.mplle,
            "mplae": self.mplae,
            "pck": self.pck,
            "auc": self.auc,
            "n_samples": self.n_samples,
        }
        if self.mpjpe_p2_scaled is not None:
            doc["mpjpe_p2_scaled"] = self.mpjpe_p2_scaled
        return doc


def evaluate_poses(
    preds,
    gts,
    g: SkeletonGraph,
    root: int = 0,
    with_scale: bool = False,
    sample_ids=None,
    threshold_mm: float = 150.0,
) -> tuple[MetricReport, list[dict]]:
    """Per-sample metric rows plus their aggregate.

    PCK/AUC are computed on root-aligned poses (protocol #1 alignment).
    """
    preds = [_joints(p) for p in preds]
    gts = [_joints(p) for p in gts]
    if len(preds) != len(gts) or not preds:
        raise ShapeMismatch("need equally many (and at least one) pred/gt poses")
    if sample_ids is None:
        sample_ids = [f"{i:06d}" for i in range(len(preds))]
    rows = []
    aligned_p1 = []
    for sid, p, q in zip(sample_ids, preds, gts):
        row = {
            "sample_id": sid,
            "mpjpe_p1": mpjpe_p1(p, q, root=root),
            "mpjpe_p2": mpjpe_p2(p, q),
            "mplle": mplle(p, q, g),
            "mplae": mplae(p, q, g),
        }
        if with_scale:
            row["mpjpe_p2_scaled"] = mpjpe_p2(p, q, with_scale=True)
        rows.append(row)
        aligned_p1.append(p - p[root] + q[root])
    pck, auc = pck_auc(aligned_p1, gts, threshold_mm=threshold_mm)
    report = MetricReport(
        mpjpe_p1=float(np.mean([r["mpjpe_p1"] for r in rows])),
        mpjpe_p2=float(np.mean([r["mpjpe_p2"] for r in rows])),
        mplle=float(np.mean([r["mplle"] for r in rows])),
        mplae=float(np.mean([r["mplae"] for r in rows])),
        pck=pck,
        auc=auc,
        n_samples=len(rows),
        mpjpe_p2_scaled=(
            float(np.mean([r["mpjpe_p2_scaled"] for r in rows])) if with_scale else None
        ),
    )
    return report, rows
