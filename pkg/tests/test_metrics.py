import numpy as np
import pytest

from ctxpose.errors import DegenerateConfiguration, ShapeMismatch, ZeroLengthLimb
from ctxpose.metrics import (
    evaluate_poses,
    mpjpe_p1,
    mpjpe_p2,
    mplae,
    mplle,
    pck_auc,
    rigid_align,
)
from ctxpose.skeleton import build_graph, h36m_skeleton


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_pose(rng, n=17, scale=300.0):
    return rng.normal(scale=scale, size=(n, 3))


class TestMpjpeP1:
    def test_translation_removed(self):
        rng = np.random.default_rng(0)
        gt = random_pose(rng)
        assert mpjpe_p1(gt + np.array([10.0, -20.0, 5.0]), gt) == pytest.approx(0.0, abs=1e-9)

    def test_single_joint_off(self):
        rng = np.random.default_rng(1)
        gt = random_pose(rng, n=17)
        pred = gt.copy()
        pred[5] += np.array([17.0, 0.0, 0.0])
        assert mpjpe_p1(pred, gt) == pytest.approx(17.0 / 17)

    def test_matches_loop(self):
        rng = np.random.default_rng(2)
        gt = random_pose(rng, n=6)
        pred = random_pose(rng, n=6)
        shifted = pred - pred[0] + gt[0]
        expected = np.mean(
            [np.linalg.norm(shifted[u] - gt[u]) for u in range(6)]
        )
        assert mpjpe_p1(pred, gt) == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mpjpe_p1(np.zeros((3, 3)), np.zeros((4, 3)))


class TestMpjpeP2:
    def test_rigid_motion_removed(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            gt = random_pose(rng, n=8)
            r = random_rotation(rng)
            t = rng.normal(scale=500.0, size=3)
            pred = gt @ r.T + t
            assert mpjpe_p2(pred, gt) < 1e-8

    def test_scale_flag(self):
        rng = np.random.default_rng(4)
        gt = random_pose(rng, n=8)
        assert mpjpe_p2(1.1 * gt, gt, with_scale=True) < 1e-8
        assert mpjpe_p2(1.1 * gt, gt, with_scale=False) > 1.0

    def test_reflection_excluded(self):
        rng = np.random.default_rng(5)
        gt = random_pose(rng, n=8)
        mirrored = gt.copy()
        mirrored[:, 2] *= -1
        assert mpjpe_p2(mirrored, gt) > 1.0

    def test_degenerate_rejected(self):
        line = np.stack([np.arange(5.0), np.zeros(5), np.zeros(5)], axis=1)
        with pytest.raises(DegenerateConfiguration):
            mpjpe_p2(line + 1.0, line)
        with pytest.raises(DegenerateConfiguration):
            mpjpe_p2(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_p2_alignment_optimality(self):
        # The least-squares guarantee: the Procrustes alignment has a sum of
        # squared errors no larger than any rigid motion, root alignment and
        # identity included. The mean-of-norms chain p2 <= p1 <= unaligned
        # is not a theorem (power-mean effect; iid noise even favors the
        # unaligned pose), but it holds on virtually every instance of the
        # kind alignment exists for: a shared offset plus smaller noise.
        rng = np.random.default_rng(6)
        p2_flips = 0
        p1_flips = 0
        for _ in range(100):
            gt = random_pose(rng, n=10)
            offset = rng.normal(scale=200.0, size=3)
            pred = gt + offset + rng.normal(scale=20.0, size=gt.shape)
            sse_p2 = float(((rigid_align(pred, gt) - gt) ** 2).sum())
            shifted = pred - pred[0] + gt[0]
            assert sse_p2 <= ((shifted - gt) ** 2).sum() + 1e-6
            assert sse_p2 <= ((pred - gt) ** 2).sum() + 1e-6
            r = random_rotation(rng)
            t = rng.normal(scale=50.0, size=3)
            assert sse_p2 <= ((pred @ r.T + t - gt) ** 2).sum() + 1e-6
            p1, p2 = mpjpe_p1(pred, gt), mpjpe_p2(pred, gt)
            unaligned = float(np.linalg.norm(pred - gt, axis=1).mean())
            p2_flips += p2 > p1 + 1e-9
            p1_flips += p1 > unaligned + 1e-9
        assert p2_flips <= 5
        assert p1_flips <= 5


class TestLimbMetrics:
    def graph(self):
        return build_graph(4, [(0, 1), (1, 2), (2, 3)])

    def test_mplle_rigid_invariance(self):
        rng = np.random.default_rng(7)
        g = self.graph()
        gt = random_pose(rng, n=4)
        r = random_rotation(rng)
        assert mplle(gt @ r.T + 5.0, gt, g) == pytest.approx(0.0, abs=1e-9)

    def test_mplle_scaling(self):
        rng = np.random.default_rng(8)
        g = h36m_skeleton()
        gt = random_pose(rng, n=17)
        lengths = [
            np.linalg.norm(gt[u] - gt[v]) for u, v in g.edges
        ]
        assert mplle(1.1 * gt, gt, g) == pytest.approx(0.1 * np.mean(lengths), rel=1e-10)

    def test_mplle_matches_loop(self):
        rng = np.random.default_rng(9)
        g = h36m_skeleton()
        gt = random_pose(rng, n=17)
        pred = random_pose(rng, n=17)
        expected = np.mean(
            [
                abs(
                    np.linalg.norm(pred[u] - pred[v])
                    - np.linalg.norm(gt[u] - gt[v])
                )
                for u, v in g.edges
            ]
        )
        assert mplle(pred, gt, g) == pytest.approx(expected, rel=1e-12)

    def test_mplae_translation_invariant(self):
        rng = np.random.default_rng(10)
        g = self.graph()
        gt = random_pose(rng, n=4)
        assert mplae(gt + np.array([3.0, 4.0, 5.0]), gt, g) == pytest.approx(0.0, abs=1e-7)

    def test_mplae_one_right_angle(self):
        g = build_graph(17, h36m_skeleton().edges)
        rng = np.random.default_rng(11)
        gt = random_pose(rng, n=17)
        pred = gt.copy()
        # rotate limb (15, 16) by 90 degrees about an axis orthogonal to it
        u, v = 15, 16
        limb = gt[v] - gt[u]
        axis = np.cross(limb, [0.0, 0.0, 1.0])
        axis /= np.linalg.norm(axis)
        k = axis
        rotated = np.cross(k, limb)  # 90-degree Rodrigues rotation
        pred[v] = pred[u] + rotated
        # arccos near pi/2 amplifies the rounding of the constructed limb
        assert mplae(pred, gt, g) == pytest.approx((np.pi / 2) / 16, rel=1e-6)

    def test_mplae_global_rotation_in_plane(self):
        # all limbs orthogonal to the rotation axis: angle error equals theta
        g = build_graph(3, [(0, 1), (1, 2)])
        gt = np.array([[0.0, 0, 0], [100.0, 0, 0], [100.0, 120.0, 0]])
        theta = 0.4
        c, s = np.cos(theta), np.sin(theta)
        rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        assert mplae(gt @ rz.T, gt, g) == pytest.approx(theta, rel=1e-9)

    def test_zero_length_limb_rejected(self):
        g = build_graph(2, [(0, 1)])
        pose = np.zeros((2, 3))
        with pytest.raises(ZeroLengthLimb):
            mplae(pose, pose + 1.0, g)


class TestPckAuc:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(12)
        gts = [random_pose(rng, n=5) for _ in range(3)]
        pck, auc = pck_auc(gts, gts)
        assert pck == 1.0 and auc == 1.0

    def test_all_beyond_threshold(self):
        gt = np.zeros((4, 3))
        pred = gt + np.array([151.0, 0.0, 0.0])
        pck, _ = pck_auc([pred], [gt], threshold_mm=150.0)
        assert pck == 0.0

    def test_step_function_auc(self):
        gt = np.zeros((1, 3))
        e = 63.0
        pred = gt + np.array([e, 0.0, 0.0])
        pck, auc = pck_auc([pred], [gt], threshold_mm=150.0, curve_max_mm=150.0, curve_step_mm=5.0)
        thresholds = np.arange(0.0, 152.5, 5.0)
        assert pck == 1.0
        assert auc == pytest.approx(np.mean(thresholds >= e))


class TestRelabeling:
    def test_metrics_invariant_under_joint_relabeling(self):
        rng = np.random.default_rng(13)
        g = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        gt = random_pose(rng, n=5)
        pred = random_pose(rng, n=5)
        perm = rng.permutation(5)
        g2 = build_graph(5, [(int(perm[u]), int(perm[v])) for u, v in g.edges])
        inv = np.argsort(perm)
        gt2, pred2 = gt[inv], pred[inv]
        assert mplle(pred2, gt2, g2) == pytest.approx(mplle(pred, gt, g), rel=1e-12)
        assert mpjpe_p2(pred2, gt2) == pytest.approx(mpjpe_p2(pred, gt), rel=1e-9)


def test_evaluate_poses_report(tmp_path):
    rng = np.random.default_rng(14)
    g = h36m_skeleton()
    gts = [random_pose(rng) for _ in range(4)]
    preds = [p + rng.normal(scale=20.0, size=p.shape) for p in gts]
    report, rows = evaluate_poses(preds, gts, g, with_scale=True)
    assert report.n_samples == 4
    assert len(rows) == 4
    assert 0.0 <= report.pck <= 1.0
    assert 0.0 <= report.auc <= 1.0
    assert report.mpjpe_p2 <= report.mpjpe_p1 + 1e-9
    assert set(rows[0]) == {
        "sample_id", "mpjpe_p1", "mpjpe_p2", "mplle", "mplae", "mpjpe_p2_scaled",
    }
