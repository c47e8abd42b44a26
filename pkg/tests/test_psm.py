import itertools

import numpy as np
import pytest

from ctxpose.errors import SearchSpaceTooLarge
from ctxpose.grid import PoseEstimate, VoxelGrid
from ctxpose.psm import (
    PsmConfig,
    UnaryScores,
    brute_force_map,
    decode_assignment,
    default_epsilon,
    dp_map,
    energy,
    hard_pairwise,
    reproject_check,
)
from ctxpose.skeleton import LimbPrior, build_graph, root_tree


def chain(n):
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def random_tree(n, rng):
    """Uniform random parent among earlier joints; always a tree."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    return build_graph(n, edges)


class TestHardPairwise:
    PRIOR = LimbPrior(300.0, 10.0)
    CFG = PsmConfig(epsilon_mm=50.0)

    def test_center_of_window(self):
        assert hard_pairwise((0, 0, 0), (300, 0, 0), self.PRIOR, self.CFG) == 1

    def test_just_outside(self):
        assert hard_pairwise((0, 0, 0), (351, 0, 0), self.PRIOR, self.CFG) == 0
        assert hard_pairwise((0, 0, 0), (249, 0, 0), self.PRIOR, self.CFG) == 0

    def test_closed_boundary(self):
        assert hard_pairwise((0, 0, 0), (350, 0, 0), self.PRIOR, self.CFG) == 1
        assert hard_pairwise((0, 0, 0), (250, 0, 0), self.PRIOR, self.CFG) == 1


class TestEnergy:
    def test_unary_only(self):
        grid = VoxelGrid((2, 1, 1), (0, 0, 0), (10, 10, 10))
        unary = UnaryScores(grid, np.array([[0.7, 0.1]]))
        g = build_graph(1, [])
        assert energy(np.array([0]), unary, g, {}, PsmConfig(1.0)) == 0.7

    def test_violating_edge_annihilates(self):
        grid = VoxelGrid((2, 1, 1), (0, 0, 0), (10, 10, 10))
        unary = UnaryScores(grid, np.full((2, 2), 0.9))
        g = chain(2)
        priors = {(0, 1): LimbPrior(1000.0, 1.0)}  # nothing is 1000mm apart
        cfg = PsmConfig(epsilon_mm=5.0)
        for a in itertools.product(range(2), repeat=2):
            assert energy(np.array(a), unary, g, priors, cfg) == 0.0

    def test_matches_scalar_loop_on_all_assignments(self):
        rng = np.random.default_rng(2)
        grid = VoxelGrid((2, 2, 2), (0, 0, 0), (100, 100, 100))
        unary = UnaryScores(grid, rng.uniform(size=(2, 8)))
        g = chain(2)
        priors = {(0, 1): LimbPrior(100.0, 5.0)}
        cfg = PsmConfig(epsilon_mm=60.0)
        for a in itertools.product(range(8), repeat=2):
            a = np.array(a)
            expected = unary.values[0, a[0]] * unary.values[1, a[1]]
            d = np.linalg.norm(grid.voxel_center(a[0]) - grid.voxel_center(a[1]))
            if not (40.0 <= d <= 160.0):
                expected = 0.0
            assert energy(a, unary, g, priors, cfg) == pytest.approx(expected, rel=1e-12)


class TestBruteForce:
    def test_single_joint_argmax(self):
        grid = VoxelGrid((3, 1, 1), (0, 0, 0), (10, 10, 10))
        unary = UnaryScores(grid, np.array([[0.2, 0.9, 0.5]]))
        assign, en = brute_force_map(unary, build_graph(1, []), {}, PsmConfig(1.0))
        assert assign.tolist() == [1]
        assert en == 0.9

    def test_all_zero_unaries_tiebreak(self):
        grid = VoxelGrid((2, 2, 1), (0, 0, 0), (10, 10, 10))
        unary = UnaryScores(grid, np.zeros((2, 4)))
        g = chain(2)
        priors = {(0, 1): LimbPrior(10.0, 1.0)}
        assign, en = brute_force_map(unary, g, priors, PsmConfig(15.0))
        assert en == 0.0
        assert assign.tolist() == [0, 0]

    def test_cap_enforced(self):
        grid = VoxelGrid((3, 3, 3), (0, 0, 0), (10, 10, 10))
        unary = UnaryScores(grid, np.ones((5, 27)))
        g = chain(5)
        priors = {e: LimbPrior(10.0, 1.0) for e in g.edges}
        with pytest.raises(SearchSpaceTooLarge):
            brute_force_map(unary, g, priors, PsmConfig(15.0))


class TestDpMap:
    def test_single_joint(self):
        grid = VoxelGrid((3, 1, 1), (0, 0, 0), (10, 10, 10))
        unary = UnaryScores(grid, np.array([[0.2, 0.9, 0.5]]))
        tree = root_tree(build_graph(1, []), 0)
        assign, en = dp_map(unary, tree, {}, PsmConfig(1.0))
        assert assign.tolist() == [1]
        assert en == 0.9

    def test_adjacent_window_forces_monotone_chain(self):
        grid = VoxelGrid((3, 1, 1), (0, 0, 0), (10, 10, 10))
        rng = np.random.default_rng(0)
        unary = UnaryScores(grid, rng.uniform(0.1, 1.0, size=(3, 3)))
        g = chain(3)
        priors = {e: LimbPrior(10.0, 1.0) for e in g.edges}
        cfg = PsmConfig(epsilon_mm=2.0)  # window admits exactly pitch-10 neighbors
        assign, en = dp_map(unary, root_tree(g, 0), priors, cfg)
        bf_assign, bf_en = brute_force_map(unary, g, priors, cfg)
        assert assign.tolist() == bf_assign.tolist()
        assert en == bf_en
        steps = np.abs(np.diff(assign))
        assert np.all(steps == 1)

    def test_matches_brute_force_across_seeds(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            grid = VoxelGrid((2, 2, 2), (0, 0, 0), (100, 100, 100))
            g = random_tree(4, rng)
            unary = UnaryScores(grid, rng.uniform(size=(4, 8)))
            priors = {e: LimbPrior(float(rng.uniform(80, 200)), 5.0) for e in g.edges}
            cfg = PsmConfig(epsilon_mm=float(rng.uniform(40, 120)))
            root = int(rng.integers(0, 4))
            assign, en = dp_map(unary, root_tree(g, root), priors, cfg)
            bf_assign, bf_en = brute_force_map(unary, g, priors, cfg)
            assert en == bf_en, f"seed {seed}"
            assert assign.tolist() == bf_assign.tolist(), f"seed {seed}"

    def test_zero_energy_returns_all_zeros(self):
        grid = VoxelGrid((2, 2, 2), (0, 0, 0), (10, 10, 10))
        rng = np.random.default_rng(1)
        values = rng.uniform(0.1, 1.0, size=(2, 8))
        values[0] = 0.0  # one joint has no support anywhere
        unary = UnaryScores(grid, values)
        g = chain(2)
        priors = {(0, 1): LimbPrior(10.0, 1.0)}
        assign, en = dp_map(unary, root_tree(g, 0), priors, PsmConfig(15.0))
        assert en == 0.0
        assert assign.tolist() == [0, 0]
        bf_assign, bf_en = brute_force_map(unary, g, priors, PsmConfig(15.0))
        assert bf_en == 0.0
        assert bf_assign.tolist() == [0, 0]

    def test_epsilon_monotonicity(self):
        rng = np.random.default_rng(8)
        grid = VoxelGrid((2, 2, 2), (0, 0, 0), (100, 100, 100))
        g = chain(3)
        unary = UnaryScores(grid, rng.uniform(size=(3, 8)))
        priors = {e: LimbPrior(120.0, 5.0) for e in g.edges}
        energies = []
        for eps in (20.0, 60.0, 120.0, 250.0):
            _, en = dp_map(unary, root_tree(g, 0), priors, PsmConfig(eps))
            energies.append(en)
        assert all(a <= b for a, b in zip(energies, energies[1:]))

    def test_unary_scaling(self):
        rng = np.random.default_rng(9)
        grid = VoxelGrid((2, 2, 2), (0, 0, 0), (100, 100, 100))
        g = chain(3)
        values = rng.uniform(size=(3, 8))
        priors = {e: LimbPrior(120.0, 5.0) for e in g.edges}
        cfg = PsmConfig(90.0)
        a1, e1 = dp_map(UnaryScores(grid, values), root_tree(g, 0), priors, cfg)
        c = 3.7
        a2, e2 = dp_map(UnaryScores(grid, c * values), root_tree(g, 0), priors, cfg)
        assert a2.tolist() == a1.tolist()
        assert e2 == pytest.approx(c**3 * e1, rel=1e-12)


class TestReprojectCheck:
    def test_quantization_bound(self):
        grid = VoxelGrid((4, 4, 4), (0, 0, 0), (50, 50, 50))
        rng = np.random.default_rng(5)
        gt = PoseEstimate(rng.uniform(10, 190, size=(3, 3)))
        assign = np.array([grid.nearest_voxel(p) for p in gt.joints])
        g = chain(3)
        limb_err, joint_err = reproject_check(assign, grid, gt, g)
        half_diag = 0.5 * np.linalg.norm(grid.spacing)
        assert joint_err <= half_diag
        # limb length error is at most two endpoint displacements
        assert limb_err <= 2 * half_diag

    def test_mirrored_depth_ambiguity(self):
        # reflect a pose through a depth plane: limb lengths unchanged,
        # joint positions very different
        grid = VoxelGrid((8, 8, 8), (0, 0, 0), (50, 50, 50))
        gt = PoseEstimate(
            np.array([[200.0, 200, 80], [200.0, 260, 140], [200.0, 200, 200]])
        )
        mirrored = gt.joints.copy()
        mirrored[:, 2] = 2 * 200.0 - mirrored[:, 2]  # reflect in z = 200
        assign = np.array([grid.nearest_voxel(p) for p in mirrored])
        g = chain(3)
        limb_err, joint_err = reproject_check(assign, grid, gt, g)
        half_diag = 0.5 * np.linalg.norm(grid.spacing)
        assert limb_err <= 2 * half_diag  # lengths preserved up to quantization
        assert joint_err > 50.0  # positions are not

    def test_exact_grid_pose(self):
        grid = VoxelGrid((3, 3, 3), (0, 0, 0), (10, 10, 10))
        gt = PoseEstimate(grid.centers[[0, 13, 26]])
        assign = np.array([0, 13, 26])
        limb_err, joint_err = reproject_check(assign, grid, gt, chain(3))
        assert limb_err == 0.0
        assert joint_err == 0.0

    def test_decode_assignment(self):
        grid = VoxelGrid((2, 2, 2), (0, 0, 0), (10, 10, 10))
        pose = decode_assignment(np.array([3, 5]), grid)
        np.testing.assert_array_equal(pose.joints[0], grid.voxel_center(3))
        np.testing.assert_array_equal(pose.joints[1], grid.voxel_center(5))


def test_default_epsilon_is_half_diagonal():
    grid = VoxelGrid((2, 2, 2), (0, 0, 0), (30, 40, 120))
    assert default_epsilon(grid) == pytest.approx(0.5 * np.sqrt(30**2 + 40**2 + 120**2))
