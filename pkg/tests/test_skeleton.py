import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxpose.errors import CyclicGraph, DisconnectedGraph, EmptyDataset, InvalidEdge
from ctxpose.skeleton import (
    LimbPrior,
    build_graph,
    estimate_priors,
    h36m_skeleton,
    is_acyclic,
    load_skeleton,
    root_tree,
    save_skeleton,
)


class TestBuildGraph:
    def test_minimal_chain(self):
        g = build_graph(2, [(0, 1)])
        assert g.edges == ((0, 1),)

    def test_symmetric_dedup(self):
        g = build_graph(3, [(0, 1), (1, 0), (1, 2)])
        assert len(g.edges) == 2
        assert g.has_edge(0, 1) and g.has_edge(1, 0)

    def test_h36m_has_16_limbs(self):
        g = h36m_skeleton()
        assert g.n_joints == 17
        assert len(g.edges) == 16

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidEdge):
            build_graph(3, [(0, 3)])

    def test_self_loop_rejected(self):
        with pytest.raises(InvalidEdge):
            build_graph(3, [(1, 1)])

    def test_rebuild_idempotent(self):
        g = build_graph(5, [(0, 1), (1, 0), (2, 1), (3, 4), (1, 3)])
        g2 = build_graph(g.n_joints, g.edges)
        assert g2 == g

    @given(
        st.integers(min_value=2, max_value=8).flatmap(
            lambda n: st.tuples(
                st.just(n),
                st.lists(
                    st.tuples(
                        st.integers(0, n - 1), st.integers(0, n - 1)
                    ).filter(lambda e: e[0] != e[1]),
                    max_size=12,
                ),
            )
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_edges_canonical(self, case):
        n, edges = case
        g = build_graph(n, edges)
        for u, v in g.edges:
            assert u < v
        assert len(set(g.edges)) == len(g.edges)


class TestAcyclicity:
    def test_chain_is_acyclic(self):
        assert is_acyclic(build_graph(3, [(0, 1), (1, 2)]))

    def test_triangle_is_cyclic(self):
        assert not is_acyclic(build_graph(3, [(0, 1), (1, 2), (0, 2)]))

    def test_h36m_is_tree(self):
        # 17 joints, 16 edges, connected: |E| = |V| - 1 and connected -> tree.
        # Independent check by union-find component count.
        g = h36m_skeleton()
        parent = list(range(g.n_joints))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        merges = 0
        for u, v in g.edges:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
                merges += 1
        assert merges == g.n_joints - 1  # connected
        assert len(g.edges) == g.n_joints - 1
        assert is_acyclic(g)


class TestRootTree:
    def test_chain_rooted_mid(self):
        t = root_tree(build_graph(3, [(0, 1), (1, 2)]), root=1)
        assert t.children[1] == (0, 2)
        assert t.parent[0] == 1 and t.parent[2] == 1

    def test_chain_rooted_end(self):
        t = root_tree(build_graph(3, [(0, 1), (1, 2)]), root=0)
        assert t.parent[2] == 1

    def test_cycle_rejected(self):
        with pytest.raises(CyclicGraph):
            root_tree(build_graph(3, [(0, 1), (1, 2), (0, 2)]), root=0)

    def test_disconnected_rejected(self):
        with pytest.raises(DisconnectedGraph):
            root_tree(build_graph(4, [(0, 1), (2, 3)]), root=0)

    def test_roundtrip_recovers_edges(self):
        g = h36m_skeleton()
        for root in (0, 8, 16):
            t = root_tree(g, root)
            assert tuple(sorted(t.edge_list())) == g.edges


class TestEstimatePriors:
    def test_single_pose(self):
        g = build_graph(2, [(0, 1)])
        pose = np.array([[0.0, 0, 0], [300.0, 0, 0]])
        priors = estimate_priors([pose], g)
        assert priors[(0, 1)].mu == 300.0
        assert priors[(0, 1)].sigma == 0.0

    def test_two_point_statistics(self):
        g = build_graph(2, [(0, 1)])
        p1 = np.array([[0.0, 0, 0], [280.0, 0, 0]])
        p2 = np.array([[0.0, 0, 0], [320.0, 0, 0]])
        priors = estimate_priors([p1, p2], g)
        assert priors[(0, 1)].mu == pytest.approx(300.0)
        # population (not sample) standard deviation
        assert priors[(0, 1)].sigma == pytest.approx(20.0)

    def test_rigid_limbs_have_negligible_spread(self):
        from ctxpose.grid import VoxelGrid
        from ctxpose.skeleton import root_tree
        from ctxpose.synthgen import SynthConfig, sample_pose, sample_rng

        g = build_graph(4, [(0, 1), (1, 2), (1, 3)])
        grid = VoxelGrid((8, 8, 8), (0, 0, 0), (100, 100, 100))
        cfg = SynthConfig(seed=5, n_samples=0, grid=grid, limb_length_mm=150.0)
        tree = root_tree(g, 0)
        poses = [sample_pose(cfg, tree, sample_rng(5, i)) for i in range(1000)]
        priors = estimate_priors(poses, g)
        for e in g.edges:
            assert priors[e].sigma < 1e-6 * priors[e].mu
            assert priors[e].mu == pytest.approx(150.0)

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(11)
        g = build_graph(4, [(0, 1), (1, 2), (2, 3)])
        poses = [rng.normal(scale=200.0, size=(4, 3)) for _ in range(8)]
        base = estimate_priors(poses, g)
        # random proper rotation + translation applied to every pose
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        t = rng.normal(scale=500.0, size=3)
        moved = estimate_priors([p @ q.T + t for p in poses], g)
        for e in g.edges:
            assert moved[e].mu == pytest.approx(base[e].mu, rel=1e-12)
            assert moved[e].sigma == pytest.approx(base[e].sigma, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataset):
            estimate_priors([], build_graph(2, [(0, 1)]))


def test_skeleton_file_roundtrip(tmp_path):
    g = h36m_skeleton()
    priors = {e: LimbPrior(mu=100.0 + i, sigma=float(i)) for i, e in enumerate(g.edges)}
    path = tmp_path / "skel.json"
    save_skeleton(path, g, priors)
    g2, priors2 = load_skeleton(path)
    assert g2 == g
    assert priors2 == priors
