"""Human skeleton graphs, limb-length priors, and rooted trees.

The skeleton is an undirected graph over joint indices. Joints connected by
an edge are contextual joints of each other; every edge carries a limb-length
prior (mean and standard deviation in millimeters). Joint indices are the
canonical identity; names are metadata only.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import CyclicGraph, DisconnectedGraph, EmptyDataset, InvalidEdge

Edge = tuple[int, int]


@dataclass(frozen=True)
class LimbPrior:
    """Limb length distribution (mu, sigma) in millimeters."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.mu > 0):
            raise ValueError(f"limb prior mu must be > 0, got {self.mu}")
        if not (self.sigma >= 0):
            raise ValueError(f"limb prior sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class SkeletonGraph:
    """Undirected joint graph. Edges are stored once, as sorted (u, v) pairs."""

    n_joints: int
    edges: tuple[Edge, ...]
    names: tuple[str, ...] | None = None

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self._edge_set

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self._adjacency[u]

    def degree(self, u: int) -> int:
        return len(self._adjacency[u])

    @property
    def _edge_set(self) -> frozenset[Edge]:
        cached = self.__dict__.get("_edge_set_cache")
        if cached is None:
            cached = frozenset(self.edges)
            self.__dict__["_edge_set_cache"] = cached
        return cached

    @property
    def _adjacency(self) -> tuple[tuple[int, ...], ...]:
        cached = self.__dict__.get("_adjacency_cache")
        if cached is None:
            adj = [[] for _ in range(self.n_joints)]
            for u, v in self.edges:
                adj[u].append(v)
                adj[v].append(u)
            cached = tuple(tuple(sorted(a)) for a in adj)
            self.__dict__["_adjacency_cache"] = cached
        return cached


@dataclass(frozen=True)
class RootedTree:
    """Orientation of an acyclic connected graph away from a root joint."""

    root: int
    parent: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...]
    # breadth-first order starting at the root; reversed it is a valid
    # leaves-to-root schedule for message passing
    order: tuple[int, ...] = field(default=())

    @property
    def n_joints(self) -> int:
        return len(self.parent)

    def edge_list(self) -> list[Edge]:
        return [
            (min(u, p), max(u, p))
            for u, p in enumerate(self.parent)
            if p is not None
        ]


def build_graph(
    n_joints: int,
    edges,
    names=None,
) -> SkeletonGraph:
    """Build a skeleton graph from an edge list.

    Edges are deduplicated and stored symmetrically: (u, v) and (v, u)
    collapse to one undirected edge. Raises InvalidEdge for out-of-range
    endpoints or self-loops.
    """
    if n_joints <= 0:
        raise InvalidEdge(f"n_joints must be positive, got {n_joints}")
    canon = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < n_joints and 0 <= v < n_joints):
            raise InvalidEdge(f"edge ({u},{v}) out of range for {n_joints} joints")
        if u == v:
            raise InvalidEdge(f"self-loop at joint {u}")
        canon.add((min(u, v), max(u, v)))
    if names is not None:
        names = tuple(str(s) for s in names)
        if len(names) != n_joints:
            raise InvalidEdge(f"expected {n_joints} names, got {len(names)}")
    return SkeletonGraph(n_joints=n_joints, edges=tuple(sorted(canon)), names=names)


def is_acyclic(g: SkeletonGraph) -> bool:
    """True iff the undirected graph contains no cycle (union-find)."""
    parent = list(range(g.n_joints))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in g.edges:
        ru, rv = find(u), find(v)
        if ru == rv:
            return False
        parent[ru] = rv
    return True


def is_connected(g: SkeletonGraph) -> bool:
    if g.n_joints == 0:
        return True
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == g.n_joints


def root_tree(g: SkeletonGraph, root: int = 0) -> RootedTree:
    """Orient an acyclic connected graph away from `root` (BFS).

    Child lists are sorted ascending so traversal order is deterministic.
    """
    if not (0 <= root < g.n_joints):
        raise InvalidEdge(f"root {root} out of range")
    if not is_acyclic(g):
        raise CyclicGraph("cannot root a graph that contains a cycle")
    if not is_connected(g):
        raise DisconnectedGraph("cannot root a disconnected graph")
    parent: list[int | None] = [None] * g.n_joints
    children: list[list[int]] = [[] for _ in range(g.n_joints)]
    order = [root]
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if v not in seen:
                seen.add(v)
                parent[v] = u
                children[u].append(v)
                order.append(v)
                queue.append(v)
    return RootedTree(
        root=root,
        parent=tuple(parent),
        children=tuple(tuple(sorted(c)) for c in children),
        order=tuple(order),
    )


def _pose_joints(p) -> np.ndarray:
    # accept either a PoseEstimate-like object or a bare (N, 3) array
    return np.asarray(getattr(p, "joints", p), dtype=np.float64)


def estimate_priors(poses, g: SkeletonGraph) -> dict[Edge, LimbPrior]:
    """Per-edge mean and population standard deviation of limb length.

    Population (ddof=0) standard deviation: sigma is treated as a
    distribution parameter, not a corrected estimator, so results are
    deterministic functions of the data.
    """
    poses = [_pose_joints(p) for p in poses]
    if not poses:
        raise EmptyDataset("at least one pose is required to estimate priors")
    stacked = np.stack(poses)  # (S, N, 3)
    if stacked.shape[1] != g.n_joints or stacked.shape[2] != 3:
        raise InvalidEdge(
            f"poses have shape {stacked.shape[1:]}, expected ({g.n_joints}, 3)"
        )
    priors = {}
    for u, v in g.edges:
        lengths = np.linalg.norm(stacked[:, u] - stacked[:, v], axis=1)
        priors[(u, v)] = LimbPrior(
            mu=float(lengths.mean()), sigma=float(lengths.std(ddof=0))
        )
    return priors


H36M_NAMES = (
    "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head", "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
)

H36M_EDGES = (
    (0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6), (0, 7), (7, 8),
    (8, 9), (9, 10), (8, 11), (11, 12), (12, 13), (8, 14), (14, 15), (15, 16),
)


def h36m_skeleton() -> SkeletonGraph:
    """The standard 17-joint, 16-limb Human3.6M skeleton."""
    return build_graph(17, H36M_EDGES, names=H36M_NAMES)


def save_skeleton(path, g: SkeletonGraph, priors=None) -> None:
    """Write the skeleton JSON file (millimeters throughout)."""
    doc: dict = {"n_joints": g.n_joints, "edges": [list(e) for e in g.edges]}
    if g.names is not None:
        doc["names"] = list(g.names)
    if priors is not None:
        doc["priors"] = [
            {"u": u, "v": v, "mu": priors[(u, v)].mu, "sigma": priors[(u, v)].sigma}
            for u, v in g.edges
        ]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_skeleton(path) -> tuple[SkeletonGraph, dict[Edge, LimbPrior] | None]:
    """Read a skeleton JSON file; returns (graph, priors or None)."""
    with open(path) as fh:
        doc = json.load(fh)
    g = build_graph(doc["n_joints"], doc["edges"], names=doc.get("names"))
    priors = None
    if "priors" in doc:
        priors = {}
        for rec in doc["priors"]:
            u, v = int(rec["u"]), int(rec["v"])
            priors[(min(u, v), max(u, v))] = LimbPrior(
                mu=float(rec["mu"]), sigma=float(rec["sigma"])
            )
        missing = [e for e in g.edges if e not in priors]
        if missing:
            raise InvalidEdge(f"priors missing for edges {missing}")
    return g, priors
