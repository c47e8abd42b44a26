"""Graph-network layers over joint-level features, in two equivalent forms.

The structure-matrix form computes y_u = sum_v (S[u,v] * W[u,v]) x_v, where
S is a binary prior mask derived from the skeleton: dense for the FCN
variant, skeleton-masked for GNN and LCN. The collect/aggregate/update form
collects masked messages W[u,v] x_v, aggregates them by summation in
ascending joint order, and applies a registered update function. With the
"add" update (the aggregated sum passed through unchanged) and a
self-inclusive mask the two forms coincide bitwise: a joint's own features
enter through the diagonal of the mask.

These layers operate on per-joint vectors; there is no voxel axis here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, UnknownUpdateFunction
from .skeleton import SkeletonGraph

VARIANTS = ("fcn", "gnn", "lcn")


@dataclass(frozen=True)
class StructureMatrix:
    """Binary prior mask S over joint pairs. Entries are 0 or 1."""

    n_joints: int
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.shape != (self.n_joints, self.n_joints):
            raise ShapeMismatch(f"mask must be ({self.n_joints}, {self.n_joints})")
        if not np.isin(mask, (0, 1)).all():
            raise ShapeMismatch("structure matrix entries must be 0 or 1")
        object.__setattr__(self, "mask", mask.astype(np.int8))


@dataclass
class GnnLayerParams:
    """Per-pair weight matrices W[u,v] of shape (M_out, M_in).

    `shared` records whether one matrix is replicated across all pairs
    (the conventional weight sharing of the plain GNN variant); LCN and FCN
    keep unshared per-pair weights.
    """

    weights: np.ndarray  # (N, N, M_out, M_in)
    variant: str
    shared: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[0] != self.weights.shape[1]:
            raise ShapeMismatch(
                f"weights must be (N, N, M_out, M_in), got {self.weights.shape}"
            )
        if self.variant not in VARIANTS:
            raise ShapeMismatch(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not np.all(np.isfinite(self.weights)):
            raise ShapeMismatch("weights must be finite")

    @property
    def n_joints(self) -> int:
        return self.weights.shape[0]

    @property
    def m_out(self) -> int:
        return self.weights.shape[2]

    @property
    def m_in(self) -> int:
        return self.weights.shape[3]


def save_layer_params(path, p: GnnLayerParams) -> None:
    """Write layer weights to the parameter container, one array per (u, v)."""
    from .io import write_container

    arrays = {
        f"W:{u}:{v}": p.weights[u, v]
        for u in range(p.n_joints)
        for v in range(p.n_joints)
    }
    meta = {"n_joints": p.n_joints, "variant": p.variant, "shared": p.shared}
    write_container(path, meta, arrays)


def load_layer_params(path) -> GnnLayerParams:
    from .io import read_container

    meta, arrays = read_container(path)
    n = int(meta["n_joints"])
    first = arrays["W:0:0"]
    weights = np.zeros((n, n) + first.shape)
    for u in range(n):
        for v in range(n):
            weights[u, v] = arrays[f"W:{u}:{v}"]
    return GnnLayerParams(weights=weights, variant=meta["variant"], shared=bool(meta["shared"]))


def make_layer_params(
    g: SkeletonGraph,
    m_in: int,
    m_out: int,
    variant: str,
    rng: np.random.Generator,
    scale: float = 0.5,
) -> GnnLayerParams:
    """Random layer parameters; the gnn variant shares one weight matrix."""
    shared = variant == "gnn"
    n = g.n_joints
    if shared:
        w = rng.normal(0.0, scale, size=(m_out, m_in))
        weights = np.broadcast_to(w, (n, n, m_out, m_in)).copy()
    else:
        weights = rng.normal(0.0, scale, size=(n, n, m_out, m_in))
    return GnnLayerParams(weights=weights, variant=variant, shared=shared)


def build_structure(
    g: SkeletonGraph, variant: str, self_loop: bool = True
) -> StructureMatrix:
    """Prior mask for a variant.

    FCN ignores the skeleton: every entry is 1. GNN and LCN put 1 exactly on
    the skeleton edges, plus the diagonal when `self_loop` is set (default)
    so a joint attends to itself through the matrix form.
    """
    if variant not in VARIANTS:
        raise ShapeMismatch(f"variant must be one of {VARIANTS}, got {variant!r}")
    n = g.n_joints
    if variant == "fcn":
        mask = np.ones((n, n), dtype=np.int8)
    else:
        mask = np.zeros((n, n), dtype=np.int8)
        for u, v in g.edges:
            mask[u, v] = 1
            mask[v, u] = 1
        if self_loop:
            np.fill_diagonal(mask, 1)
    return StructureMatrix(n_joints=n, mask=mask)


def _masked_message_sum(
    x: np.ndarray, mask: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """sum over {v : mask[u,v]=1} of W[u,v] x_v, ascending v for each u."""
    n, m_out = x.shape[0], weights.shape[2]
    out = np.zeros((n, m_out))
    for u in range(n):
        idx = np.flatnonzero(mask[u])
        if idx.size:
            msgs = np.einsum("voi,vi->vo", weights[u, idx], x[idx])
            out[u] = np.add.reduce(msgs, axis=0)
    return out


def layer_forward(
    x: np.ndarray, S: StructureMatrix, p: GnnLayerParams
) -> np.ndarray:
    """Structure-matrix layer: y_u = sum_v (S[u,v] * W[u,v]) x_v.

    Pure masked weighted sum, no activation.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape != (p.n_joints, p.m_in):
        raise ShapeMismatch(f"features must be ({p.n_joints}, {p.m_in}), got {x.shape}")
    if S.n_joints != p.n_joints:
        raise ShapeMismatch("structure matrix and weights disagree on joint count")
    return _masked_message_sum(x, S.mask, p.weights)


def update_add(x_u: np.ndarray, m_u: np.ndarray) -> np.ndarray:
    """Pass the aggregated messages through unchanged. The joint's own
    features are expected to arrive via the self-loop of the mask."""
    return m_u


def update_concat_affine(a: np.ndarray, b: np.ndarray):
    """Update y = A @ concat(x_u, m_u) + b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)

    def apply(x_u, m_u):
        z = np.concatenate([x_u, m_u])
        if a.shape[1] != z.size:
            raise ShapeMismatch(
                f"concat-affine expects {a.shape[1]} inputs, got {z.size}"
            )
        return a @ z + b

    return apply


def update_gated_add(gate: np.ndarray):
    """Residual update y = x_u + sigmoid(gate) * m_u (requires M_out == M_in)."""
    gate = np.asarray(gate, dtype=np.float64)
    sig = 1.0 / (1.0 + np.exp(-gate))

    def apply(x_u, m_u):
        if x_u.shape != m_u.shape:
            raise ShapeMismatch("gated-add needs matching input/output widths")
        return x_u + sig * m_u

    return apply


UPDATE_FUNCTIONS = {
    "add": lambda params: update_add,
    "concat-affine": lambda params: update_concat_affine(*params),
    "gated-add": lambda params: update_gated_add(params),
}


def cau_forward(
    x: np.ndarray,
    g: SkeletonGraph,
    p: GnnLayerParams,
    update="add",
    update_params=None,
    self_loop: bool = True,
) -> np.ndarray:
    """Collect / aggregate / update form of the layer.

    Messages W[u,v] x_v are collected over the variant's mask, aggregated by
    summation in ascending joint order (a permutation-invariant reduction,
    canonicalized for bit-reproducibility), and passed to the update
    function. `update` is a registered id ("add", "concat-affine",
    "gated-add") or a callable f(x_u, m_u) -> y_u.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape != (p.n_joints, p.m_in):
        raise ShapeMismatch(f"features must be ({p.n_joints}, {p.m_in}), got {x.shape}")
    if callable(update):
        f = update
    else:
        try:
            factory = UPDATE_FUNCTIONS[update]
        except KeyError:
            raise UnknownUpdateFunction(
                f"unknown update {update!r}; registered: {sorted(UPDATE_FUNCTIONS)}"
            ) from None
        f = factory(update_params)
    mask = build_structure(g, p.variant, self_loop=self_loop).mask
    m = _masked_message_sum(x, mask, p.weights)
    rows = [np.asarray(f(x[u], m[u]), dtype=np.float64) for u in range(p.n_joints)]
    return np.stack(rows)
