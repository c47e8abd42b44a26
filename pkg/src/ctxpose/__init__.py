"""Context modeling for volumetric 3D human pose estimation.

One library interface over three context-modeling families: pictorial structure
models (hard limb windows, max-product dynamic programming on trees), the
graph-network layer family (FCN/GNN/LCN masked weighted sums), and the
attention module that softens limb constraints into normalized pairwise
kernels. A toy differentiable pipeline with hand-derived gradients, the
training losses, a metric suite, and a synthetic data generator make every
formula executable and testable at desk scale.
"""

from .contextpose import (
    ContextParams,
    context_forward,
    context_update,
    global_attention,
    non_connected_rule,
    pairwise_kernel,
)
from .errors import CtxposeError
from .gnn import GnnLayerParams, StructureMatrix, build_structure, cau_forward, layer_forward
from .grid import (
    FeatureVolume,
    Heatmap,
    PoseEstimate,
    VoxelGrid,
    gaussian_heatmap,
    integrate_pose,
    spatial_softmax,
)
from .losses import LossConfig, loss_3d, loss_ga, total_loss
from .metrics import MetricReport, mpjpe_p1, mpjpe_p2, mplae, mplle, pck_auc
from .model import ToyModel, adam_step, backward, forward, init_model
from .psm import PsmConfig, UnaryScores, brute_force_map, dp_map, energy, hard_pairwise
from .skeleton import (
    LimbPrior,
    RootedTree,
    SkeletonGraph,
    build_graph,
    estimate_priors,
    h36m_skeleton,
    is_acyclic,
    root_tree,
)
from .synthgen import SynthConfig, generate_dataset, load_dataset, sample_pose

__version__ = "0.1.0"

__all__ = [
    "ContextParams",
    "CtxposeError",
    "FeatureVolume",
    "GnnLayerParams",
    "Heatmap",
    "LimbPrior",
    "LossConfig",
    "MetricReport",
    "PoseEstimate",
    "PsmConfig",
    "RootedTree",
    "SkeletonGraph",
    "StructureMatrix",
    "SynthConfig",
    "ToyModel",
    "UnaryScores",
    "VoxelGrid",
    "adam_step",
    "backward",
    "brute_force_map",
    "build_graph",
    "build_structure",
    "cau_forward",
    "context_forward",
    "context_update",
    "dp_map",
    "energy",
    "estimate_priors",
    "forward",
    "gaussian_heatmap",
    "generate_dataset",
    "global_attention",
    "h36m_skeleton",
    "hard_pairwise",
    "init_model",
    "integrate_pose",
    "is_acyclic",
    "layer_forward",
    "load_dataset",
    "loss_3d",
    "loss_ga",
    "mpjpe_p1",
    "mpjpe_p2",
    "mplae",
    "mplle",
    "non_connected_rule",
    "pairwise_kernel",
    "pck_auc",
    "root_tree",
    "sample_pose",
    "spatial_softmax",
    "total_loss",
]
