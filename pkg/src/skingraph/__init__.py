"""Skinning weight prediction for mesh/skeleton pairs.

Pipeline: load or synthesize a rigged asset, bind each vertex to its k
candidate joints, build the mesh / skeleton / mesh-skeleton graphs,
train the multi-aggregator graph network on KL loss, and evaluate with
linear-blend-skinning deformation error under random poses.
"""

from .animate import Pose, forward_kinematics, lbs_deform, metrics, sample_poses
from .binding import BindingTable, assemble_features, build_binding_table, build_graphs, select_k_unique_joints
from .formats import load_asset, load_checkpoint, load_obj, save_asset, save_checkpoint, save_obj
from .geometry import Mesh, RigAsset, Skeleton, normalize, point_segment_distance, radius_neighbours
from .graph import (
    DegreeStats,
    Graph,
    MagcConfig,
    MagcLayer,
    NeighbourhoodKind,
    aggregate,
    compute_degree_stats,
    edge_message,
    magc_forward,
    magc_pre_mlp,
    scale,
)
from .model import ModelConfig, SkinningModel, SkinningPrediction, binding_targets
from .nn import Linear, Mlp, MlpSpec, kl_loss, mlp_forward
from .optim import RAdam
from .synthetic import SyntheticRigSpec, generate_synthetic
from .tensor import Tensor
from .training import TrainConfig, precompute, train
from .voxel import VoxelGrid, geodesic_distance, voxelize

__version__ = "0.1.0"
