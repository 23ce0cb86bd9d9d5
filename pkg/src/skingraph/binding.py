"""Skin binding and construction of the mesh / skeleton / mesh-skeleton graphs.

Binding assigns each vertex the k unique joints of its closest bones:
bones are sorted by point-to-segment distance (ties by bone index), each
bone is replaced by its root joint (the parent-side articulation), and
the scan keeps first occurrences until k joints are collected. Vertices
that exhaust the skeleton early are padded with slot 0's joint, marked
invalid.
"""

from dataclasses import dataclass

import numpy as np

from .graph import (
    MESH_VERTEX,
    SKELETON_JOINT,
    Graph,
    NeighbourhoodKind,
    add_self_loops_for_isolated,
)
from .geometry import point_segment_distances, radius_neighbours

SLOT_WIDTH = 8  # geodesic distance + bone start + bone end + end-joint flag


@dataclass
class BindingTable:
    """Per vertex: k ordered candidate joints with validity flags.

    bone_child records the child joint of the bone that introduced each
    slot, which pins down the bone's start/end positions for features.
    """

    joints: np.ndarray      # [V, k] joint indices
    valid: np.ndarray       # [V, k] bool
    bone_child: np.ndarray  # [V, k] child joint of the introducing bone

    @property
    def k(self):
        return self.joints.shape[1]

    @property
    def vertex_count(self):
        return self.joints.shape[0]

    def __post_init__(self):
        if not self.valid[:, 0].all():
            raise ValueError("every vertex needs at least one valid slot")


def select_k_unique_joints(asset, vertex_index, k, mode="joint"):
    """Binding slots for one vertex: (joints [k], valid [k], bone_child [k])."""
    table = build_binding_table(asset, k, mode=mode, vertices=[vertex_index])
    return table.joints[0], table.valid[0], table.bone_child[0]


def build_binding_table(asset, k=5, mode="joint", vertices=None):
    """Run the closest-bones scan for every vertex (or a subset)."""
    if mode not in ("joint", "bone"):
        raise ValueError("unknown binding mode %r" % (mode,))
    bones = asset.skeleton.bones()
    if len(bones) == 0:
        raise ValueError("skeleton has no bones")
    points = asset.mesh.vertices if vertices is None else asset.mesh.vertices[list(vertices)]
    starts = asset.skeleton.positions[bones[:, 0]]
    ends = asset.skeleton.positions[bones[:, 1]]
    dist = point_segment_distances(points, starts, ends)  # [V, B]
    order = np.argsort(dist, axis=1, kind="stable")  # ties broken by bone index

    n = len(points)
    joints = np.zeros((n, k), dtype=np.int64)
    valid = np.zeros((n, k), dtype=bool)
    bone_child = np.zeros((n, k), dtype=np.int64)
    roots = bones[:, 0]
    children = bones[:, 1]
    for v in range(n):
        filled = 0
        if mode == "joint":
            seen = set()
            for b in order[v]:
                j = int(roots[b])
                if j in seen:
                    continue
                seen.add(j)
                joints[v, filled] = j
                bone_child[v, filled] = children[b]
                valid[v, filled] = True
                filled += 1
                if filled == k:
                    break
        else:
            for b in order[v][:k]:
                joints[v, filled] = roots[b]
                bone_child[v, filled] = children[b]
                valid[v, filled] = True
                filled += 1
        if filled < k:
            joints[v, filled:] = joints[v, 0]
            bone_child[v, filled:] = bone_child[v, 0]
    return BindingTable(joints=joints, valid=valid, bone_child=bone_child)


@dataclass
class AssetGraphs:
    mesh: Graph
    skeleton: Graph
    mesh_skeleton: Graph


def build_graphs(asset, binding, r=0.06, max_n=10, seed=0):
    """The three graphs consumed by the network.

    Mesh graph: face edges (mesh_topology) + sampled radius edges
    (mesh_radius). Skeleton graph: bone edges. Mesh-skeleton graph:
    vertices then joints as nodes, with undirected binding edges only.
    """
    mesh = asset.mesh
    skel = asset.skeleton
    n_v = mesh.vertex_count
    n_j = skel.joint_count
    if binding.vertex_count != n_v:
        raise ValueError("binding table covers %d vertices, mesh has %d"
                         % (binding.vertex_count, n_v))
    if binding.joints.max() >= n_j or binding.bone_child.max() >= n_j:
        raise ValueError("binding references joints outside the skeleton")

    faces = mesh.faces
    face_edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    topo = np.unique(np.concatenate([face_edges, face_edges[:, ::-1]]), axis=0)
    radius_edges = radius_neighbours(mesh.vertices, r=r, max_n=max_n, seed=seed)
    mesh_graph = Graph(n_v, {
        NeighbourhoodKind.MESH_TOPOLOGY: add_self_loops_for_isolated(topo, n_v),
        NeighbourhoodKind.MESH_RADIUS: add_self_loops_for_isolated(radius_edges, n_v),
    })

    bones = skel.bones()
    skel_edges = np.concatenate([bones, bones[:, ::-1]])
    skeleton_graph = Graph(n_j, {
        NeighbourhoodKind.SKELETON_TOPOLOGY: add_self_loops_for_isolated(skel_edges, n_j),
    })

    v_idx, slot = np.nonzero(binding.valid)
    j_idx = binding.joints[v_idx, slot] + n_v
    pairs = np.stack([v_idx, j_idx], axis=1)
    binding_edges = np.concatenate([pairs, pairs[:, ::-1]])
    node_kind = np.concatenate([
        np.full(n_v, MESH_VERTEX, dtype=np.int8),
        np.full(n_j, SKELETON_JOINT, dtype=np.int8),
    ])
    mesh_skel_graph = Graph(n_v + n_j, {
        NeighbourhoodKind.BINDING: add_self_loops_for_isolated(binding_edges, n_v + n_j),
    }, node_kind=node_kind)
    return AssetGraphs(mesh=mesh_graph, skeleton=skeleton_graph,
                       mesh_skeleton=mesh_skel_graph)


def mesh_feature_width(k):
    return 3 + k * SLOT_WIDTH


def assemble_features(asset, binding, joint_distances):
    """Pack the input node attributes.

    Mesh rows: vertex position, then per slot the distance to the slot's
    joint, the introducing bone's start and end rest positions and the
    end-joint flag. Padding slots copy slot 0. Skeleton rows: joint rest
    position.
    """
    skel = asset.skeleton
    positions = skel.positions
    joint_distances = np.asarray(joint_distances, dtype=np.float64)
    expected = (asset.mesh.vertex_count, skel.joint_count)
    if joint_distances.shape != expected:
        raise ValueError(
            "joint distance table shape %r, expected %r"
            % (joint_distances.shape, expected)
        )
    if not np.isfinite(joint_distances).all():
        raise ValueError("joint distance table has non-finite entries")
    n_v, k = binding.joints.shape
    end_flags = skel.is_end_joint().astype(np.float64)

    v_rows = np.arange(n_v)[:, None]
    slot_dist = joint_distances[v_rows, binding.joints]          # [V, k]
    starts = positions[skel.parents[binding.bone_child]]         # bone root side
    ends = positions[binding.bone_child]
    flags = end_flags[binding.joints]
    slots = np.concatenate(
        [slot_dist[..., None], starts, ends, flags[..., None]], axis=2
    )  # [V, k, 8]
    slots = np.where(binding.valid[..., None], slots, slots[:, :1, :])
    mesh_attrs = np.concatenate(
        [asset.mesh.vertices, slots.reshape(n_v, k * SLOT_WIDTH)], axis=1
    )
    skel_attrs = positions.copy()
    return mesh_attrs, skel_attrs
