"""Forward kinematics, linear blend skinning and the evaluation metrics."""

from dataclasses import dataclass

import numpy as np

INFLUENCE_THRESHOLD = 1e-4


@dataclass
class Pose:
    """Per-joint local rotations as Euler angles in degrees (x, y, z)."""

    angles_deg: np.ndarray  # [J, 3]

    def __post_init__(self):
        self.angles_deg = np.asarray(self.angles_deg, dtype=np.float64).reshape(-1, 3)


def identity_pose(n_joints):
    return Pose(np.zeros((n_joints, 3)))


def sample_poses(skeleton, n, range_deg=10.0, seed=0):
    """n poses with every Euler angle i.i.d. uniform in +-range_deg."""
    if n < 1:
        raise ValueError("need at least one pose")
    rng = np.random.default_rng(seed)
    return [
        Pose(rng.uniform(-range_deg, range_deg, size=(skeleton.joint_count, 3)))
        for _ in range(n)
    ]


def _euler_xyz(deg):
    """Rotation matrix R = Rx @ Ry @ Rz from degrees (fixed composition)."""
    rx, ry, rz = np.radians(deg)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mx @ my @ mz


def _affine(rotation, translation):
    m = np.eye(4)
    m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


def forward_kinematics(skeleton, pose):
    """Per-joint skinning transforms M_j mapping rest space to posed space.

    Posed frames compose down the tree: G_j = G_parent @ T(offset) @ R_j
    with G_root = T(p_root) @ R_root; rest frames are G_j = T(p_j), so
    M_j = G_j(posed) @ T(-p_j).
    """
    positions = skeleton.positions
    n = skeleton.joint_count
    if pose.angles_deg.shape[0] != n:
        raise ValueError("pose covers %d joints, skeleton has %d"
                         % (pose.angles_deg.shape[0], n))
    posed = [None] * n
    transforms = np.empty((n, 4, 4))
    for j in _topological_order(skeleton):
        rot = _euler_xyz(pose.angles_deg[j])
        parent = skeleton.parents[j]
        if parent < 0:
            posed[j] = _affine(rot, positions[j])
        else:
            local = _affine(rot, positions[j] - positions[parent])
            posed[j] = posed[parent] @ local
        transforms[j] = posed[j] @ _affine(np.eye(3), -positions[j])
    return transforms


def _topological_order(skeleton):
    order = [skeleton.root]
    kids = skeleton.children_of()
    i = 0
    while i < len(order):
        order.extend(kids[order[i]])
        i += 1
    return order


def lbs_deform(mesh, weights, transforms):
    """Linear blend skinning: v' = sum_j w_vj (M_j v).

    weights is a dense [V, J] matrix; rows must sum to one. Computed in
    displacement form v + sum_j w_vj (M_j v - v), which is identical for
    normalized rows and keeps identity transforms exactly the identity.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != mesh.vertex_count:
        raise ValueError("weights cover %d vertices, mesh has %d"
                         % (weights.shape[0], mesh.vertex_count))
    sums = weights.sum(axis=1)
    if (sums == 0.0).any():
        raise ValueError("vertex %d has all-zero weights"
                         % int(np.flatnonzero(sums == 0.0)[0]))
    if np.abs(sums - 1.0).max() > 1e-4:
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError("weight row %d sums to %r" % (bad, sums[bad]))
    homo = np.concatenate([mesh.vertices, np.ones((mesh.vertex_count, 1))], axis=1)
    moved = np.einsum("jab,vb->vja", transforms, homo)[..., :3]  # [V, J, 3]
    displacement = moved - mesh.vertices[:, None, :]
    return mesh.vertices + np.einsum("vj,vjd->vd", weights, displacement)


def influence_sets(weights, threshold=INFLUENCE_THRESHOLD):
    return np.asarray(weights) > threshold


def metrics(predicted, ground_truth, asset, poses,
            influence_threshold=INFLUENCE_THRESHOLD):
    """The evaluation report for one asset.

    precision/recall compare per-vertex influence sets (weights above
    the threshold), avg_l1 is the mean L1 gap between dense weight rows,
    and the deformation numbers compare posed vertex positions under
    predicted vs ground-truth weights across the given poses.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if predicted.shape != ground_truth.shape:
        raise ValueError("weight matrices disagree: %r vs %r"
                         % (predicted.shape, ground_truth.shape))
    if predicted.shape[0] != asset.mesh.vertex_count:
        raise ValueError("weights cover %d vertices, mesh has %d"
                         % (predicted.shape[0], asset.mesh.vertex_count))

    pred_inf = influence_sets(predicted, influence_threshold)
    gt_inf = influence_sets(ground_truth, influence_threshold)
    overlap = (pred_inf & gt_inf).sum(axis=1)
    n_pred = pred_inf.sum(axis=1)
    n_gt = gt_inf.sum(axis=1)
    precision = float(np.mean(np.where(n_pred > 0, overlap / np.maximum(n_pred, 1), 1.0)))
    recall = float(np.mean(np.where(n_gt > 0, overlap / np.maximum(n_gt, 1), 1.0)))
    avg_l1 = float(np.abs(predicted - ground_truth).sum(axis=1).mean())

    gaps = []
    for pose in poses:
        transforms = forward_kinematics(asset.skeleton, pose)
        moved_pred = lbs_deform(asset.mesh, predicted, transforms)
        moved_gt = lbs_deform(asset.mesh, ground_truth, transforms)
        gaps.append(np.linalg.norm(moved_pred - moved_gt, axis=1))
    gaps = np.concatenate(gaps) if gaps else np.zeros(1)
    return {
        "precision": precision,
        "recall": recall,
        "avg_l1": avg_l1,
        "avg_deformation": float(gaps.mean()),
        "max_deformation": float(gaps.max()),
    }


def evaluate_assets(entries, poses_per_asset):
    """Aggregate metrics over (name, predicted, ground_truth, asset) rows.

    Scalar metrics average uniformly over vertices (and poses) of the
    whole set; max_deformation is the set-wide maximum. Returns the
    aggregate report plus a per-asset breakdown.
    """
    per_asset = {}
    totals = {"precision": [], "recall": [], "l1": [], "gaps": []}
    for name, predicted, ground_truth, asset in entries:
        poses = poses_per_asset[name]
        report = metrics(predicted, ground_truth, asset, poses)
        per_asset[name] = report
        n_v = asset.mesh.vertex_count
        totals["precision"].append((report["precision"], n_v))
        totals["recall"].append((report["recall"], n_v))
        totals["l1"].append((report["avg_l1"], n_v))
        for pose in poses:
            transforms = forward_kinematics(asset.skeleton, pose)
            gap = np.linalg.norm(
                lbs_deform(asset.mesh, predicted, transforms)
                - lbs_deform(asset.mesh, ground_truth, transforms), axis=1)
            totals["gaps"].append(gap)

    def weighted(rows):
        value = sum(v * w for v, w in rows)
        weight = sum(w for _, w in rows)
        return float(value / weight)

    gaps = np.concatenate(totals["gaps"])
    return {
        "precision": weighted(totals["precision"]),
        "recall": weighted(totals["recall"]),
        "avg_l1": weighted(totals["l1"]),
        "avg_deformation": float(gaps.mean()),
        "max_deformation": float(gaps.max()),
        "per_asset": per_asset,
    }
