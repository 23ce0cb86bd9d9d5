"""Synthetic rig generator: capsule tubes extruded along joint chains.

Ground-truth weights follow a closed-form rule (softmax over negative
distances to the two nearest bones at fixed temperature), so they are
smooth, deterministic and recoverable by a learner.
"""

from dataclasses import dataclass, replace

import numpy as np

from .geometry import Mesh, RigAsset, Skeleton, normalize, point_segment_distances

RING_SIZE = 12


@dataclass(frozen=True)
class SyntheticRigSpec:
    count: int = 32
    joint_range: tuple = (3, 6)        # joints per chain, inclusive
    radius_range: tuple = (0.08, 0.16)  # tube radius, in bone-length units
    length_range: tuple = (0.5, 1.0)    # bone length range
    vertex_range: tuple = (300, 800)
    max_bend_deg: float = 25.0
    weight_temperature: float = 0.25
    seed: int = 7

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one asset")
        for lo, hi in (self.joint_range, self.radius_range,
                       self.length_range, self.vertex_range):
            if lo > hi or lo <= 0:
                raise ValueError("bad range (%r, %r)" % (lo, hi))


def _rotate(v, axis, angle):
    axis = axis / np.linalg.norm(axis)
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1.0 - c)


def _chain_positions(rng, spec, n_joints):
    direction = np.array([0.0, 1.0, 0.0])
    positions = [np.zeros(3)]
    for _ in range(n_joints - 1):
        bend = np.radians(rng.uniform(0.0, spec.max_bend_deg))
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        perp = np.cross(direction, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-8:
            perp = np.cross(direction, [0.0, 0.0, 1.0])
        axis = _rotate(perp, direction, azimuth)
        direction = _rotate(direction, axis, bend)
        direction /= np.linalg.norm(direction)
        length = rng.uniform(*spec.length_range)
        positions.append(positions[-1] + direction * length)
    return np.asarray(positions)


def _polyline_frames(positions, stations):
    """Point + parallel-transported (tangent, u, v) frame per station."""
    seg_vec = np.diff(positions, axis=0)
    seg_len = np.linalg.norm(seg_vec, axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    ts = np.linspace(0.0, total, stations)

    points, tangents = [], []
    for t in ts:
        i = min(np.searchsorted(cum, t, side="right") - 1, len(seg_vec) - 1)
        i = max(i, 0)
        local = (t - cum[i]) / seg_len[i]
        points.append(positions[i] + local * seg_vec[i])
        tangents.append(seg_vec[i] / seg_len[i])

    frames = []
    u = np.cross(tangents[0], [1.0, 0.0, 0.0])
    if np.linalg.norm(u) < 1e-8:
        u = np.cross(tangents[0], [0.0, 0.0, 1.0])
    u /= np.linalg.norm(u)
    prev_t = tangents[0]
    for t_vec in tangents:
        axis = np.cross(prev_t, t_vec)
        norm = np.linalg.norm(axis)
        if norm > 1e-12:
            angle = np.arctan2(norm, float(prev_t @ t_vec))
            u = _rotate(u, axis / norm, angle)
        u = u - (u @ t_vec) * t_vec
        u /= np.linalg.norm(u)
        frames.append((t_vec, u, np.cross(t_vec, u)))
        prev_t = t_vec
    return np.asarray(points), frames


def _tube_mesh(positions, tube_radius, n_vertices):
    stations = max(4, (n_vertices - 2) // RING_SIZE)
    points, frames = _polyline_frames(positions, stations)
    angles = 2.0 * np.pi * np.arange(RING_SIZE) / RING_SIZE

    verts = []
    for p, (t_vec, u, v) in zip(points, frames):
        ring = p + tube_radius * (
            np.outer(np.cos(angles), u) + np.outer(np.sin(angles), v)
        )
        verts.extend(ring)
    start_cap = len(verts)
    verts.append(points[0] - frames[0][0] * tube_radius)
    end_cap = len(verts)
    verts.append(points[-1] + frames[-1][0] * tube_radius)

    faces = []
    for s in range(stations - 1):
        base, nxt = s * RING_SIZE, (s + 1) * RING_SIZE
        for i in range(RING_SIZE):
            j = (i + 1) % RING_SIZE
            faces.append((base + i, base + j, nxt + j))
            faces.append((base + i, nxt + j, nxt + i))
    for i in range(RING_SIZE):
        j = (i + 1) % RING_SIZE
        faces.append((start_cap, j, i))
        last = (stations - 1) * RING_SIZE
        faces.append((end_cap, last + i, last + j))
    return Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


def analytic_weights(asset, temperature):
    """Softmax over negative distances to the two nearest bones.

    Mass lands on the bones' root joints; a tube vertex halfway between
    two bones splits its weight evenly between their roots.
    """
    bones = asset.skeleton.bones()
    d = point_segment_distances(
        asset.mesh.vertices,
        asset.skeleton.positions[bones[:, 0]],
        asset.skeleton.positions[bones[:, 1]],
    )
    weights = np.zeros((asset.mesh.vertex_count, asset.skeleton.joint_count))
    if len(bones) == 1:
        weights[:, bones[0, 0]] = 1.0
        return weights
    order = np.argsort(d, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(d))[:, None]
    pair = d[rows, order]
    logits = -pair / temperature
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    w = e / e.sum(axis=1, keepdims=True)
    roots = bones[order, 0]
    for s in range(2):
        np.add.at(weights, (rows[:, 0], roots[:, s]), w[:, s])
    return weights


def generate_synthetic(spec):
    """Deterministic list of normalized tube assets with analytic weights."""
    rng = np.random.default_rng(spec.seed)
    assets = []
    for i in range(spec.count):
        n_joints = int(rng.integers(spec.joint_range[0], spec.joint_range[1] + 1))
        positions = _chain_positions(rng, spec, n_joints)
        mean_len = float(np.linalg.norm(np.diff(positions, axis=0), axis=1).mean())
        tube_radius = rng.uniform(*spec.radius_range) * mean_len
        n_vertices = int(rng.integers(spec.vertex_range[0], spec.vertex_range[1] + 1))
        mesh = _tube_mesh(positions, tube_radius, n_vertices)
        names = ["joint%d" % j for j in range(n_joints)]
        skeleton = Skeleton(names, positions, [-1] + list(range(n_joints - 1)))
        asset = normalize(RigAsset(mesh=mesh, skeleton=skeleton,
                                   name="asset_%03d" % i))
        assets.append(replace(
            asset, weights=analytic_weights(asset, spec.weight_temperature)
        ))
    return assets
