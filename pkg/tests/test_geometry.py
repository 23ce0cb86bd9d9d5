import numpy as np
import pytest

from skingraph.geometry import (
    Mesh,
    RigAsset,
    Skeleton,
    normalize,
    point_segment_distance,
    point_segment_distances,
    radius_neighbours,
)


def box_mesh(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0)):
    c = np.asarray(center, dtype=float)
    s = np.asarray(size, dtype=float) / 2.0
    corners = np.array([
        [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
        [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
    ], dtype=float)
    verts = c + corners * s
    quads = [
        (0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
        (2, 3, 7, 6), (1, 2, 6, 5), (0, 4, 7, 3),
    ]
    faces = []
    for a, b, cc, d in quads:
        faces.append((a, b, cc))
        faces.append((a, cc, d))
    return Mesh(np.asarray(verts), np.asarray(faces))


def two_joint_skeleton():
    return Skeleton(["root", "tip"], [[0, 0, 0], [0, 1, 0]], [-1, 0])


def test_skeleton_validation():
    with pytest.raises(ValueError, match="exactly one root"):
        Skeleton(["a", "b"], np.zeros((2, 3)), [-1, -1])
    with pytest.raises(ValueError, match="unique"):
        Skeleton(["a", "a"], np.zeros((2, 3)), [-1, 0])
    with pytest.raises(ValueError, match="cyclic"):
        Skeleton(["a", "b", "c"], np.zeros((3, 3)), [-1, 2, 1])
    sk = Skeleton(["r", "m", "e"], [[0, 0, 0], [1, 0, 0], [2, 0, 0]], [-1, 0, 1])
    assert np.array_equal(sk.bones(), [[0, 1], [1, 2]])
    assert np.array_equal(sk.is_end_joint(), [False, False, True])
    assert sk.root == 0


def test_normalize_cube():
    mesh = box_mesh(center=(5.0, 5.0, 5.0), size=(10.0, 10.0, 10.0))
    asset = RigAsset(mesh=mesh, skeleton=two_joint_skeleton())
    out = normalize(asset)
    assert abs(out.transform.scale - 0.2) < 1e-12
    assert np.allclose(out.transform.center, [5.0, 5.0, 5.0])
    assert np.allclose(out.mesh.vertices.min(axis=0), [-1, -1, -1])
    assert np.allclose(out.mesh.vertices.max(axis=0), [1, 1, 1])
    # joints get the same similarity transform: bone lengths scale alike
    bone_before = np.linalg.norm(np.diff(asset.skeleton.positions, axis=0))
    bone_after = np.linalg.norm(np.diff(out.skeleton.positions, axis=0))
    assert abs(bone_after - bone_before * 0.2) < 1e-12


def test_normalize_idempotent_and_invertible():
    rng = np.random.default_rng(0)
    mesh = Mesh(rng.normal(size=(30, 3)) * 4.0 + 2.0, np.array([[0, 1, 2]]))
    asset = RigAsset(mesh=mesh, skeleton=two_joint_skeleton())
    once = normalize(asset)
    twice = normalize(once)
    assert np.allclose(once.mesh.vertices, twice.mesh.vertices, atol=1e-9)
    assert abs(twice.transform.scale / once.transform.scale - 1.0) < 1e-9
    # composed transform maps original coordinates to current ones
    assert np.allclose(twice.transform.apply(asset.mesh.vertices),
                       twice.mesh.vertices, atol=1e-12)
    assert np.allclose(twice.transform.invert(twice.mesh.vertices),
                       asset.mesh.vertices, atol=1e-9)


def test_normalize_rejects_degenerate_box():
    mesh = Mesh(np.zeros((4, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError, match="zero extent"):
        normalize(RigAsset(mesh=mesh, skeleton=two_joint_skeleton()))


def test_point_segment_distance_basics():
    a, b = np.zeros(3), np.array([1.0, 0.0, 0.0])
    assert abs(point_segment_distance([0.5, 0.1, 0.0], a, b) - 0.1) < 1e-12
    assert abs(point_segment_distance([2.0, 0.0, 0.0], a, b) - 1.0) < 1e-12
    assert abs(point_segment_distance([0.3, 0.0, 0.0], a, a) - 0.3) < 1e-12


def test_point_segment_distance_against_dense_sampling():
    # oracle: min distance over 1e5 sampled points along the segment
    rng = np.random.default_rng(1)
    ts = np.linspace(0.0, 1.0, 100_000)
    for _ in range(25):
        p, a, b = rng.normal(size=(3, 3))
        samples = a + ts[:, None] * (b - a)
        oracle = np.linalg.norm(samples - p, axis=1).min()
        assert abs(point_segment_distance(p, a, b) - oracle) < 1e-4


def test_point_segment_distances_batch_matches_scalar():
    rng = np.random.default_rng(2)
    points = rng.normal(size=(7, 3))
    starts = rng.normal(size=(4, 3))
    ends = rng.normal(size=(4, 3))
    ends[2] = starts[2]  # degenerate segment
    d = point_segment_distances(points, starts, ends)
    for i in range(7):
        for j in range(4):
            assert abs(d[i, j] - point_segment_distance(points[i], starts[j], ends[j])) < 1e-12


def test_radius_neighbours_strict_radius():
    pts = np.array([
        [0.0, 0.0, 0.0],
        [0.05, 0.0, 0.0],
        [0.07, 0.0, 0.0],
    ])
    edges = radius_neighbours(pts, r=0.06, max_n=10, seed=0)
    into_0 = set(edges[edges[:, 1] == 0][:, 0])
    assert into_0 == {1}


def test_radius_neighbours_cap_and_determinism():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.02, 0.02, size=(16, 3))  # all mutually within r
    edges = radius_neighbours(pts, r=0.06, max_n=10, seed=5)
    for i in range(16):
        incoming = edges[edges[:, 1] == i][:, 0]
        assert len(incoming) == 10
        assert len(set(incoming)) == 10
        assert i not in set(incoming)
        d = np.linalg.norm(pts[incoming] - pts[i], axis=1)
        assert (d < 0.06).all()
    again = radius_neighbours(pts, r=0.06, max_n=10, seed=5)
    assert np.array_equal(edges, again)
    other = radius_neighbours(pts, r=0.06, max_n=10, seed=6)
    assert not np.array_equal(edges, other)


def test_radius_neighbours_isolated_points():
    pts = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    edges = radius_neighbours(pts, r=0.06, max_n=10, seed=0)
    assert edges.shape == (0, 2)
