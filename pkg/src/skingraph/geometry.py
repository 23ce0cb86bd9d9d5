"""Meshes, skeletons, normalization and spatial neighbourhood queries."""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class Mesh:
    """Triangle mesh: vertices [V, 3] float64, faces [F, 3] int64."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise ValueError("face index out of range")

    @property
    def vertex_count(self):
        return len(self.vertices)


class Skeleton:
    """Joint tree: names, rest positions [J, 3] and parent indices (-1 root)."""

    def __init__(self, names, positions, parents):
        self.names = list(names)
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self.parents = np.asarray(parents, dtype=np.int64).reshape(-1)
        n = len(self.names)
        if len(self.positions) != n or len(self.parents) != n:
            raise ValueError("names, positions and parents disagree on joint count")
        if len(set(self.names)) != n:
            raise ValueError("joint names must be unique")
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1:
            raise ValueError("skeleton must have exactly one root, found %d" % len(roots))
        if (self.parents >= n).any():
            raise ValueError("parent index out of range")
        self.root = int(roots[0])
        # cycle check: every joint must reach the root
        for j in range(n):
            seen = set()
            cur = j
            while cur != self.root:
                if cur in seen:
                    raise ValueError("cyclic joint hierarchy at %r" % self.names[j])
                seen.add(cur)
                cur = int(self.parents[cur])

    @property
    def joint_count(self):
        return len(self.names)

    def bones(self):
        """One bone per non-root joint: rows of (parent, child) indices."""
        children = np.flatnonzero(self.parents >= 0)
        return np.stack([self.parents[children], children], axis=1)

    def children_of(self):
        kids = [[] for _ in range(self.joint_count)]
        for j, p in enumerate(self.parents):
            if p >= 0:
                kids[p].append(j)
        return kids

    def is_end_joint(self):
        """True for joints with no children."""
        flags = np.ones(self.joint_count, dtype=bool)
        flags[self.parents[self.parents >= 0]] = False
        return flags

    def index_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError("unknown joint name %r" % name) from None


@dataclass(frozen=True)
class NormalizeTransform:
    """v' = (v - center) * scale, applied uniformly to mesh and joints."""

    scale: float
    center: np.ndarray

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + self.center

    def compose(self, inner):
        """Transform equivalent to applying inner first, then self."""
        if inner is None:
            return self
        return NormalizeTransform(
            scale=self.scale * inner.scale,
            center=inner.center + self.center / inner.scale,
        )


@dataclass
class RigAsset:
    """Mesh + skeleton + optional ground-truth skin weights [V, J]."""

    mesh: Mesh
    skeleton: Skeleton
    weights: np.ndarray = None
    name: str = ""
    transform: NormalizeTransform = None

    def __post_init__(self):
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            expected = (self.mesh.vertex_count, self.skeleton.joint_count)
            if self.weights.shape != expected:
                raise ValueError(
                    "weights shape %r, expected %r" % (self.weights.shape, expected)
                )


def normalize(asset):
    """Uniform scale + translation mapping the mesh bbox into [-1, 1]^3.

    The same similarity transform is applied to the joints; the composed
    original-to-current transform is recorded on the asset.
    """
    lo = asset.mesh.vertices.min(axis=0)
    hi = asset.mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise ValueError("degenerate bounding box: zero extent")
    t = NormalizeTransform(scale=2.0 / extent, center=(lo + hi) / 2.0)
    mesh = Mesh(t.apply(asset.mesh.vertices), asset.mesh.faces)
    skel = Skeleton(asset.skeleton.names, t.apply(asset.skeleton.positions),
                    asset.skeleton.parents)
    return replace(asset, mesh=mesh, skeleton=skel,
                   transform=t.compose(asset.transform))


def point_segment_distance(p, a, b):
    """Euclidean distance from point p to the closed segment [a, b].

    Delegates to the batch routine so scalar and batched queries agree
    bit for bit (exact geometric ties must sort identically everywhere).
    """
    d = point_segment_distances(
        np.asarray(p, dtype=np.float64)[None, :],
        np.asarray(a, dtype=np.float64)[None, :],
        np.asarray(b, dtype=np.float64)[None, :],
    )
    return float(d[0, 0])


def point_segment_distances(points, starts, ends):
    """Distances [N, B] from each point to each closed segment."""
    points = np.asarray(points, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    ab = ends - starts  # [B, 3]
    denom = (ab * ab).sum(axis=1)  # [B]
    safe = np.where(denom > 0.0, denom, 1.0)
    ap = points[:, None, :] - starts[None, :, :]  # [N, B, 3]
    t = np.clip(np.einsum("nbd,bd->nb", ap, ab) / safe, 0.0, 1.0)
    t = np.where(denom > 0.0, t, 0.0)
    closest = starts[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def radius_neighbours(points, r, max_n, seed):
    """Directed neighbour->centre edges for points strictly within radius r.

    When a point has more than max_n candidates, min(count, max_n) are
    sampled uniformly without replacement with the seeded generator, so
    the edge set is reproducible.
    """
    if r <= 0.0:
        raise ValueError("radius must be positive")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    points = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(seed)
    tree = cKDTree(points)
    candidates = tree.query_ball_point(points, r)
    edges = []
    for i, cand in enumerate(candidates):
        cand = np.array(sorted(cand), dtype=np.int64)
        cand = cand[cand != i]
        if cand.size:
            d = np.linalg.norm(points[cand] - points[i], axis=1)
            cand = cand[d < r]
        if cand.size > max_n:
            cand = cand[rng.choice(cand.size, size=max_n, replace=False)]
        for j in cand:
            edges.append((j, i))
    if not edges:
        return np.empty((0, 2), dtype=np.int64)
    return np.asarray(edges, dtype=np.int64)
