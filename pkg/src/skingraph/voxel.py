"""Voxelization and volumetric geodesic distance.

The grid classifies cells as surface (conservative triangle-box
overlap), exterior (flood-fill reachable from the grid boundary) or
interior. Geodesics run Dijkstra over surface + interior cells with
26-connectivity and Euclidean step costs; endpoints snap to the nearest
admissible cell and the snap gaps are added back to the path length.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

EXTERIOR = 0
SURFACE = 1
INTERIOR = 2


@dataclass
class VoxelGrid:
    resolution: int
    dims: tuple
    origin: np.ndarray
    cell_size: float
    occupancy: np.ndarray

    @property
    def cell_diagonal(self):
        return self.cell_size * np.sqrt(3.0)

    def cell_centers(self, cells):
        return self.origin + (np.asarray(cells, dtype=np.float64) + 0.5) * self.cell_size

    def contains(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        hi = self.origin + np.asarray(self.dims) * self.cell_size
        return np.all((points >= self.origin) & (points <= hi), axis=1)

    def interior_cell_count(self):
        return int((self.occupancy == INTERIOR).sum())


_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))
_AXES = np.eye(3)


def _triangle_overlaps(tri, centers, half):
    """Separating-axis triangle/box overlap, vectorized over box centers."""
    v = tri[None, :, :] - centers[:, None, :]  # [C, 3, 3]
    ok = np.ones(len(centers), dtype=bool)
    edges = tri[[1, 2, 0]] - tri
    axes = [np.cross(edges[i], _AXES[j]) for i, j in np.ndindex(3, 3)]
    axes.append(np.cross(edges[0], edges[1]))  # triangle normal (plane test)
    for axis in axes:
        rad = half * np.abs(axis).sum()
        proj = v @ axis  # [C, 3]
        ok &= ~((proj.min(axis=1) > rad) | (proj.max(axis=1) < -rad))
        if not ok.any():
            break
    return ok


def voxelize(mesh, resolution=64):
    """Classify a padded grid over the mesh bbox into surface/interior/exterior.

    resolution counts cells along the longest bbox axis; one padding cell
    is added on every side so the boundary is guaranteed exterior.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8, got %r" % (resolution,))
    verts = mesh.vertices
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    extent = hi - lo
    cell = float(extent.max()) / resolution
    if cell <= 0.0:
        raise ValueError("degenerate mesh bounding box")
    dims = tuple(int(np.ceil(e / cell)) + 2 for e in extent)
    origin = lo - cell
    occ = np.zeros(dims, dtype=np.uint8)

    half = cell / 2.0
    lo_idx_all = np.clip(
        np.floor((verts[mesh.faces].min(axis=1) - origin) / cell).astype(int),
        0, np.asarray(dims) - 1,
    )
    hi_idx_all = np.clip(
        np.floor((verts[mesh.faces].max(axis=1) - origin) / cell).astype(int),
        0, np.asarray(dims) - 1,
    )
    for f, face in enumerate(mesh.faces):
        tri = verts[face]
        lo_idx, hi_idx = lo_idx_all[f], hi_idx_all[f]
        ii, jj, kk = np.meshgrid(
            np.arange(lo_idx[0], hi_idx[0] + 1),
            np.arange(lo_idx[1], hi_idx[1] + 1),
            np.arange(lo_idx[2], hi_idx[2] + 1),
            indexing="ij",
        )
        cells = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        centers = origin + (cells + 0.5) * cell
        hit = _triangle_overlaps(tri, centers, half)
        marked = cells[hit]
        occ[marked[:, 0], marked[:, 1], marked[:, 2]] = SURFACE

    free = occ != SURFACE
    labels, _ = ndimage.label(free)
    border = np.concatenate([
        labels[0].ravel(), labels[-1].ravel(),
        labels[:, 0].ravel(), labels[:, -1].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ])
    outside = np.setdiff1d(np.unique(border), [0])
    exterior = free & np.isin(labels, outside)
    occ[free & ~exterior] = INTERIOR
    return VoxelGrid(resolution=resolution, dims=dims, origin=origin,
                     cell_size=cell, occupancy=occ)


_OFFSETS = np.array([
    (dx, dy, dz)
    for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
])


class GeodesicSolver:
    """Shortest paths across the surface + interior cells of one grid."""

    def __init__(self, grid):
        self.grid = grid
        mask = grid.occupancy != EXTERIOR
        if not mask.any():
            raise ValueError("grid has no traversable cells")
        self.cells = np.argwhere(mask)
        self.ids = -np.ones(grid.dims, dtype=np.int64)
        self.ids[mask] = np.arange(len(self.cells))
        rows, cols, costs = [], [], []
        for off in _OFFSETS:
            src_slices, dst_slices = [], []
            for d, o in enumerate(off):
                n = grid.dims[d]
                if o < 0:
                    src_slices.append(slice(1, n))
                    dst_slices.append(slice(0, n - 1))
                elif o > 0:
                    src_slices.append(slice(0, n - 1))
                    dst_slices.append(slice(1, n))
                else:
                    src_slices.append(slice(0, n))
                    dst_slices.append(slice(0, n))
            both = mask[tuple(src_slices)] & mask[tuple(dst_slices)]
            rows.append(self.ids[tuple(src_slices)][both])
            cols.append(self.ids[tuple(dst_slices)][both])
            step = grid.cell_size * float(np.linalg.norm(off))
            costs.append(np.full(both.sum(), step))
        n_cells = len(self.cells)
        self.graph = csr_matrix(
            (np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_cells, n_cells),
        )
        centers = grid.cell_centers(self.cells)
        surface = grid.occupancy[tuple(self.cells.T)] == SURFACE
        self._surface_tree = cKDTree(centers[surface]) if surface.any() else None
        self._surface_ids = np.flatnonzero(surface)
        self._all_tree = cKDTree(centers)
        self._centers = centers

    def snap(self, points, surface_only):
        """Nearest admissible cell per point: (cell ids, snap distances)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if surface_only and self._surface_tree is not None:
            d, i = self._surface_tree.query(points)
            return self._surface_ids[i], d
        d, i = self._all_tree.query(points)
        return i, d

    def fields(self, sources):
        """Dijkstra distance fields [S, n_cells] from source cell ids."""
        return dijkstra(self.graph, directed=True, indices=np.asarray(sources))

    def vertex_joint_distances(self, vertices, joints):
        """Geodesic distance [V, J] plus a mask of Euclidean fallbacks.

        Vertices snap to surface cells; joints to any non-exterior cell.
        Disconnected pairs fall back to the straight-line distance.
        """
        vertices = np.asarray(vertices, dtype=np.float64)
        joints = np.asarray(joints, dtype=np.float64)
        self._check_inside(vertices)
        self._check_inside(joints)
        v_cells, v_snap = self.snap(vertices, surface_only=True)
        j_cells, j_snap = self.snap(joints, surface_only=False)
        field = self.fields(j_cells)  # [J, n_cells]
        d = field[:, v_cells].T + v_snap[:, None] + j_snap[None, :]
        fallback = ~np.isfinite(d)
        if fallback.any():
            euclid = np.linalg.norm(vertices[:, None, :] - joints[None, :, :], axis=2)
            d = np.where(fallback, euclid, d)
        return d, fallback

    def _check_inside(self, points):
        if not self.grid.contains(points).all():
            raise ValueError("point lies outside the voxel grid (grid/asset mismatch)")


def solver_for(grid):
    solver = getattr(grid, "_solver", None)
    if solver is None:
        solver = GeodesicSolver(grid)
        grid._solver = solver
    return solver


def geodesic_distance(grid, vertex, joint, with_fallback_flag=False):
    """Shortest path from vertex to joint through the mesh volume.

    Returns the path length plus endpoint snap corrections; when no path
    exists the straight-line distance is returned (flag available via
    with_fallback_flag).
    """
    solver = solver_for(grid)
    d, fallback = solver.vertex_joint_distances(
        np.asarray(vertex, dtype=np.float64)[None, :],
        np.asarray(joint, dtype=np.float64)[None, :],
    )
    if with_fallback_flag:
        return float(d[0, 0]), bool(fallback[0, 0])
    return float(d[0, 0])
