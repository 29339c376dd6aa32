"""
Surface sampling, distance metrics and damage generators.

Distances are exact point-to-triangle distances; the spatial index only
prunes candidate triangles, so results match a brute-force scan.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from sklearn.neighbors import KDTree

from errors import GeometryError, InsufficientDataError, MeshFormatError
from mesh_core import Mesh, PathLike, PointCloud

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 200.0

Points = Union[PointCloud, np.ndarray]


def _as_points(points: Points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Row-wise closest point on triangle (a, b, c) to p (Voronoi-region walk)."""
    p, a, b, c = (np.asarray(x, dtype=np.float64).reshape(-1, 3) for x in (p, a, b, c))
    out = np.empty_like(p)
    todo = np.ones(len(p), dtype=bool)
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def take(mask, value_fn):
        nonlocal todo
        m = todo & mask
        if m.any():
            out[m] = value_fn(m)
        todo = todo & ~m

    take((d1 <= 0) & (d2 <= 0), lambda m: a[m])
    take((d3 >= 0) & (d4 <= d3), lambda m: b[m])
    take((vc <= 0) & (d1 >= 0) & (d3 <= 0),
         lambda m: a[m] + (d1[m] / (d1[m] - d3[m]))[:, None] * ab[m])
    take((d6 >= 0) & (d5 <= d6), lambda m: c[m])
    take((vb <= 0) & (d2 >= 0) & (d6 <= 0),
         lambda m: a[m] + (d2[m] / (d2[m] - d6[m]))[:, None] * ac[m])
    take((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
         lambda m: b[m] + ((d4[m] - d3[m]) / ((d4[m] - d3[m]) + (d5[m] - d6[m])))[:, None] * (c[m] - b[m]))

    def interior(m):
        denom = va[m] + vb[m] + vc[m]
        denom = np.where(denom != 0, denom, 1.0)
        v = vb[m] / denom
        w = vc[m] / denom
        return a[m] + v[:, None] * ab[m] + w[:, None] * ac[m]

    take(np.ones(len(p), dtype=bool), interior)
    return out


class PointMeshIndex:
    """
    Exact closest-point queries against a triangle mesh.

    Triangle centroids live in a KD-tree; every triangle whose centroid is
    within (upper bound + largest centroid radius) of a query is tested
    exactly, so no true nearest triangle can be pruned.
    """

    def __init__(self, mesh: Mesh, chunk: int = 2048):
        if mesh.n_faces == 0:
            raise GeometryError("reference mesh has no faces")
        self.triangles = mesh.vertices[mesh.faces]
        centroids = self.triangles.mean(axis=1)
        self.max_radius = float(np.linalg.norm(self.triangles - centroids[:, None, :], axis=2).max())
        self.tree = KDTree(centroids)
        self.chunk = chunk

    def _distances(self, points: np.ndarray, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        tri = self.triangles[faces]
        closest = closest_points_on_triangles(points, tri[:, 0], tri[:, 1], tri[:, 2])
        return np.linalg.norm(points - closest, axis=1), closest

    def query(self, points: Points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (distance, closest point, face index) per query point."""
        P = _as_points(points)
        dist = np.empty(len(P))
        closest = np.empty_like(P)
        face = np.empty(len(P), dtype=np.int64)
        for start in range(0, len(P), self.chunk):
            q = P[start:start + self.chunk]
            _, nearest = self.tree.query(q, k=1)
            upper, _ = self._distances(q, nearest[:, 0])
            candidates = self.tree.query_radius(q, r=upper + self.max_radius + 1e-12)
            lengths = np.array([len(c) for c in candidates])
            flat = np.concatenate([np.sort(c) for c in candidates]).astype(np.int64)
            owner = np.repeat(np.arange(len(q)), lengths)
            d, cp = self._distances(q[owner], flat)
            order = np.lexsort((flat, d, owner))
            first = order[np.concatenate([[0], np.cumsum(lengths)[:-1]])]
            dist[start:start + len(q)] = d[first]
            closest[start:start + len(q)] = cp[first]
            face[start:start + len(q)] = flat[first]
        return dist, closest, face


def sample_surface_points(mesh: Mesh, density: float, seed: int = 0,
                          face_mask: Optional[np.ndarray] = None) -> PointCloud:
    """
    Stratified uniform sampling of the mesh surface.

    Args:
        mesh: Mesh to sample.
        density: Expected points per unit area.
        seed: Random seed; the result is deterministic given (mesh, density, seed).
        face_mask: Optional boolean mask restricting sampling to some faces.

    Returns:
        PointCloud with the source face of every point.
    """
    if not density > 0:
        raise ValueError("density must be positive")
    areas = mesh.face_areas
    if face_mask is not None:
        areas = np.where(face_mask, areas, 0.0)
    if areas.sum() <= 0:
        raise GeometryError("cannot sample a zero-area mesh")
    rng = np.random.default_rng(seed)
    expected = areas * density
    counts = np.floor(expected).astype(np.int64)
    counts += rng.random(len(areas)) < (expected - counts)
    face = np.repeat(np.arange(len(areas)), counts)
    r1 = np.sqrt(rng.random(len(face)))
    r2 = rng.random(len(face))
    tri = mesh.vertices[mesh.faces[face]]
    points = ((1 - r1)[:, None] * tri[:, 0]
              + (r1 * (1 - r2))[:, None] * tri[:, 1]
              + (r1 * r2)[:, None] * tri[:, 2])
    return PointCloud(points, face)


def cloud_to_mesh_error(points: Points, reference: Mesh) -> float:
    """Mean exact distance from the points to the reference surface."""
    P = _as_points(points)
    if len(P) == 0:
        raise InsufficientDataError("no points to evaluate")
    dist, _, _ = PointMeshIndex(reference).query(P)
    return float(dist.mean())


def global_reconstruction_error(reconstructed: Mesh, reference: Mesh) -> float:
    """Mean point-to-mesh distance of the reconstructed vertices."""
    return cloud_to_mesh_error(reconstructed.vertices, reference)


def symmetric_rms_error(a: Mesh, b: Mesh) -> float:
    d_ab, _, _ = PointMeshIndex(b).query(a.vertices)
    d_ba, _, _ = PointMeshIndex(a).query(b.vertices)
    both = np.concatenate([d_ab, d_ba])
    return float(np.sqrt(np.mean(both ** 2)))


def psnr(reconstructed: Mesh, reference: Mesh, cap: float = PSNR_CAP_DB) -> float:
    """
    Peak signal-to-noise ratio with the reference bounding-box diameter as peak.

    Zero error is reported as ``cap`` dB.
    """
    rms = symmetric_rms_error(reconstructed, reference)
    if rms <= 0:
        return cap
    return float(min(cap, 20.0 * np.log10(reference.bbox_diameter() / rms)))


def rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared Euclidean error between matching point rows."""
    diff = np.asarray(estimate, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if diff.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(diff.reshape(-1, 3) ** 2, axis=1))))


# ---- damage generators -----------------------------------------------

@dataclass(frozen=True, eq=False)
class RemovedVertices:
    """Ground truth for punched holes (indices refer to the undamaged mesh)."""

    indices: np.ndarray
    positions: np.ndarray
    centers: np.ndarray
    kept_indices: np.ndarray

    def save(self, path: PathLike) -> None:
        table = np.column_stack([self.indices.astype(np.float64), self.positions])
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, table, fmt="%d %.17g %.17g %.17g")


def load_removed_vertices(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Read an ``index x y z`` ground-truth file into (indices, positions)."""
    indices, positions = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise MeshFormatError("expected 'index x y z'", str(path), lineno)
            try:
                indices.append(int(parts[0]))
                positions.append([float(x) for x in parts[1:]])
            except ValueError:
                raise MeshFormatError("bad ground-truth record", str(path), lineno) from None
    return np.asarray(indices, dtype=np.int64), np.asarray(positions, dtype=np.float64).reshape(-1, 3)


def _component_count(n: int, faces: np.ndarray, vertices: np.ndarray) -> int:
    if len(faces) == 0:
        return 0
    e = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    A = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = connected_components(A, directed=False)
    return len(np.unique(labels[vertices]))


def punch_holes(mesh: Mesh, hole_diameter: float, spacing: float, seed: int = 0,
                patch_length: Optional[float] = None) -> Tuple[Mesh, RemovedVertices]:
    """
    Remove balls of vertices around well-spread centres.

    Centres come from farthest-point sampling over the mesh vertices with
    minimum separation ``spacing``; every vertex within ``hole_diameter / 2``
    of an accepted centre is removed along with its incident faces. A centre
    whose hole would split the mesh into more pieces is skipped.
    """
    if patch_length is not None and hole_diameter > patch_length:
        raise ValueError(f"hole diameter {hole_diameter} exceeds the patch length {patch_length}")
    if not spacing > hole_diameter:
        raise ValueError("spacing must exceed the hole diameter")
    n = mesh.n_vertices
    V = mesh.vertices
    referenced = np.unique(mesh.faces)
    rng = np.random.default_rng(seed)

    centers = [int(referenced[rng.integers(len(referenced))])]
    min_dist = np.linalg.norm(V[referenced] - V[centers[0]], axis=1)
    while True:
        j = int(np.argmax(min_dist))
        if min_dist[j] < spacing:
            break
        centers.append(int(referenced[j]))
        min_dist = np.minimum(min_dist, np.linalg.norm(V[referenced] - V[referenced[j]], axis=1))

    base_components = _component_count(n, mesh.faces, referenced)
    tree = KDTree(V)
    removed = np.zeros(n, dtype=bool)
    accepted = []
    for c in centers:
        trial = removed.copy()
        trial[tree.query_radius(V[c:c + 1], r=0.5 * hole_diameter)[0]] = True
        faces = mesh.faces[~trial[mesh.faces].any(axis=1)]
        still_referenced = np.zeros(n, dtype=bool)
        still_referenced[faces.reshape(-1)] = True
        trial[referenced] |= ~still_referenced[referenced]
        kept = referenced[~trial[referenced]]
        if _component_count(n, faces, kept) > base_components:
            logger.warning("skipping hole centre %d: removing it would disconnect the mesh", c)
            continue
        removed = trial
        accepted.append(c)

    keep = ~removed
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    faces = remap[mesh.faces[keep[mesh.faces].all(axis=1)]]
    damaged = Mesh(V[keep], faces, None if mesh.valid is None else mesh.valid[keep])
    truth = RemovedVertices(
        indices=np.flatnonzero(removed),
        positions=V[removed].copy(),
        centers=np.asarray(accepted, dtype=np.int64),
        kept_indices=np.flatnonzero(keep),
    )
    logger.info("punched %d holes, removed %d vertices", len(accepted), int(removed.sum()))
    return damaged, truth


def mark_missing_vertices(mesh: Mesh, ratio: float, seed: int = 0) -> Mesh:
    """Flag exactly ``round(ratio * |V|)`` random vertices as invalid."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must lie in [0, 1)")
    count = int(np.floor(ratio * mesh.n_vertices + 0.5))
    valid = np.ones(mesh.n_vertices, dtype=bool)
    if count:
        rng = np.random.default_rng(seed)
        valid[rng.choice(mesh.n_vertices, size=count, replace=False)] = False
    return mesh.with_valid(valid)


# ---- reports ----------------------------------------------------------

def mesh_entities(mesh: Mesh) -> int:
    return 3 * mesh.n_faces + mesh.n_vertices


@dataclass
class MetricsReport:
    """One row of an evaluation table."""

    mean_distance: Optional[float] = None
    rmse: Optional[float] = None
    psnr_db: Optional[float] = None
    mesh_entities: Optional[int] = None
    patches: Optional[int] = None
    quad_entities: Optional[int] = None
    patch_entities: Optional[int] = None
    compression_factor: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        row = {k: v for k, v in asdict(self).items() if k != "extra"}
        row.update(self.extra)
        return row
