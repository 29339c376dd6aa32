"""
Quad mesh extraction and local reference frames.

A coarse quad mesh is extracted from a smoothed proxy with a simplified
extrinsic field-aligned method: a 4-RoSy orientation field seeded at creases
and strongly curved vertices, a tangent-plane lattice position field, then
lattice points linked into cells through their tangent-frame offsets. Quads
supply seed points and consistently oriented reference frames for patch
extraction.
"""

import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from sklearn.neighbors import KDTree

from errors import GeometryError, MeshFormatError, NonManifoldError, QuadrangulationError
from mesh_core import Mesh, PathLike, midpoint_subdivide
from mesh_metrics import PointMeshIndex

logger = logging.getLogger(__name__)

PLANARITY_FACTOR = 0.25
EDGE_LENGTH_TOLERANCE = 0.30
ORTHONORMAL_TOL = 1e-9
CREASE_ANGLE = 60.0
CURVATURE_ANISOTROPY = 0.5
# fractions of the target quad length
MERGE_RADIUS = 0.3
LINK_TOLERANCE = 0.35


@dataclass(frozen=True, eq=False)
class QuadMesh:
    vertices: np.ndarray
    quads: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        Q = np.array(self.quads, dtype=np.int64, copy=True).reshape(-1, 4)
        if len(Q) and (Q.min() < 0 or Q.max() >= len(V)):
            raise GeometryError("quad references a vertex outside the vertex list")
        V.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "quads", Q)

    @property
    def n_quads(self) -> int:
        return len(self.quads)

    @cached_property
    def _edge_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        half = np.stack([self.quads, np.roll(self.quads, -1, axis=1)], axis=2).reshape(-1, 2)
        edges, inverse, counts = np.unique(np.sort(half, axis=1), axis=0,
                                           return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1, 4), counts

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Neighbour quad across edge k = (q[k], q[k+1]), or -1 on a border."""
        _, inverse, counts = self._edge_table
        owners: Dict[int, List[int]] = {}
        for q, row in enumerate(inverse):
            for e in row:
                owners.setdefault(int(e), []).append(q)
        adj = -np.ones((self.n_quads, 4), dtype=np.int64)
        for q, row in enumerate(inverse):
            for k, e in enumerate(row):
                others = [o for o in owners[int(e)] if o != q]
                if len(others) == 1 and counts[e] == 2:
                    adj[q, k] = others[0]
        adj.setflags(write=False)
        return adj

    def non_manifold_edges(self) -> np.ndarray:
        edges, _, counts = self._edge_table
        return edges[counts > 2]

    @property
    def corners(self) -> np.ndarray:
        return self.vertices[self.quads]

    @property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @property
    def newell_normals(self) -> np.ndarray:
        c = self.corners
        return np.cross(c, np.roll(c, -1, axis=1)).sum(axis=1) * 0.5

    @property
    def edge_lengths(self) -> np.ndarray:
        c = self.corners
        return np.linalg.norm(np.roll(c, -1, axis=1) - c, axis=2)

    def mean_edge_length(self) -> float:
        edges = self._edge_table[0]
        return float(np.linalg.norm(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1).mean())

    def entity_count(self) -> int:
        """Entities needed to store the quad mesh: 4 per quad plus one per vertex."""
        return 4 * self.n_quads + len(self.vertices)


@dataclass(frozen=True, eq=False)
class ReferenceFrame:
    """Rigid frame with rows X, Y, Z of ``rotation`` and ``origin`` at the seed."""

    origin: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        O = np.array(self.origin, dtype=np.float64, copy=True).reshape(3)
        R = np.array(self.rotation, dtype=np.float64, copy=True).reshape(3, 3)
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHONORMAL_TOL or np.linalg.det(R) < 0:
            raise GeometryError("reference frame rotation is not a proper orthonormal matrix")
        O.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "origin", O)
        object.__setattr__(self, "rotation", R)

    @property
    def transform(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = -self.rotation @ self.origin
        return T

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.origin) @ self.rotation.T

    def to_global(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(local) @ self.rotation + self.origin


@dataclass(frozen=True, eq=False)
class SeedSet:
    points: np.ndarray
    rotations: np.ndarray
    quad_ids: np.ndarray
    offset_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def frame(self, index: int) -> ReferenceFrame:
        return ReferenceFrame(self.points[index], self.rotations[index])

    @property
    def frames(self) -> List[ReferenceFrame]:
        return [self.frame(i) for i in range(len(self))]


def seed_set_from_frames(frames: Sequence[ReferenceFrame]) -> SeedSet:
    """Seed set with one centre seed per frame (frame order = quad order)."""
    return SeedSet(
        points=np.array([f.origin for f in frames]).reshape(-1, 3),
        rotations=np.array([f.rotation for f in frames]).reshape(-1, 3, 3),
        quad_ids=np.arange(len(frames)),
        offset_ids=np.zeros(len(frames), dtype=np.int64),
    )


# ---- field-aligned quadrangulation -------------------------------------

def _project_tangent(vectors: np.ndarray, normals: np.ndarray) -> np.ndarray:
    return vectors - normals * np.einsum("ij,ij->i", vectors, normals)[:, None]


def _normalize_rows(vectors: np.ndarray, fallback: Optional[np.ndarray] = None) -> np.ndarray:
    norm = np.linalg.norm(vectors, axis=1, keepdims=True)
    out = vectors / np.where(norm > 1e-15, norm, 1.0)
    if fallback is not None:
        bad = norm[:, 0] <= 1e-15
        out[bad] = fallback[bad]
    return out


def _axis_fallback(normals: np.ndarray) -> np.ndarray:
    """World axis least aligned with the normal, projected into the tangent plane."""
    axis = np.argmin(np.abs(normals), axis=1)
    e = np.eye(3)[axis]
    return _normalize_rows(_project_tangent(e, normals))


def _rotate_between(vectors: np.ndarray, n_from: np.ndarray, n_to: np.ndarray) -> np.ndarray:
    """Minimal rotation taking each n_from onto n_to, applied to the vectors."""
    c = np.cross(n_from, n_to)
    cos = np.einsum("ij,ij->i", n_from, n_to)
    flipped = 1.0 + cos < 1e-9
    scale = 1.0 / np.where(flipped, 1.0, 1.0 + cos)
    cv = np.cross(c, vectors)
    rotated = vectors + cv + np.cross(c, cv) * scale[:, None]
    rotated[flipped] = vectors[flipped]
    return rotated


def _bfs_levels(adjacency: sp.csr_matrix, sources: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Breadth-first levels from the sources; each vertex records its lowest-index discoverer."""
    n = adjacency.shape[0]
    parent = -np.ones(n, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    frontier = np.unique(np.asarray(sources, dtype=np.int64))
    seen[frontier] = True
    levels = [frontier]
    while len(frontier):
        block = adjacency[frontier].tocoo()
        owner = frontier[block.row]
        child = block.col.astype(np.int64)
        fresh = ~seen[child]
        owner, child = owner[fresh], child[fresh]
        if not len(child):
            break
        order = np.lexsort((owner, child))
        child, owner = child[order], owner[order]
        frontier, first = np.unique(child, return_index=True)
        parent[frontier] = owner[first]
        seen[frontier] = True
        levels.append(frontier)
    return levels, parent


def _component_roots(adjacency: sp.csr_matrix) -> Tuple[np.ndarray, np.ndarray]:
    """Lowest vertex of every connected component, and the component labels."""
    _, label = connected_components(adjacency, directed=False)
    _, roots = np.unique(label, return_index=True)
    return roots, label


def _curvature_directions(mesh: Mesh, normals: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Principal curvature direction per vertex from edge normal curvatures.

    Returns the direction and a mask of vertices whose curvature is both
    anisotropic and large at the scale of one quad.
    """
    e = mesh.edges
    i = np.concatenate([e[:, 0], e[:, 1]])
    j = np.concatenate([e[:, 1], e[:, 0]])
    d = mesh.vertices[j] - mesh.vertices[i]
    length2 = np.einsum("ij,ij->i", d, d)
    kappa = 2.0 * np.einsum("ij,ij->i", normals[i], d) / np.where(length2 > 0, length2, 1.0)
    t = _normalize_rows(_project_tangent(d, normals[i]))
    tensor = np.zeros((mesh.n_vertices, 3, 3))
    np.add.at(tensor, i, kappa[:, None, None] * np.einsum("ij,ik->ijk", t, t))
    degree = np.bincount(i, minlength=mesh.n_vertices).astype(np.float64)
    tensor /= np.maximum(degree, 1.0)[:, None, None]
    P = np.eye(3)[None] - np.einsum("ij,ik->ijk", normals, normals)
    tensor = P @ tensor @ P
    eigval, eigvec = np.linalg.eigh(tensor)
    normal_slot = np.argmax(np.abs(np.einsum("nij,ni->nj", eigvec, normals)), axis=1)
    rows = np.arange(mesh.n_vertices)
    tangent_val = eigval.copy()
    tangent_val[rows, normal_slot] = -np.inf
    best = np.argmax(tangent_val, axis=1)
    direction = eigvec[rows, :, best]
    lam = np.sort(np.where(np.isinf(tangent_val), np.nan, eigval), axis=1)[:, :2]
    spread = np.abs(lam[:, 1] - lam[:, 0])
    scale = np.abs(lam).sum(axis=1)
    strong = (spread > CURVATURE_ANISOTROPY * scale) & (spread * h > 1.0)
    direction = _normalize_rows(_project_tangent(direction, normals), _axis_fallback(normals))
    return direction, strong


def _crease_directions(mesh: Mesh, normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Directions of sharp edges at the vertices lying inside a crease.

    A vertex is constrained when one or two of its edges have a dihedral
    angle above ``CREASE_ANGLE``; corners where more creases meet stay free.
    Returns the directions, the constrained mask and the mask of every
    vertex touching a sharp edge.
    """
    F = mesh.faces
    half = np.stack([F, np.roll(F, -1, axis=1)], axis=2).reshape(-1, 2)
    key = np.sort(half, axis=1)
    owner = np.repeat(np.arange(len(F)), 3)
    order = np.lexsort((owner, key[:, 1], key[:, 0]))
    key, owner = key[order], owner[order]
    pair = np.flatnonzero((key[1:] == key[:-1]).all(axis=1))
    fn = mesh.face_normals
    cos = np.einsum("ij,ij->i", fn[owner[pair]], fn[owner[pair + 1]])
    sharp = key[pair[cos < np.cos(np.radians(CREASE_ANGLE))]]
    n = mesh.n_vertices
    direction = np.zeros((n, 3))
    if not len(sharp):
        return direction, np.zeros(n, dtype=bool), np.zeros(n, dtype=bool)
    sharp = np.unique(sharp, axis=0)
    ends = np.concatenate([sharp[:, 0], sharp[:, 1]])
    along = mesh.vertices[sharp[:, 1]] - mesh.vertices[sharp[:, 0]]
    along = np.concatenate([along, along])
    vertex, first, count = np.unique(ends, return_index=True, return_counts=True)
    direction[vertex] = along[first]
    direction = _project_tangent(direction, normals)
    fixed = np.zeros(n, dtype=bool)
    fixed[vertex[count <= 2]] = True
    fixed &= np.linalg.norm(direction, axis=1) > 1e-12
    touched = np.zeros(n, dtype=bool)
    touched[vertex] = True
    return _normalize_rows(direction), fixed, touched


def _initial_orientation(mesh: Mesh, normals: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Seed directions at creases and strongly curved vertices, carried outward breadth-first."""
    V = mesh.vertices
    A = mesh.adjacency
    fallback = _axis_fallback(normals)
    o, strong = _curvature_directions(mesh, normals, h)
    crease, fixed, touched = _crease_directions(mesh, normals)
    o[fixed] = crease[fixed]
    source = fixed | (strong & ~touched)

    roots, label = _component_roots(A)
    bare = roots[np.bincount(label[source], minlength=len(roots)) == 0]
    for r in bare:
        nb = A.indices[A.indptr[r]:A.indptr[r + 1]]
        if len(nb):
            toward = _project_tangent((V[nb.min()] - V[r])[None], normals[r][None])
            o[r] = _normalize_rows(toward, fallback[r][None])[0]
        else:
            o[r] = fallback[r]

    levels, parent = _bfs_levels(A, np.concatenate([np.flatnonzero(source), bare]))
    for level in levels[1:]:
        q = parent[level]
        carried = _rotate_between(o[q], normals[q], normals[level])
        o[level] = _normalize_rows(_project_tangent(carried, normals[level]), fallback[level])
    return o, fixed


def _match_rotation(o_i: np.ndarray, o_j: np.ndarray, n_j: np.ndarray) -> np.ndarray:
    """Rotate each o_j by a multiple of 90 degrees about n_j to best match o_i."""
    t_j = np.cross(n_j, o_j)
    candidates = np.stack([o_j, t_j, -o_j, -t_j])
    dots = np.einsum("kij,ij->ki", candidates, o_i)
    k = np.argmax(dots, axis=0)
    return candidates[k, np.arange(len(o_i))]


def _smooth_orientation(o: np.ndarray, normals: np.ndarray, src: np.ndarray, dst: np.ndarray,
                        iterations: int, tol: float,
                        fixed: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
    residual = np.inf
    for _ in range(iterations):
        rep = _match_rotation(o[dst], o[src], normals[src])
        acc = o.copy()
        np.add.at(acc, dst, rep)
        new = _normalize_rows(_project_tangent(acc, normals), o)
        if fixed is not None:
            new[fixed] = o[fixed]
        matched = _match_rotation(o, new, normals)
        residual = float(np.mean(np.arccos(np.clip(np.einsum("ij,ij->i", matched, o), -1.0, 1.0))))
        o = new
        if residual < tol:
            break
    return o, residual


def _round_lattice(p: np.ndarray, o: np.ndarray, t: np.ndarray, target: np.ndarray, h: float) -> np.ndarray:
    d = target - p
    a = np.round(np.einsum("ij,ij->i", o, d) / h)
    b = np.round(np.einsum("ij,ij->i", t, d) / h)
    return p + h * (a[:, None] * o + b[:, None] * t)


def _onto_planes(points: np.ndarray, anchors: np.ndarray, normals: np.ndarray) -> np.ndarray:
    return points - normals * np.einsum("ij,ij->i", points - anchors, normals)[:, None]


def _initial_positions(V: np.ndarray, normals: np.ndarray, o: np.ndarray, adjacency: sp.csr_matrix,
                       h: float) -> np.ndarray:
    """Lattice point nearest each vertex, grown from one root lattice per component."""
    t = np.cross(normals, o)
    p = V.copy()
    roots, _ = _component_roots(adjacency)
    levels, parent = _bfs_levels(adjacency, roots)
    for level in levels[1:]:
        base = _onto_planes(p[parent[level]], V[level], normals[level])
        p[level] = _round_lattice(base, o[level], t[level], V[level], h)
    return p


def _smooth_positions(V: np.ndarray, normals: np.ndarray, o: np.ndarray, p: np.ndarray,
                      src: np.ndarray, dst: np.ndarray, h: float, iterations: int,
                      tol: float) -> Tuple[np.ndarray, float]:
    """
    Pull each lattice toward its neighbours' lattices.

    A neighbour's lattice point is carried into the vertex tangent plane and
    only its offset modulo the lattice spacing counts; lattices that already
    agree leave a zero shift.
    """
    t = np.cross(normals, o)
    degree = np.maximum(np.bincount(dst, minlength=len(V)), 1).astype(np.float64)
    residual = 0.0
    for _ in range(iterations):
        gap = _onto_planes(p[src], V[dst], normals[dst]) - p[dst]
        fa = np.einsum("ij,ij->i", o[dst], gap) / h
        fb = np.einsum("ij,ij->i", t[dst], gap) / h
        fa -= np.round(fa)
        fb -= np.round(fb)
        delta = np.zeros_like(p)
        np.add.at(delta, dst, fa[:, None] * o[dst] + fb[:, None] * t[dst])
        shift = 0.5 * h * delta / degree[:, None]
        residual = float(np.linalg.norm(shift, axis=1).mean() / h)
        if residual < tol:
            break
        p = _round_lattice(p + shift, o, t, V, h)
    return p, residual


# ---- quad extraction ---------------------------------------------------

_AXES = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
# axis k, then the diagonal between axis k and axis k + 1
_LATTICE_STEPS = np.vstack([_AXES, _AXES + np.roll(_AXES, -1, axis=0)])


def _union_pairs(n: int, a: np.ndarray, b: np.ndarray) -> Tuple[int, np.ndarray]:
    graph = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    return connected_components(graph, directed=False)


def _lattice_clusters(p: np.ndarray, normals: np.ndarray, edges: np.ndarray, h: float) -> np.ndarray:
    """Label vertices that snapped to the same lattice point."""
    i, j = edges[:, 0], edges[:, 1]
    close = (np.linalg.norm(p[i] - p[j], axis=1) < MERGE_RADIUS * h) & \
        (np.einsum("ij,ij->i", normals[i], normals[j]) > 0)
    n_clusters, label = _union_pairs(len(p), i[close], j[close])

    counts = np.bincount(label, minlength=n_clusters).astype(np.float64)
    centre = np.zeros((n_clusters, 3))
    np.add.at(centre, label, p)
    centre /= counts[:, None]
    nrm = np.zeros((n_clusters, 3))
    np.add.at(nrm, label, normals)
    found = KDTree(centre).query_radius(centre, r=MERGE_RADIUS * h)
    a = np.repeat(np.arange(n_clusters), [len(f) for f in found])
    b = np.concatenate(found).astype(np.int64)
    same_side = np.einsum("ij,ij->i", nrm[a], nrm[b]) > 0
    _, merged = _union_pairs(n_clusters, a[same_side], b[same_side])
    return merged[label]


def _lattice_neighbors(pos: np.ndarray, nrm: np.ndarray, o: np.ndarray, t: np.ndarray, h: float) -> np.ndarray:
    """
    Table of lattice neighbours, one column per step in ``_LATTICE_STEPS``.

    Offsets are flattened into each point's tangent plane keeping their
    length; -1 marks a step with no point within ``LINK_TOLERANCE``.
    """
    n = len(pos)
    table = -np.ones((n, len(_LATTICE_STEPS)), dtype=np.int64)
    found = KDTree(pos).query_radius(pos, r=1.8 * h)
    c = np.repeat(np.arange(n), [len(f) for f in found])
    d = np.concatenate(found).astype(np.int64)
    keep = (c != d) & (np.einsum("ij,ij->i", nrm[c], nrm[d]) > 0.5)
    c, d = c[keep], d[keep]
    w = pos[d] - pos[c]
    flat = _project_tangent(w, nrm[c])
    flat_len = np.linalg.norm(flat, axis=1)
    keep = flat_len > 1e-12
    c, d = c[keep], d[keep]
    flat = flat[keep] * (np.linalg.norm(w[keep], axis=1) / flat_len[keep])[:, None]
    uv = np.column_stack([np.einsum("ij,ij->i", o[c], flat), np.einsum("ij,ij->i", t[c], flat)]) / h
    for k, step in enumerate(_LATTICE_STEPS):
        err = np.linalg.norm(uv - step, axis=1)
        hit = err < LINK_TOLERANCE
        cc, dd, ee = c[hit], d[hit], err[hit]
        order = np.lexsort((dd, ee, cc))
        cc, dd = cc[order], dd[order]
        _, first = np.unique(cc, return_index=True)
        table[cc[first], k] = dd[first]
    return table


def _candidate_quads(table: np.ndarray) -> np.ndarray:
    """Cells (c, c + axis k, c + diagonal k, c + axis k+1) whose far sides are linked too."""
    n = len(table)
    owner = np.repeat(np.arange(n), 4)
    step = table[:, :4].reshape(-1)
    linked = step >= 0
    links = np.unique(np.sort(np.column_stack([owner[linked], step[linked]]), axis=1), axis=0)
    link_keys = links[:, 0] * n + links[:, 1]

    k = np.tile(np.arange(4), n)
    cand = np.column_stack([owner, table[owner, k], table[owner, 4 + k], table[owner, (k + 1) % 4]])
    cand = cand[(cand >= 0).all(axis=1)]
    cand = cand[(np.diff(np.sort(cand, axis=1), axis=1) > 0).all(axis=1)]

    def is_link(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.isin(np.minimum(a, b) * n + np.maximum(a, b), link_keys)

    cand = cand[is_link(cand[:, 1], cand[:, 2]) & is_link(cand[:, 3], cand[:, 2])]
    _, first = np.unique(np.sort(cand, axis=1), axis=0, return_index=True)
    return cand[np.sort(first)]


def _accept_quads(quads: np.ndarray, pos: np.ndarray, nrm: np.ndarray, h: float) -> np.ndarray:
    """Drop malformed cells, then keep the best ones that share no directed edge."""
    corners = pos[quads]
    newell = np.cross(corners, np.roll(corners, -1, axis=1)).sum(axis=1)
    side = np.linalg.norm(np.roll(corners, -1, axis=1) - corners, axis=2)
    deviation = _planarity_deviation(corners)
    ok = (np.einsum("ij,ij->i", newell, nrm[quads].mean(axis=1)) > 0) & \
        (np.linalg.norm(newell, axis=1) > 1e-15) & \
        (deviation < PLANARITY_FACTOR * side.mean(axis=1)) & \
        (side > 0.5 * h).all(axis=1) & (side < 1.6 * h).all(axis=1)
    quads, side, deviation = quads[ok], side[ok], deviation[ok]

    quality = np.abs(side - h).sum(axis=1) / h + deviation / h
    taken = set()
    accepted = []
    for q in np.lexsort((np.arange(len(quads)), quality)):
        half = [(int(quads[q, k]), int(quads[q, (k + 1) % 4])) for k in range(4)]
        if any(e in taken for e in half):
            continue
        taken.update(half)
        accepted.append(q)
    return quads[np.sort(np.asarray(accepted, dtype=np.int64))]


def _planarity_deviation(corners: np.ndarray) -> np.ndarray:
    centered = corners - corners.mean(axis=1, keepdims=True)
    _, _, vt = np.linalg.svd(centered)
    plane_normal = vt[:, 2, :]
    return np.abs(np.einsum("qkj,qj->qk", centered, plane_normal)).max(axis=1)


def validate_quad_mesh(qm: QuadMesh, target_length: Optional[float] = None) -> List[str]:
    """Return human-readable invariant violations (empty when valid)."""
    problems = []
    if qm.n_quads == 0:
        return ["quad mesh has no quads"]
    lengths = qm.edge_lengths
    deviation = _planarity_deviation(qm.corners)
    for q in np.flatnonzero(deviation >= PLANARITY_FACTOR * lengths.mean(axis=1)):
        problems.append(f"quad {q} is not planar (deviation {deviation[q]:.3g})")
    for q in np.flatnonzero(np.linalg.norm(qm.newell_normals, axis=1) <= 1e-15):
        problems.append(f"quad {q} is degenerate")
    for a, b in qm.non_manifold_edges():
        problems.append(f"edge ({a}, {b}) is shared by more than two quads")
    if target_length is not None:
        mean = qm.mean_edge_length()
        if abs(mean - target_length) > EDGE_LENGTH_TOLERANCE * target_length:
            problems.append(f"mean edge length {mean:.4g} is not within 30% of {target_length:.4g}")
    return problems


def quadrangulate(proxy: Mesh, target_quad_length: float, iterations: int = 100,
                  convergence_tol: float = 5e-2) -> QuadMesh:
    """
    Extract a coarse quad mesh aligned with a smoothed 4-RoSy field.

    Args:
        proxy: Smoothed manifold mesh (closed or bordered).
        target_quad_length: Requested quad edge length in model units.
        iterations: Cap on smoothing iterations for each field.
        convergence_tol: Largest accepted mean orientation change (radians)
            at the iteration cap.

    Returns:
        QuadMesh whose quads pass the planarity and manifold checks.
    """
    lo, hi = proxy.bbox()
    diagonal = float(np.linalg.norm(hi - lo))
    if not 0 < target_quad_length < diagonal / 4:
        raise QuadrangulationError(f"target quad length {target_quad_length:.4g} must lie in (0, {diagonal / 4:.4g})")
    bad = proxy.non_manifold_edges()
    if len(bad) > 0.01 * max(len(proxy.edges), 1):
        raise NonManifoldError("proxy is severely non-manifold", [tuple(map(int, e)) for e in bad])
    if len(bad):
        logger.warning("proxy has %d non-manifold edges", len(bad))

    h = float(target_quad_length)
    mesh = proxy
    while mesh.mean_edge_length() > 0.5 * h:
        mesh = midpoint_subdivide(mesh)
        logger.debug("refined proxy to %d vertices for lattice snapping", mesh.n_vertices)

    V = mesh.vertices
    normals = mesh.vertex_normals.copy()
    missing = np.linalg.norm(normals, axis=1) == 0
    normals[missing] = [0.0, 0.0, 1.0]
    e = mesh.edges
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])

    o, fixed = _initial_orientation(mesh, normals, h)
    o, residual = _smooth_orientation(o, normals, src, dst, iterations, tol=1e-7, fixed=fixed)
    if residual > convergence_tol:
        raise QuadrangulationError("orientation field did not converge", residual)
    logger.debug("orientation field residual %.3g (%d crease vertices)", residual, int(fixed.sum()))

    p = _initial_positions(V, normals, o, mesh.adjacency, h)
    p, pos_residual = _smooth_positions(V, normals, o, p, src, dst, h, iterations, tol=1e-6)
    logger.debug("position field residual %.3g", pos_residual)

    label = _lattice_clusters(p, normals, e, h)
    n_clusters = int(label.max()) + 1
    counts = np.bincount(label, minlength=n_clusters).astype(np.float64)
    pos = np.zeros((n_clusters, 3))
    np.add.at(pos, label, p)
    pos /= counts[:, None]
    nrm = np.zeros((n_clusters, 3))
    np.add.at(nrm, label, normals)
    nrm = _normalize_rows(nrm, np.tile([0.0, 0.0, 1.0], (n_clusters, 1)))
    # the member nearest the lattice point lends its direction
    spread = np.linalg.norm(p - pos[label], axis=1)
    order = np.lexsort((spread, label))
    rep = order[np.searchsorted(label[order], np.arange(n_clusters))]
    o_c = _normalize_rows(_project_tangent(o[rep], nrm), _axis_fallback(nrm))
    t_c = np.cross(nrm, o_c)
    pos = PointMeshIndex(mesh).query(pos)[1]

    table = _lattice_neighbors(pos, nrm, o_c, t_c, h)
    quads = _candidate_quads(table)
    if not len(quads):
        raise QuadrangulationError("no quads could be extracted from the position field", pos_residual)
    quads = _accept_quads(quads, pos, nrm, h)
    if not len(quads):
        raise QuadrangulationError("every extracted quad failed validation", pos_residual)

    # canonical order: lowest vertex first, quads sorted lexicographically
    roll = np.argmin(quads, axis=1)
    quads = np.array([np.roll(q, -r) for q, r in zip(quads, roll)])
    quads = quads[np.lexsort(quads.T[::-1])]
    used = np.unique(quads)
    remap = -np.ones(n_clusters, dtype=np.int64)
    remap[used] = np.arange(len(used))
    qm = QuadMesh(pos[used], remap[quads])

    bad_edges = qm.non_manifold_edges()
    if len(bad_edges):
        raise NonManifoldError("extracted quad mesh is not edge-manifold", [tuple(map(int, x)) for x in bad_edges])
    mean = qm.mean_edge_length()
    if abs(mean - h) > EDGE_LENGTH_TOLERANCE * h:
        logger.warning("mean quad edge %.4g deviates more than 30%% from target %.4g", mean, h)
    expected = proxy.surface_area / (h * h)
    logger.info("quadrangulated: %d quads (area estimate %.0f), mean edge %.4g", qm.n_quads, expected, mean)
    return qm


# ---- quad mesh files ---------------------------------------------------

def import_quad_mesh(path: PathLike) -> QuadMesh:
    """Read an OBJ file made only of quad faces and validate it."""
    path = Path(path)
    if not path.exists():
        raise MeshFormatError("file not found", str(path))
    vertices: List[List[float]] = []
    quads: List[List[int]] = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if parts[0] == "v":
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError("bad vertex coordinates", str(path), lineno) from None
            elif parts[0] == "f":
                try:
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                except ValueError:
                    raise MeshFormatError("bad face index", str(path), lineno) from None
                if len(idx) != 4:
                    raise MeshFormatError(f"face {len(quads)} has {len(idx)} vertices; only quads are accepted",
                                          str(path), lineno)
                if 0 in idx:
                    raise MeshFormatError("face index 0 is out of range (OBJ is 1-based)", str(path), lineno)
                quads.append([k - 1 if k > 0 else len(vertices) + k for k in idx])
    try:
        qm = QuadMesh(np.asarray(vertices).reshape(-1, 3), np.asarray(quads).reshape(-1, 4))
    except GeometryError as e:
        raise MeshFormatError(str(e), str(path)) from None
    bad = qm.non_manifold_edges()
    if len(bad):
        raise NonManifoldError("imported quad mesh has non-manifold edges", [tuple(map(int, x)) for x in bad])
    problems = validate_quad_mesh(qm)
    if problems:
        raise GeometryError(f"{path}: " + "; ".join(problems[:5]))
    return qm


def export_quad_mesh(qm: QuadMesh, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        np.savetxt(fh, qm.vertices, fmt="v %.17g %.17g %.17g")
        np.savetxt(fh, qm.quads + 1, fmt="f %d %d %d %d")


def export_frames(frames: Sequence[ReferenceFrame], path: PathLike) -> None:
    """Write ``quad_id ox oy oz r00 .. r22`` per frame."""
    table = np.array([np.concatenate([[q], f.origin, f.rotation.reshape(-1)]) for q, f in enumerate(frames)])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table.reshape(-1, 13), fmt=["%d"] + ["%.17g"] * 12)


# ---- frames and seeds --------------------------------------------------

def quad_frames(qm: QuadMesh, root_quad: Optional[int] = None) -> List[ReferenceFrame]:
    """
    Per-quad reference frames with 4-fold ambiguity resolved by BFS.

    Z is the Newell normal, X the tangent direction from edge 3 towards
    edge 1. Starting from the root of each connected component (the given
    ``root_quad`` for its own component, else the lowest quad id), every
    newly reached quad picks the axis among X, Y, -X, -Y closest to its
    parent's X.
    """
    if qm.n_quads == 0:
        return []
    c = qm.corners
    normals = qm.newell_normals
    length = np.linalg.norm(normals, axis=1)
    degenerate = np.flatnonzero(length <= 1e-15)
    if len(degenerate):
        raise GeometryError(f"degenerate quad {int(degenerate[0])} has no normal")
    z = normals / length[:, None]
    mid1 = 0.5 * (c[:, 1] + c[:, 2])
    mid3 = 0.5 * (c[:, 3] + c[:, 0])
    x = _normalize_rows(_project_tangent(mid1 - mid3, z))
    y = np.cross(z, x)

    adj = qm.adjacency
    visited = np.zeros(qm.n_quads, dtype=bool)
    roots = list(range(qm.n_quads))
    if root_quad is not None:
        if not 0 <= root_quad < qm.n_quads:
            raise ValueError(f"root quad {root_quad} out of range")
        roots.insert(0, int(root_quad))
    for root in roots:
        if visited[root]:
            continue
        visited[root] = True
        queue = deque([root])
        while queue:
            q = queue.popleft()
            for nb in adj[q]:
                if nb < 0 or visited[nb]:
                    continue
                options = [x[nb], y[nb], -x[nb], -y[nb]]
                k = int(np.argmax([np.dot(opt, x[q]) for opt in options]))
                x[nb] = options[k]
                y[nb] = np.cross(z[nb], x[nb])
                visited[nb] = True
                queue.append(int(nb))
    centroids = qm.centroids
    return [ReferenceFrame(centroids[q], np.vstack([x[q], y[q], z[q]])) for q in range(qm.n_quads)]


def seed_points_with_offsets(qm: QuadMesh, frames: Sequence[ReferenceFrame], overlap_level: int,
                             surface: Optional[Mesh] = None) -> SeedSet:
    """
    Centre seed plus ``4 * overlap_level`` offset seeds per quad.

    Ring j displaces the centre by ``j / (k + 1) * L / 2`` along +X, +Y, -X
    and -Y of the quad frame, L being the quad's mean edge length. Offset
    seeds are projected to the closest point of ``surface`` when given and
    reuse the quad's rotation.
    """
    if overlap_level < 0:
        raise ValueError("overlap level must be >= 0")
    if len(frames) != qm.n_quads:
        raise ValueError("need exactly one frame per quad")
    k = overlap_level
    side = qm.edge_lengths.mean(axis=1)
    points, rotations, quad_ids, offset_ids = [], [], [], []
    for q, frame in enumerate(frames):
        X, Y = frame.rotation[0], frame.rotation[1]
        points.append(frame.origin)
        offset_ids.append(0)
        for j in range(1, k + 1):
            step = (j / (k + 1)) * side[q] / 2.0
            for slot, direction in enumerate((X, Y, -X, -Y)):
                points.append(frame.origin + step * direction)
                offset_ids.append(4 * (j - 1) + slot + 1)
        rotations.extend([frame.rotation] * (4 * k + 1))
        quad_ids.extend([q] * (4 * k + 1))
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    offsets = np.asarray(offset_ids, dtype=np.int64)
    if surface is not None and k > 0:
        moved = offsets > 0
        _, closest, _ = PointMeshIndex(surface).query(P[moved])
        P[moved] = closest
    return SeedSet(P, np.asarray(rotations).reshape(-1, 3, 3), np.asarray(quad_ids, dtype=np.int64), offsets)


def subdivide_quad_mesh(qm: QuadMesh, level: int) -> Mesh:
    """
    Bilinear 4^level split of every quad, each sub-quad cut into two triangles.

    Vertices on shared quad edges are created once.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    n = 2 ** level
    ids: Dict[tuple, int] = {}
    positions: List[np.ndarray] = []

    def vertex_key(quad: int, corners: np.ndarray, i: int, j: int) -> tuple:
        v0, v1, v2, v3 = (int(c) for c in corners)
        if (i, j) == (0, 0):
            return ("v", v0)
        if (i, j) == (n, 0):
            return ("v", v1)
        if (i, j) == (n, n):
            return ("v", v2)
        if (i, j) == (0, n):
            return ("v", v3)
        if j == 0:
            a, b, s = v0, v1, i
        elif i == n:
            a, b, s = v1, v2, j
        elif j == n:
            a, b, s = v3, v2, i
        elif i == 0:
            a, b, s = v0, v3, j
        else:
            return ("q", quad, i, j)
        return ("e", a, b, s) if a < b else ("e", b, a, n - s)

    faces = []
    for q, corners in enumerate(qm.quads):
        c = qm.vertices[corners]
        grid = np.empty((n + 1, n + 1), dtype=np.int64)
        for i in range(n + 1):
            u = i / n
            for j in range(n + 1):
                w = j / n
                key = vertex_key(q, corners, i, j)
                idx = ids.get(key)
                if idx is None:
                    idx = len(positions)
                    ids[key] = idx
                    positions.append((1 - u) * (1 - w) * c[0] + u * (1 - w) * c[1] + u * w * c[2] + (1 - u) * w * c[3])
                grid[i, j] = idx
        for i in range(n):
            for j in range(n):
                faces.append((grid[i, j], grid[i + 1, j], grid[i + 1, j + 1]))
                faces.append((grid[i, j], grid[i + 1, j + 1], grid[i, j + 1]))
    return Mesh(np.asarray(positions).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))
