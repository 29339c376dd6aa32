"""
Boundary loop detection and minimum-weight hole triangulation.

Loops follow the half-edges of the faces bordering the hole. Each loop is
closed by a minimum-weight triangulation (weight = worst dihedral angle,
then area), refined by longest-edge splits and Delaunay flips, and relaxed
by 1-ring averaging of the inserted vertices.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import NonManifoldError
from mesh_core import Mesh

logger = logging.getLogger(__name__)

RELAX_ITERATIONS = 50
SPLIT_FACTOR = math.sqrt(2.0)


@dataclass(frozen=True)
class HoleSpec:
    """Boundary loops, each an ordered vertex cycle starting at its lowest id."""

    loops: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for loop in self.loops:
            if len(loop) < 3 or len(np.unique(loop)) != len(loop):
                raise ValueError("boundary loops must be simple cycles of at least 3 vertices")

    def __len__(self) -> int:
        return len(self.loops)

    def vertices(self) -> np.ndarray:
        if not self.loops:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.loops))


def _loop_perimeter(V: np.ndarray, loop: np.ndarray) -> float:
    return float(np.linalg.norm(V[np.roll(loop, -1)] - V[loop], axis=1).sum())


def loop_diameter(V: np.ndarray, loop: Sequence[int]) -> float:
    """Largest distance between two loop vertices."""
    P = V[np.asarray(loop)]
    return float(np.max(np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)))


def detect_holes(mesh: Mesh, exclude_longest: bool = False) -> HoleSpec:
    """
    Walk boundary half-edges into closed loops.

    Args:
        mesh: Triangle mesh.
        exclude_longest: Drop the longest loop of every connected component,
            i.e. the outer border of an open sheet.

    Returns:
        HoleSpec with loops sorted by their first (lowest) vertex id.
    """
    F = mesh.faces
    half = np.stack([F, np.roll(F, -1, axis=1)], axis=2).reshape(-1, 2)
    _, inverse, counts = np.unique(np.sort(half, axis=1), axis=0, return_inverse=True, return_counts=True)
    boundary = half[counts[inverse.reshape(-1)] == 1]
    if not len(boundary):
        return HoleSpec([])

    successor: Dict[int, int] = {}
    clashes = []
    for u, v in boundary:
        if int(u) in successor:
            clashes.append((int(u), int(v)))
        successor[int(u)] = int(v)
    if clashes:
        raise NonManifoldError("boundary passes through a vertex more than once", clashes)

    loops = []
    remaining = set(successor)
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        v = successor[start]
        while v != start:
            if v not in remaining:
                raise NonManifoldError("boundary walk did not close", [(loop[-1], v)])
            loop.append(v)
            remaining.discard(v)
            v = successor[v]
        loops.append(np.asarray(loop, dtype=np.int64))

    if exclude_longest:
        _, label = mesh.connected_components()
        longest: Dict[int, Tuple[float, int]] = {}
        for i, loop in enumerate(loops):
            key = int(label[loop[0]])
            perimeter = _loop_perimeter(mesh.vertices, loop)
            if key not in longest or perimeter > longest[key][0]:
                longest[key] = (perimeter, i)
        drop = {i for _, i in longest.values()}
        loops = [loop for i, loop in enumerate(loops) if i not in drop]
    loops.sort(key=lambda loop: int(loop[0]))
    return HoleSpec(loops)


# ---- triangulation ----------------------------------------------------

def _normal(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    n = np.cross(b - a, c - a)
    length = np.linalg.norm(n)
    return n / length if length > 0 else n


def _angle(n1: np.ndarray, n2: np.ndarray) -> float:
    return float(np.arccos(np.clip(np.dot(n1, n2), -1.0, 1.0)))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(points: np.ndarray) -> bool:
    """Whether the loop, projected on its best-fit plane, has no crossing edges."""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    flat = centered @ vt[:2].T
    n = len(flat)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(flat[i], flat[(i + 1) % n], flat[j], flat[(j + 1) % n]):
                return False
    return True


def _min_weight_triangulation(V: np.ndarray, loop: np.ndarray,
                              outside: Dict[Tuple[int, int], np.ndarray],
                              existing: Optional[set] = None) -> List[Tuple[int, int, int]]:
    n = len(loop)
    existing = existing or set()

    def taken(a: int, b: int) -> bool:
        if b - a < 2 or (a, b) == (0, n - 1):
            return False
        u, v = int(loop[a]), int(loop[b])
        return (min(u, v), max(u, v)) in existing
    P = V[loop]
    weight: Dict[Tuple[int, int], Tuple[float, float]] = {}
    split: Dict[Tuple[int, int], int] = {}
    for i in range(n - 1):
        weight[(i, i + 1)] = (0.0, 0.0)

    def neighbour_normal(i: int, j: int) -> Optional[np.ndarray]:
        if j == i + 1:
            return outside.get((int(loop[i]), int(loop[j])))
        if (i, j) == (0, n - 1):
            return outside.get((int(loop[n - 1]), int(loop[0])))
        m = split[(i, j)]
        return _normal(P[j], P[m], P[i])

    for span in range(2, n):
        for i in range(n - span):
            k = i + span
            best = None
            for m in range(i + 1, k):
                tri = _normal(P[k], P[m], P[i])
                area = 0.5 * float(np.linalg.norm(np.cross(P[m] - P[k], P[i] - P[k])))
                worst = 0.0
                # chords already present outside the hole would duplicate an edge
                if taken(i, m) or taken(m, k) or taken(i, k):
                    worst = 2 * math.pi
                edges = [(i, m), (m, k)] + ([(0, n - 1)] if (i, k) == (0, n - 1) else [])
                for a, b in edges:
                    other = neighbour_normal(a, b)
                    if other is not None:
                        worst = max(worst, _angle(tri, other))
                wl, wr = weight[(i, m)], weight[(m, k)]
                cand = (max(worst, wl[0], wr[0]), wl[1] + wr[1] + area)
                if best is None or cand < best:
                    best = cand
                    split[(i, k)] = m
            weight[(i, k)] = best

    triangles = []
    stack = [(0, n - 1)]
    while stack:
        i, k = stack.pop()
        if k - i < 2:
            continue
        m = split[(i, k)]
        triangles.append((int(loop[k]), int(loop[m]), int(loop[i])))
        stack.extend([(i, m), (m, k)])
    return triangles


def _edge_faces(faces: List[List[int]]) -> Dict[Tuple[int, int], List[int]]:
    table: Dict[Tuple[int, int], List[int]] = {}
    for f, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            table.setdefault((min(u, v), max(u, v)), []).append(f)
    return table


def _split_long_edges(positions: List[np.ndarray], faces: List[List[int]], locked: set, limit: float) -> None:
    for _ in range(10000):
        table = _edge_faces(faces)
        longest, edge = limit, None
        for key, owners in table.items():
            if key in locked or len(owners) != 2:
                continue
            length = float(np.linalg.norm(positions[key[0]] - positions[key[1]]))
            if length > longest:
                longest, edge = length, key
        if edge is None:
            return
        a, b = edge
        mid = len(positions)
        positions.append(0.5 * (positions[a] + positions[b]))
        for f in table[edge]:
            tri = faces[f]
            k = tri.index(a)
            rolled = tri[k:] + tri[:k]
            if rolled[1] == b:
                c = rolled[2]
                faces[f] = [a, mid, c]
                faces.append([mid, b, c])
            else:
                c = rolled[1]
                faces[f] = [a, c, mid]
                faces.append([mid, c, b])


def _corner_angle(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    u, v = a - p, b - p
    denom = np.linalg.norm(u) * np.linalg.norm(v)
    return float(np.arccos(np.clip(np.dot(u, v) / denom, -1.0, 1.0))) if denom > 0 else 0.0


def _flip_delaunay(positions: List[np.ndarray], faces: List[List[int]], locked: set, passes: int = 3) -> None:
    for _ in range(passes):
        flipped = False
        table = _edge_faces(faces)
        for key, owners in table.items():
            if key in locked or len(owners) != 2:
                continue
            f1, f2 = owners
            a, b = key
            t1, t2 = faces[f1], faces[f2]
            if a not in t1 or b not in t1 or a not in t2 or b not in t2:
                continue
            k1 = t1.index(a)
            r1 = t1[k1:] + t1[:k1]
            if r1[1] != b:
                a, b = b, a
                k1 = t1.index(a)
                r1 = t1[k1:] + t1[:k1]
            c = r1[2]
            d = next(x for x in t2 if x not in (a, b))
            if (min(c, d), max(c, d)) in table:
                continue
            alpha = _corner_angle(positions[c], positions[a], positions[b])
            beta = _corner_angle(positions[d], positions[a], positions[b])
            if alpha + beta <= math.pi + 1e-12:
                continue
            before = _normal(positions[a], positions[b], positions[c]) + _normal(positions[b], positions[a], positions[d])
            n1 = _normal(positions[a], positions[d], positions[c])
            n2 = _normal(positions[d], positions[b], positions[c])
            if np.dot(n1, before) <= 0 or np.dot(n2, before) <= 0:
                continue
            faces[f1] = [a, d, c]
            faces[f2] = [d, b, c]
            table = _edge_faces(faces)
            flipped = True
        if not flipped:
            return


def _relax(positions: List[np.ndarray], faces: List[List[int]], movable: List[int]) -> None:
    if not movable:
        return
    neighbours: Dict[int, set] = {v: set() for v in movable}
    for a, b, c in faces:
        for u, v in ((a, b), (b, c), (c, a)):
            if u in neighbours:
                neighbours[u].add(v)
            if v in neighbours:
                neighbours[v].add(u)
    scale = max(float(np.linalg.norm(positions[movable[0]])), 1.0)
    for _ in range(RELAX_ITERATIONS):
        moved = 0.0
        updated = {v: np.mean([positions[u] for u in sorted(neighbours[v])], axis=0) for v in movable}
        for v, p in updated.items():
            moved = max(moved, float(np.linalg.norm(p - positions[v])))
            positions[v] = p
        if moved <= 1e-12 * scale:
            break


def triangulate_hole(mesh: Mesh, loop: Sequence[int], refine: bool = True) -> Mesh:
    """
    Close one boundary loop.

    New vertices are appended after the existing ones and new faces after
    the existing faces; inserted vertices are flagged as not observed.
    """
    loop = np.asarray(loop, dtype=np.int64)
    if len(loop) < 3:
        raise ValueError("a hole loop needs at least 3 vertices")
    V = mesh.vertices
    outside: Dict[Tuple[int, int], np.ndarray] = {}
    loop_edges = set(zip(loop.tolist(), np.roll(loop, -1).tolist()))
    for a, b, c in mesh.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            if (int(u), int(v)) in loop_edges:
                outside[(int(u), int(v))] = _normal(V[a], V[b], V[c])

    on_loop = np.zeros(mesh.n_vertices, dtype=bool)
    on_loop[loop] = True
    E = mesh.edges
    existing = {(int(u), int(v)) for u, v in E[on_loop[E].all(axis=1)]}

    positions: List[np.ndarray] = [p for p in V]
    if _is_simple(V[loop]):
        faces = [list(t) for t in _min_weight_triangulation(V, loop, outside, existing)]
    else:
        logger.warning("hole loop starting at vertex %d self-intersects; using a fan", int(loop[0]))
        centre = len(positions)
        positions.append(V[loop].mean(axis=0))
        faces = [[int(loop[(i + 1) % len(loop)]), int(loop[i]), centre] for i in range(len(loop))]

    if refine:
        locked = {(min(u, v), max(u, v)) for u, v in loop_edges}
        mean_edge = _loop_perimeter(V, loop) / len(loop)
        _split_long_edges(positions, faces, locked, SPLIT_FACTOR * mean_edge * (1 + 1e-9))
        _flip_delaunay(positions, faces, locked)
        _relax(positions, faces, list(range(mesh.n_vertices, len(positions))))

    new_vertices = np.asarray(positions[mesh.n_vertices:]).reshape(-1, 3)
    valid = np.ones(mesh.n_vertices, dtype=bool) if mesh.valid is None else mesh.valid.copy()
    return Mesh(
        np.vstack([V, new_vertices]),
        np.vstack([mesh.faces, np.asarray(faces, dtype=np.int64).reshape(-1, 3)]),
        np.concatenate([valid, np.zeros(len(new_vertices), dtype=bool)]),
    )


def triangulate_holes(mesh: Mesh, holes: HoleSpec, refine: bool = True) -> Mesh:
    """Close every loop in turn; vertex ids of earlier loops stay valid."""
    for loop in holes.loops:
        mesh = triangulate_hole(mesh, loop, refine=refine)
    return mesh
