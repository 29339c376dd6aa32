"""
Triangle mesh representation and basic processing.

This module provides the immutable ``Mesh`` and ``PointCloud`` types, OBJ and
ascii PLY input/output, unit-cube normalization, resampling (midpoint
subdivision or quadric edge collapse) and uniform Laplacian smoothing.
"""

import heapq
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from sklearn.neighbors import KDTree

from errors import GeometryError, MeshFormatError, NonManifoldError
from settings import progress

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh with an optional per-vertex validity flag."""

    vertices: np.ndarray
    faces: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        V = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        F = np.array(self.faces, dtype=np.int64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(V)):
            raise GeometryError("mesh has non-finite vertex coordinates")
        if len(F):
            if F.min() < 0 or F.max() >= len(V):
                bad = int(np.flatnonzero((F < 0).any(1) | (F >= len(V)).any(1))[0])
                raise GeometryError(f"face {bad} references a vertex outside [0, {len(V)})")
            degenerate = (F[:, 0] == F[:, 1]) | (F[:, 1] == F[:, 2]) | (F[:, 0] == F[:, 2])
            if degenerate.any():
                raise GeometryError(f"face {int(np.flatnonzero(degenerate)[0])} repeats a vertex index")
        object.__setattr__(self, "vertices", _frozen(V))
        object.__setattr__(self, "faces", _frozen(F))
        if self.valid is not None:
            valid = np.array(self.valid, dtype=bool, copy=True).reshape(-1)
            if len(valid) != len(V):
                raise GeometryError("validity flags must match the vertex count")
            object.__setattr__(self, "valid", _frozen(valid))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices, self.faces, self.valid)

    def with_valid(self, valid: Optional[np.ndarray]) -> "Mesh":
        return Mesh(self.vertices, self.faces, valid)

    # ---- connectivity -------------------------------------------------

    @cached_property
    def _edge_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        half = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        key = np.sort(half, axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        return self._edge_table[0]

    def boundary_edges(self) -> np.ndarray:
        edges, _, counts = self._edge_table
        return edges[counts == 1]

    def non_manifold_edges(self) -> np.ndarray:
        edges, _, counts = self._edge_table
        return edges[counts > 2]

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_edges().reshape(-1)] = True
        return _frozen(mask)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric binary vertex adjacency matrix."""
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def vertex_neighbors(self, index: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[index]:A.indptr[index + 1]]

    def connected_components(self) -> Tuple[int, np.ndarray]:
        """Vertex component labels; unreferenced vertices form their own component."""
        return connected_components(self.adjacency, directed=False)

    # ---- geometry -----------------------------------------------------

    @cached_property
    def _face_cross(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    @property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross, axis=1)

    @property
    def face_normals(self) -> np.ndarray:
        c = self._face_cross
        norm = np.linalg.norm(c, axis=1, keepdims=True)
        return c / np.where(norm > 0, norm, 1.0)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals (zero for isolated vertices)."""
        acc = np.zeros((self.n_vertices, 3))
        for k in range(3):
            np.add.at(acc, self.faces[:, k], self._face_cross)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return _frozen(acc / np.where(norm > 0, norm, 1.0))

    @property
    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    def bbox(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diameter(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    source_face: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(P)):
            raise GeometryError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", _frozen(P))
        if self.source_face is not None:
            object.__setattr__(self, "source_face", _frozen(np.array(self.source_face, dtype=np.int64)))

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def tree(self) -> KDTree:
        """Spatial index for radius queries (built lazily, once)."""
        return KDTree(self.points if len(self.points) else np.zeros((1, 3)))

    def radius_query(self, center: np.ndarray, radius: float) -> np.ndarray:
        if not len(self.points):
            return np.zeros(0, dtype=np.int64)
        idx = self.tree.query_radius(np.asarray(center, dtype=np.float64).reshape(1, 3), r=radius)[0]
        return np.sort(idx)


# ---- input / output ---------------------------------------------------

def _detect_format(path: Path, fmt: Optional[str]) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("obj", "ply"):
        raise MeshFormatError(f"unsupported mesh format '{fmt}' (expected obj or ply)", str(path))
    return fmt


def _fan(polygon: List[int]) -> List[List[int]]:
    return [[polygon[0], polygon[i], polygon[i + 1]] for i in range(1, len(polygon) - 1)]


def _build_checked(path: Path, vertices: List[List[float]], faces: List[List[int]],
                   face_lines: List[int], valid: Optional[List[bool]]) -> Mesh:
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    for face, line in zip(faces, face_lines):
        for idx in face:
            if idx < 0 or idx >= len(V):
                raise MeshFormatError(f"face index out of range ({len(V)} vertices)", str(path), line)
        if len(set(face)) != 3:
            raise MeshFormatError("degenerate face repeats a vertex", str(path), line)
    try:
        return Mesh(V, np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                    None if valid is None else np.asarray(valid, dtype=bool))
    except GeometryError as e:
        raise MeshFormatError(str(e), str(path)) from None


def _load_obj(path: Path) -> Mesh:
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    face_lines: List[int] = []
    fanned = 0
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError("bad vertex coordinates", str(path), lineno) from None
                if len(vertices[-1]) != 3:
                    raise MeshFormatError("vertex needs three coordinates", str(path), lineno)
            elif tag == "f":
                try:
                    raw = [int(tok.split("/")[0]) for tok in parts[1:]]
                except ValueError:
                    raise MeshFormatError("bad face index", str(path), lineno) from None
                if len(raw) < 3:
                    raise MeshFormatError("face needs at least three vertices", str(path), lineno)
                polygon = []
                for idx in raw:
                    if idx == 0:
                        raise MeshFormatError("face index 0 is out of range (OBJ is 1-based)", str(path), lineno)
                    polygon.append(idx - 1 if idx > 0 else len(vertices) + idx)
                if len(polygon) > 3:
                    fanned += 1
                for tri in _fan(polygon):
                    faces.append(tri)
                    face_lines.append(lineno)
            elif tag in ("l", "p", "curv", "curv2", "surf", "cstype", "deg", "bmat"):
                raise MeshFormatError(f"unsupported element type '{tag}'", str(path), lineno)
            # vt, vn, o, g, s, usemtl, mtllib are ignored
    if fanned:
        logger.warning("%s: %d polygon faces fan-triangulated", path, fanned)
    return _build_checked(path, vertices, faces, face_lines, None)


def _load_ply(path: Path) -> Mesh:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError("missing 'ply' magic", str(path), 1)
    elements: List[Tuple[str, int, List[Tuple[str, ...]]]] = []
    lineno = 1
    header_end = None
    for lineno in range(2, len(lines) + 1):
        parts = lines[lineno - 1].split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise MeshFormatError(f"only ascii PLY is supported, got '{' '.join(parts[1:])}'", str(path), lineno)
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError("property before any element", str(path), lineno)
            elements[-1][2].append(tuple(parts[1:]))
        elif parts[0] == "end_header":
            header_end = lineno
            break
        else:
            raise MeshFormatError(f"unexpected header line '{parts[0]}'", str(path), lineno)
    if header_end is None:
        raise MeshFormatError("missing end_header", str(path), lineno)

    vertices: List[List[float]] = []
    valid: Optional[List[bool]] = None
    faces: List[List[int]] = []
    face_lines: List[int] = []
    fanned = 0
    cursor = header_end
    for name, count, props in elements:
        if name not in ("vertex", "face") and count > 0:
            raise MeshFormatError(f"unsupported element type '{name}'", str(path), header_end)
        names = [p[-1] for p in props]
        if name == "vertex":
            if not {"x", "y", "z"} <= set(names):
                raise MeshFormatError("vertex element needs x, y, z", str(path), header_end)
            if "valid" in names:
                valid = []
        for _ in range(count):
            cursor += 1
            if cursor > len(lines):
                raise MeshFormatError(f"file ends inside element '{name}'", str(path), cursor)
            tokens = lines[cursor - 1].split()
            values: Dict[str, object] = {}
            pos = 0
            try:
                for prop in props:
                    if prop[0] == "list":
                        n = int(tokens[pos])
                        values[prop[-1]] = [int(t) for t in tokens[pos + 1:pos + 1 + n]]
                        pos += 1 + n
                    else:
                        values[prop[-1]] = float(tokens[pos])
                        pos += 1
            except (ValueError, IndexError):
                raise MeshFormatError(f"malformed '{name}' record", str(path), cursor) from None
            if name == "vertex":
                vertices.append([values["x"], values["y"], values["z"]])
                if valid is not None:
                    valid.append(bool(values["valid"]))
            elif name == "face":
                polygon = values.get("vertex_indices", values.get("vertex_index"))
                if polygon is None or len(polygon) < 3:
                    raise MeshFormatError("face needs a vertex index list of length >= 3", str(path), cursor)
                if len(polygon) > 3:
                    fanned += 1
                for tri in _fan(polygon):
                    faces.append(tri)
                    face_lines.append(cursor)
    if fanned:
        logger.warning("%s: %d polygon faces fan-triangulated", path, fanned)
    return _build_checked(path, vertices, faces, face_lines, valid)


def load_mesh(path: PathLike, fmt: Optional[str] = None) -> Mesh:
    """
    Load an OBJ (v/f only) or ascii PLY triangle mesh.

    Args:
        path: Mesh file path.
        fmt: ``"obj"`` or ``"ply"``; inferred from the suffix when omitted.

    Returns:
        Mesh with unreferenced vertices retained. PLY files may carry a
        per-vertex ``valid`` property which becomes the validity flags.
    """
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if not path.exists():
        raise MeshFormatError("file not found", str(path))
    mesh = _load_obj(path) if fmt == "obj" else _load_ply(path)
    logger.debug("loaded %s: %d vertices, %d faces", path, mesh.n_vertices, mesh.n_faces)
    return mesh


def save_mesh(mesh: Mesh, path: PathLike, fmt: Optional[str] = None) -> None:
    path = Path(path)
    fmt = _detect_format(path, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        if fmt == "obj":
            if mesh.valid is not None:
                logger.warning("%s: OBJ cannot store validity flags; use PLY to keep them", path)
            np.savetxt(fh, mesh.vertices, fmt="v %.17g %.17g %.17g")
            np.savetxt(fh, mesh.faces + 1, fmt="f %d %d %d")
        else:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {mesh.n_vertices}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            if mesh.valid is not None:
                fh.write("property uchar valid\n")
            fh.write(f"element face {mesh.n_faces}\n")
            fh.write("property list uchar int vertex_indices\nend_header\n")
            if mesh.valid is not None:
                table = np.column_stack([mesh.vertices, mesh.valid.astype(np.float64)])
                np.savetxt(fh, table, fmt="%.17g %.17g %.17g %d")
            else:
                np.savetxt(fh, mesh.vertices, fmt="%.17g %.17g %.17g")
            np.savetxt(fh, mesh.faces, fmt="3 %d %d %d")


# ---- normalization ----------------------------------------------------

@dataclass(frozen=True)
class NormalizationRecord:
    """Uniform map ``p' = (p - offset) * scale`` into the unit cube."""

    scale: float
    offset: Tuple[float, float, float]

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - np.asarray(self.offset)) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) / self.scale + np.asarray(self.offset)

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and all(o == 0.0 for o in self.offset)

    def save(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps({"scale": self.scale, "offset": list(self.offset)}, indent=2))

    @classmethod
    def load(cls, path: PathLike) -> "NormalizationRecord":
        try:
            data = json.loads(Path(path).read_text())
            return cls(scale=float(data["scale"]), offset=tuple(float(x) for x in data["offset"]))
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise MeshFormatError(f"bad normalization record: {e}", str(path)) from None


def normalize_unit_cube(mesh: Mesh) -> Tuple[Mesh, NormalizationRecord]:
    """
    Scale and translate a mesh uniformly so its bounding box fits in [0, 1]^3.

    Examples:
        >>> cube = Mesh([[-1, -1, -1], [1, 1, 1], [1, -1, 1]], [[0, 1, 2]])
        >>> out, record = normalize_unit_cube(cube)
        >>> record.scale
        0.5
    """
    if mesh.n_vertices == 0:
        raise GeometryError("cannot normalize an empty mesh")
    lo, hi = mesh.bbox()
    extent = float((hi - lo).max())
    if extent <= 0:
        raise GeometryError("degenerate bounding box (zero extent)")
    record = NormalizationRecord(scale=1.0 / extent, offset=tuple(float(x) for x in lo))
    return mesh.with_vertices(record.apply(mesh.vertices)), record


def invert_normalization(mesh: Mesh, record: NormalizationRecord) -> Mesh:
    return mesh.with_vertices(record.invert(mesh.vertices))


# ---- resampling -------------------------------------------------------

def midpoint_subdivide(mesh: Mesh) -> Mesh:
    """One 1-to-4 midpoint subdivision pass (new vertices appended after old ones)."""
    edges, inverse, _ = mesh._edge_table
    n = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    m = (inverse + n).reshape(-1, 3)  # midpoint ids of edges (0,1), (1,2), (2,0)
    a, b, c = mesh.faces[:, 0], mesh.faces[:, 1], mesh.faces[:, 2]
    ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
    faces = np.concatenate([
        np.column_stack([a, ab, ca]),
        np.column_stack([ab, b, bc]),
        np.column_stack([ca, bc, c]),
        np.column_stack([ab, bc, ca]),
    ])
    valid = None
    if mesh.valid is not None:
        valid = np.concatenate([mesh.valid, mesh.valid[edges[:, 0]] & mesh.valid[edges[:, 1]]])
    return Mesh(np.vstack([mesh.vertices, mids]), faces, valid)


def _collapse_target(Q: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[float, np.ndarray]:
    A = Q.copy()
    A[3] = [0.0, 0.0, 0.0, 1.0]
    candidates = [a, b, 0.5 * (a + b)]
    if abs(np.linalg.det(A)) > 1e-12:
        candidates.insert(0, np.linalg.solve(A, [0.0, 0.0, 0.0, 1.0])[:3])
    best_cost, best = np.inf, candidates[-1]
    for x in candidates:
        h = np.append(x, 1.0)
        cost = float(h @ Q @ h)
        if cost < best_cost - 1e-18:
            best_cost, best = cost, x
    return best_cost, np.asarray(best, dtype=np.float64)


def quadric_edge_collapse(mesh: Mesh, target_vertex_count: int, show_progress: bool = True) -> Mesh:
    """
    Garland-Heckbert quadric error decimation down to a target vertex count.

    Collapses respect the link condition and reject face flips; boundary
    vertices are never moved, so open borders are preserved.
    """
    bad = mesh.non_manifold_edges()
    if len(bad):
        raise NonManifoldError("edge collapse needs an edge-manifold mesh; non-manifold edges",
                               [tuple(map(int, e)) for e in bad])
    V = mesh.vertices.copy()
    F = mesh.faces.copy()
    valid = None if mesh.valid is None else mesh.valid.copy()
    n = len(V)

    normals = mesh.face_normals
    planes = np.column_stack([normals, -np.einsum("ij,ij->i", normals, V[F[:, 0]])])
    K = np.einsum("fi,fj->fij", planes, planes)
    Q = np.zeros((n, 4, 4))
    for k in range(3):
        np.add.at(Q, F[:, k], K)

    vert_faces: List[set] = [set() for _ in range(n)]
    for fi, f in enumerate(F):
        for v in f:
            vert_faces[v].add(fi)
    neighbors: List[set] = [set() for _ in range(n)]
    for a, b in mesh.edges:
        neighbors[a].add(b)
        neighbors[b].add(a)
    locked = mesh.boundary_vertex_mask.copy()
    active = np.zeros(n, dtype=bool)
    active[np.unique(F)] = True
    face_alive = np.ones(len(F), dtype=bool)
    version = np.zeros(n, dtype=np.int64)

    heap: List[Tuple[float, int, int, int, int, Tuple[float, float, float]]] = []

    def push(u: int, v: int) -> None:
        if locked[u] or locked[v]:
            return
        cost, x = _collapse_target(Q[u] + Q[v], V[u], V[v])
        heapq.heappush(heap, (cost, min(u, v), max(u, v), int(version[u]), int(version[v]), tuple(x)))

    for a, b in mesh.edges:
        push(int(a), int(b))

    def flips(u: int, v: int, x: np.ndarray) -> bool:
        for w in (u, v):
            for fi in vert_faces[w]:
                f = F[fi]
                if u in f and v in f:
                    continue
                tri = V[f].copy()
                before = np.cross(tri[1] - tri[0], tri[2] - tri[0])
                tri[list(f).index(w)] = x
                after = np.cross(tri[1] - tri[0], tri[2] - tri[0])
                if np.dot(before, after) <= 1e-14 * np.dot(before, before):
                    return True
        return False

    alive = int(active.sum())
    bar = progress(range(max(alive - target_vertex_count, 0)), enabled=show_progress, desc="collapse")
    bar_iter = iter(bar)
    while alive > target_vertex_count and heap:
        cost, u, v, su, sv, x = heapq.heappop(heap)
        if not (active[u] and active[v]) or version[u] != su or version[v] != sv:
            continue
        shared = vert_faces[u] & vert_faces[v]
        if len(shared) != 2 or len(neighbors[u] & neighbors[v]) != 2:
            continue
        x = np.asarray(x)
        if flips(u, v, x):
            continue
        # collapse v into u
        V[u] = x
        Q[u] = Q[u] + Q[v]
        if valid is not None:
            valid[u] = valid[u] and valid[v]
        for fi in shared:
            face_alive[fi] = False
            for w in F[fi]:
                vert_faces[w].discard(fi)
        for fi in vert_faces[v]:
            F[fi][F[fi] == v] = u
            vert_faces[u].add(fi)
        vert_faces[v].clear()
        for w in neighbors[v]:
            if w != u:
                neighbors[w].discard(v)
                neighbors[w].add(u)
                neighbors[u].add(w)
        neighbors[u].discard(v)
        neighbors[v].clear()
        active[v] = False
        version[u] += 1
        alive -= 1
        next(bar_iter, None)
        for w in neighbors[u]:
            push(u, int(w))
    if alive > target_vertex_count:
        logger.warning("edge collapse stopped at %d vertices (target %d)", alive, target_vertex_count)

    keep = active | ~np.isin(np.arange(n), mesh.faces)  # unreferenced input vertices are retained
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    faces = remap[F[face_alive]]
    return Mesh(V[keep], faces, None if valid is None else valid[keep])


def resample_to_resolution(mesh: Mesh, target_vertex_count: int, show_progress: bool = True) -> Mesh:
    """
    Bring a mesh to roughly ``target_vertex_count`` vertices (within 10%).

    Upsamples by midpoint subdivision and downsamples by quadric edge
    collapse; a mesh already within tolerance is returned unchanged.
    """
    if target_vertex_count < 4:
        raise ValueError("target vertex count must be >= 4")
    current = mesh
    while current.n_vertices < 0.9 * target_vertex_count:
        current = midpoint_subdivide(current)
        logger.info("subdivided to %d vertices", current.n_vertices)
    if current.n_vertices > 1.1 * target_vertex_count:
        current = quadric_edge_collapse(current, target_vertex_count, show_progress=show_progress)
        logger.info("collapsed to %d vertices", current.n_vertices)
    return current


# ---- smoothing --------------------------------------------------------

def laplacian_smooth(mesh: Mesh, iterations: int, damping: float = 0.5, fix_boundary: bool = True) -> Mesh:
    """
    Uniform-weight Laplacian smoothing ``v += damping * (mean(N(v)) - v)``.

    Args:
        mesh: Input mesh; connectivity is kept.
        iterations: Number of smoothing passes (0 returns the input).
        damping: Step size per pass.
        fix_boundary: Keep open-border vertices in place.

    Returns:
        Smoothed mesh.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return mesh
    A = mesh.adjacency
    degree = np.asarray(A.sum(axis=1)).reshape(-1)
    W = sp.diags(1.0 / np.where(degree > 0, degree, 1.0)) @ A
    movable = degree > 0
    if fix_boundary:
        movable &= ~mesh.boundary_vertex_mask
    V = mesh.vertices.copy()
    for _ in range(iterations):
        step = damping * (W @ V - V)
        V[movable] += step[movable]
    return mesh.with_vertices(V)
