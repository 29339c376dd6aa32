"""
Height-map patches on quad-aligned reference frames.

Each seed's r-ball of surface points is moved into the seed frame and
binned on an N x N grid of side sqrt(2) r; a bin stores the mean height of
its points. The vertex-bin map lets the patches be turned back into a
connected mesh on a donor connectivity.
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from sklearn.neighbors import KDTree

from errors import DictionaryFormatError, ReconstructionError
from mesh_core import Mesh, PathLike, PointCloud
from quad_frames import ReferenceFrame, SeedSet
from settings import parallel_map, progress

logger = logging.getLogger(__name__)

PSET_MAGIC = b"PSET"
PSET_VERSION = 1


@dataclass(frozen=True)
class PatchParams:
    patch_radius: float
    grid_resolution: int
    overlap_level: int = 1

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ValueError("grid resolution must be >= 2")
        if not self.patch_radius > 0:
            raise ValueError("patch radius must be positive")
        if self.overlap_level < 0:
            raise ValueError("overlap level must be >= 0")

    @property
    def grid_length(self) -> float:
        return math.sqrt(2.0) * self.patch_radius

    @property
    def bin_size(self) -> float:
        return self.grid_length / self.grid_resolution

    @property
    def signal_length(self) -> int:
        return self.grid_resolution ** 2

    @property
    def seeds_per_quad(self) -> int:
        return 4 * self.overlap_level + 1

    @cached_property
    def bin_centers(self) -> np.ndarray:
        """(N^2, 2) local XY of bin centres, bin index = iy * N + ix."""
        n, L = self.grid_resolution, self.grid_length
        c = -L / 2.0 + (np.arange(n) + 0.5) * (L / n)
        xs, ys = np.meshgrid(c, c)
        return np.column_stack([xs.reshape(-1), ys.reshape(-1)])


def grid_quantization_bound(params: PatchParams) -> float:
    """
    Side of one bin, the in-plane quantization bound L/N.

    Examples:
        >>> round(grid_quantization_bound(PatchParams(patch_radius=0.5 ** 0.5, grid_resolution=4)), 12)
        0.25
    """
    return params.bin_size


@dataclass(frozen=True, eq=False)
class Patch:
    heights: np.ndarray
    mask: np.ndarray
    seed_id: int = 0

    def __post_init__(self):
        M = np.array(self.mask, dtype=bool, copy=True).reshape(-1)
        H = np.array(self.heights, dtype=np.float64, copy=True).reshape(-1)
        if H.shape != M.shape:
            raise ValueError("heights and mask must have the same length")
        H[~M] = 0.0
        H.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "heights", H)
        object.__setattr__(self, "mask", M)

    @property
    def observed_fraction(self) -> float:
        return float(self.mask.mean()) if len(self.mask) else 0.0


@dataclass(frozen=True, eq=False)
class PatchSet:
    """Patches plus the (seed, transform) settings they were sampled with."""

    params: PatchParams
    patches: List[Patch]
    origins: np.ndarray
    rotations: np.ndarray
    quad_ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        O = np.array(self.origins, dtype=np.float64, copy=True).reshape(-1, 3)
        R = np.array(self.rotations, dtype=np.float64, copy=True).reshape(-1, 3, 3)
        if not (len(self.patches) == len(O) == len(R)):
            raise ValueError("need exactly one setting per patch")
        eye = np.broadcast_to(np.eye(3), R.shape)
        if len(R) and np.abs(R @ np.swapaxes(R, 1, 2) - eye).max() > 1e-6:
            raise ValueError("patch transforms must be rigid")
        O.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "origins", O)
        object.__setattr__(self, "rotations", R)

    def __len__(self) -> int:
        return len(self.patches)

    def frame(self, index: int) -> ReferenceFrame:
        return ReferenceFrame(self.origins[index], self.rotations[index])

    @property
    def settings(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.origins, self.rotations))

    def signal_matrix(self) -> Tuple[np.ndarray, np.ndarray]:
        """Heights and masks as (N^2, n_patches) column matrices."""
        m = self.params.signal_length
        if not self.patches:
            return np.zeros((m, 0)), np.zeros((m, 0), dtype=bool)
        H = np.column_stack([p.heights for p in self.patches])
        M = np.column_stack([p.mask for p in self.patches])
        return H, M

    def with_heights(self, heights: np.ndarray, mask: Optional[np.ndarray] = None) -> "PatchSet":
        """Same settings, new heights (columns); mask defaults to the current one."""
        H = np.asarray(heights, dtype=np.float64)
        M = self.signal_matrix()[1] if mask is None else np.asarray(mask, dtype=bool)
        patches = [Patch(H[:, s], M[:, s], p.seed_id) for s, p in enumerate(self.patches)]
        return PatchSet(self.params, patches, self.origins, self.rotations, self.quad_ids)


@dataclass(frozen=True, eq=False)
class VertexBinMap:
    """Flat (vertex, patch, bin) triples sorted by vertex then patch."""

    n_vertices: int
    vertex: np.ndarray
    patch: np.ndarray
    bin: np.ndarray

    def __len__(self) -> int:
        return len(self.vertex)

    def pairs(self, j: int) -> List[Tuple[int, int]]:
        lo, hi = np.searchsorted(self.vertex, [j, j + 1])
        return [(int(p), int(b)) for p, b in zip(self.patch[lo:hi], self.bin[lo:hi])]

    def patch_counts(self) -> np.ndarray:
        """Number of distinct patches sampling each vertex."""
        if not len(self.vertex):
            return np.zeros(self.n_vertices, dtype=np.int64)
        unique = np.unique(np.column_stack([self.vertex, self.patch]), axis=0)
        return np.bincount(unique[:, 0], minlength=self.n_vertices)


def _bin_local_points(local: np.ndarray, params: PatchParams) -> Tuple[np.ndarray, np.ndarray]:
    """Bin index and height of local points inside the grid footprint."""
    half = params.grid_length / 2.0
    n = params.grid_resolution
    inside = (np.abs(local[:, 0]) < half) & (np.abs(local[:, 1]) < half)
    kept = local[inside]
    ix = np.minimum(np.floor((kept[:, 0] + half) / params.grid_length * n).astype(np.int64), n - 1)
    iy = np.minimum(np.floor((kept[:, 1] + half) / params.grid_length * n).astype(np.int64), n - 1)
    return iy * n + ix, kept[:, 2], inside


def _patch_from_points(points: np.ndarray, origin: np.ndarray, rotation: np.ndarray,
                       params: PatchParams, seed_id: int) -> Patch:
    local = (points - origin) @ rotation.T
    bins, z, _ = _bin_local_points(local, params)
    m = params.signal_length
    counts = np.bincount(bins, minlength=m)
    sums = np.bincount(bins, weights=z, minlength=m)
    mask = counts > 0
    heights = np.zeros(m)
    heights[mask] = sums[mask] / counts[mask]
    return Patch(heights, mask, seed_id)


def extract_patch(cloud: PointCloud, frame: ReferenceFrame, params: PatchParams, seed_id: int = 0) -> Patch:
    idx = cloud.radius_query(frame.origin, params.patch_radius)
    return _patch_from_points(cloud.points[idx], frame.origin, frame.rotation, params, seed_id)


def extract_patch_set(cloud: PointCloud, seeds: SeedSet, params: PatchParams,
                      threads: Optional[int] = None, show_progress: bool = False) -> PatchSet:
    """One patch per seed, in seed order."""
    if len(seeds) and len(cloud):
        neighbourhoods = cloud.tree.query_radius(seeds.points, r=params.patch_radius)
    else:
        neighbourhoods = [np.zeros(0, dtype=np.int64) for _ in range(len(seeds))]

    def extract(s: int) -> Patch:
        idx = np.sort(neighbourhoods[s])
        return _patch_from_points(cloud.points[idx], seeds.points[s], seeds.rotations[s], params, s)

    order = list(progress(range(len(seeds)), enabled=show_progress, desc="patches"))
    patches = parallel_map(extract, order, threads)
    logger.debug("extracted %d patches from %d points", len(patches), len(cloud))
    return PatchSet(params, patches, seeds.points, seeds.rotations, seeds.quad_ids)


def reconstruct_point_cloud(ps: PatchSet) -> PointCloud:
    """Every observed bin becomes its bin centre at the stored height, in world space."""
    H, M = ps.signal_matrix()
    bins, patch = np.nonzero(M)
    centers = ps.params.bin_centers[bins]
    local = np.column_stack([centers, H[bins, patch]])
    points = np.einsum("ni,nij->nj", local, ps.rotations[patch]) + ps.origins[patch]
    return PointCloud(points.reshape(-1, 3))


def build_vertex_bin_map(donor: Mesh, seeds: SeedSet, params: PatchParams) -> VertexBinMap:
    """Map donor vertices to the (patch, bin) slots extract_patch would drop them in."""
    V = donor.vertices
    vertex, patch, bins = [], [], []
    if len(seeds) and len(V):
        tree = KDTree(V)
        neighbourhoods = tree.query_radius(seeds.points, r=params.patch_radius)
        for s, idx in enumerate(neighbourhoods):
            idx = np.sort(idx)
            local = (V[idx] - seeds.points[s]) @ seeds.rotations[s].T
            b, _, inside = _bin_local_points(local, params)
            vertex.append(idx[inside])
            patch.append(np.full(len(b), s, dtype=np.int64))
            bins.append(b)
    if vertex:
        v = np.concatenate(vertex)
        p = np.concatenate(patch)
        b = np.concatenate(bins)
        order = np.lexsort((p, v))
        v, p, b = v[order], p[order], b[order]
    else:
        v = p = b = np.zeros(0, dtype=np.int64)
    return VertexBinMap(len(V), v, p, b)


def reconstruct_mesh(ps: PatchSet, vbm: VertexBinMap, donor_faces: np.ndarray,
                     keep: Optional[np.ndarray] = None,
                     reference_positions: Optional[np.ndarray] = None) -> Mesh:
    """
    Rebuild donor vertices from the patch set and keep donor connectivity.

    A vertex takes the mean of its estimates from observed bins. Vertices
    without any estimate are filled breadth-first from the 1-ring of
    vertices resolved in earlier layers.

    Args:
        ps: Patch set whose settings match the map.
        vbm: Vertex-bin map built on the donor.
        donor_faces: Donor triangles (kept unchanged).
        keep: Optional mask of vertices pinned to ``reference_positions``.
        reference_positions: Positions for pinned vertices, also used for
            unreferenced vertices that receive no estimate.

    Returns:
        Mesh with the donor faces.
    """
    n = vbm.n_vertices
    faces = np.asarray(donor_faces, dtype=np.int64).reshape(-1, 3)
    H, M = ps.signal_matrix()
    X = np.zeros((n, 3))
    counts = np.zeros(n)
    if len(vbm):
        hit = M[vbm.bin, vbm.patch]
        v, p, b = vbm.vertex[hit], vbm.patch[hit], vbm.bin[hit]
        local = np.column_stack([ps.params.bin_centers[b], H[b, p]])
        estimates = np.einsum("ni,nij->nj", local, ps.rotations[p]) + ps.origins[p]
        np.add.at(X, v, estimates)
        counts = np.bincount(v, minlength=n).astype(np.float64)
    resolved = counts > 0
    X[resolved] /= counts[resolved, None]
    if keep is not None:
        pinned = np.asarray(keep, dtype=bool)
        X[pinned] = np.asarray(reference_positions)[pinned]
        resolved |= pinned

    fallback = None if reference_positions is None else np.asarray(reference_positions)
    X = ring_fill(X, resolved, faces, fallback)
    return Mesh(X, faces)


def ring_fill(X: np.ndarray, resolved: np.ndarray, faces: np.ndarray,
              fallback: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Resolve missing rows of X breadth-first from their 1-ring.

    Each layer takes the mean of the neighbours resolved in earlier layers.
    Vertices used by no face take ``fallback`` positions when given; a
    connected component without any resolved vertex is an error.
    """
    n = len(X)
    X = np.array(X, dtype=np.float64, copy=True)
    resolved = np.array(resolved, dtype=bool, copy=True)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    A = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    A = ((A + A.T) > 0).astype(np.float64)
    missing = int((~resolved).sum())
    layers = 0
    while True:
        r = resolved.astype(np.float64)
        nb_count = A @ r
        frontier = ~resolved & (nb_count > 0)
        if not frontier.any():
            break
        nb_sum = A @ (X * r[:, None])
        X[frontier] = nb_sum[frontier] / nb_count[frontier, None]
        resolved |= frontier
        layers += 1

    if not resolved.all():
        referenced = np.zeros(n, dtype=bool)
        referenced[faces.reshape(-1)] = True
        loose = ~resolved & ~referenced
        if loose.any() and fallback is not None:
            X[loose] = fallback[loose]
            resolved |= loose
        if not resolved.all():
            _, label = connected_components(A, directed=False)
            component = int(label[np.flatnonzero(~resolved)[0]])
            raise ReconstructionError("no vertex of this connected component was observed", component)
    if layers:
        logger.debug("filled %d vertices in %d ring layers", missing, layers)
    return X


# ---- PSET files --------------------------------------------------------

_HEADER = struct.Struct("<4sIIdI")


def save_patch_set(ps: PatchSet, path: PathLike) -> None:
    """Write a patch set: header, then per patch seed, rotation, f32 heights, packed mask."""
    n = ps.params.grid_resolution
    chunks = [_HEADER.pack(PSET_MAGIC, PSET_VERSION, n, ps.params.patch_radius, len(ps))]
    for s, patch in enumerate(ps.patches):
        chunks.append(ps.origins[s].astype("<f8").tobytes())
        chunks.append(ps.rotations[s].astype("<f8").tobytes())
        chunks.append(patch.heights.astype("<f4").tobytes())
        chunks.append(np.packbits(patch.mask, bitorder="little").tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(chunks))


def load_patch_set(path: PathLike, overlap_level: int = 0) -> PatchSet:
    """Read a PSET file; the overlap level is not stored and is supplied by the caller."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DictionaryFormatError(f"{path}: truncated patch-set header")
    magic, version, n, radius, count = _HEADER.unpack_from(data)
    if magic != PSET_MAGIC:
        raise DictionaryFormatError(f"{path}: not a patch-set file")
    if version != PSET_VERSION:
        raise DictionaryFormatError(f"{path}: unsupported patch-set version {version}")
    m = n * n
    mask_bytes = (m + 7) // 8
    record = 24 + 72 + 4 * m + mask_bytes
    if len(data) != _HEADER.size + count * record:
        raise DictionaryFormatError(f"{path}: truncated or oversized patch-set body")
    params = PatchParams(radius, n, overlap_level)
    origins = np.empty((count, 3))
    rotations = np.empty((count, 3, 3))
    patches = []
    offset = _HEADER.size
    for s in range(count):
        origins[s] = np.frombuffer(data, "<f8", 3, offset)
        rotations[s] = np.frombuffer(data, "<f8", 9, offset + 24).reshape(3, 3)
        heights = np.frombuffer(data, "<f4", m, offset + 96).astype(np.float64)
        packed = np.frombuffer(data, np.uint8, mask_bytes, offset + 96 + 4 * m)
        mask = np.unpackbits(packed, count=m, bitorder="little").astype(bool)
        patches.append(Patch(heights, mask, s))
        offset += record
    return PatchSet(params, patches, origins, rotations)


def patch_set_from_codes(params: PatchParams, origins: np.ndarray, rotations: np.ndarray,
                         signals: Sequence[np.ndarray], quad_ids: Optional[np.ndarray] = None) -> PatchSet:
    """Fully observed patch set from decoded signals (one per seed)."""
    patches = [Patch(x, np.ones(params.signal_length, dtype=bool), s) for s, x in enumerate(signals)]
    return PatchSet(params, patches, origins, rotations, quad_ids)
