"""
End-to-end applications of the patch dictionary.

Every application follows the same path: smooth a proxy, quadrangulate
it, build frames and seeds, sample patches from the observed surface,
sparse-code them against a dictionary and rebuild a connected mesh on a
donor connectivity.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DictionaryFormatError, DictionaryMismatchError, InsufficientDataError
from hole_filling import HoleSpec, detect_holes, loop_diameter, triangulate_holes
from mesh_core import Mesh, PathLike, PointCloud, laplacian_smooth
from mesh_metrics import (
    MetricsReport,
    cloud_to_mesh_error,
    global_reconstruction_error,
    mesh_entities,
    psnr,
    rmse,
    sample_surface_points,
)
from patch_codec import (
    PatchParams,
    PatchSet,
    build_vertex_bin_map,
    extract_patch_set,
    patch_set_from_codes,
    reconstruct_mesh,
    ring_fill,
)
from quad_frames import QuadMesh, ReferenceFrame, SeedSet, quad_frames, quadrangulate, seed_points_with_offsets, subdivide_quad_mesh
from settings import RunConfig, parallel_map, progress
from sparse_dict import Dictionary, SparseCode, ksvd_learn, masked_omp_encode, omp_encode, reconstruct_signal

logger = logging.getLogger(__name__)

SCOPES = ("local", "global", "self-similar")
ESHP_MAGIC = b"ESHP"
ESHP_VERSION = 2
# per-code size marking a patch the encoder skipped
_UNUSED_CODE = 0xFFFF


@dataclass(frozen=True, eq=False)
class ShapeAnalysis:
    """Intermediate products of the shared front half of every application."""

    proxy: Mesh
    quad_mesh: QuadMesh
    frames: List[ReferenceFrame]
    seeds: SeedSet
    cloud: PointCloud
    patches: PatchSet


def _proxy(mesh: Mesh, config: RunConfig) -> Mesh:
    if mesh.valid is not None and not mesh.valid.all():
        mesh = Mesh(ring_fill(mesh.vertices, mesh.valid, mesh.faces, mesh.vertices), mesh.faces)
    return laplacian_smooth(mesh, config.smoothing_iterations)


def _observed_cloud(mesh: Mesh, config: RunConfig, face_mask: Optional[np.ndarray] = None) -> PointCloud:
    """Surface samples that stay clear of invalid vertices (nearest corner must be valid)."""
    cloud = sample_surface_points(mesh, config.sample_density(), seed=config.seed, face_mask=face_mask)
    if mesh.valid is None or mesh.valid.all():
        return cloud
    corners = mesh.faces[cloud.source_face]
    dist = np.linalg.norm(mesh.vertices[corners] - cloud.points[:, None, :], axis=2)
    nearest = corners[np.arange(len(corners)), np.argmin(dist, axis=1)]
    keep = mesh.valid[nearest]
    return PointCloud(cloud.points[keep], cloud.source_face[keep])


def seeds_for_quad_mesh(qm: QuadMesh, params: PatchParams,
                        surface: Optional[Mesh] = None) -> Tuple[List[ReferenceFrame], SeedSet]:
    """Frames and seeds of a quad mesh; offset seeds land on ``surface`` when given."""
    frames = quad_frames(qm)
    return frames, seed_points_with_offsets(qm, frames, params.overlap_level, surface)


def analyze_shape(mesh: Mesh, config: RunConfig, face_mask: Optional[np.ndarray] = None,
                  for_encoding: bool = False) -> ShapeAnalysis:
    """
    Proxy, quad mesh, frames, seeds and patches of one shape.

    Offset seeds are projected onto the proxy. With ``for_encoding`` they are
    projected onto the subdivided quad mesh instead, the one surface a
    decoder can rebuild from the stored quad mesh.
    """
    params = config.patch_params()
    proxy = _proxy(mesh, config)
    qm = quadrangulate(proxy, config.quad_length, iterations=config.field_iterations)
    surface = subdivide_quad_mesh(qm, config.resolved_subdivision_level()) if for_encoding else proxy
    frames, seeds = seeds_for_quad_mesh(qm, params, surface)
    sampled = mesh
    if mesh.valid is not None and not mesh.valid.all():
        sampled = Mesh(ring_fill(mesh.vertices, mesh.valid, mesh.faces, mesh.vertices), mesh.faces, mesh.valid)
    cloud = _observed_cloud(sampled, config, face_mask)
    patches = extract_patch_set(cloud, seeds, params, threads=config.threads, show_progress=config.progress)
    logger.info("%d quads, %d patches, %d surface samples", qm.n_quads, len(patches), len(cloud))
    return ShapeAnalysis(proxy, qm, frames, seeds, cloud, patches)


def _check_dictionary(D: Dictionary, params: PatchParams) -> None:
    if D.grid_resolution != params.grid_resolution:
        raise DictionaryMismatchError(f"dictionary grid {D.grid_resolution} != configured {params.grid_resolution}")
    if abs(D.patch_radius - params.patch_radius) > 1e-9 * params.patch_radius:
        raise DictionaryMismatchError(f"dictionary patch radius {D.patch_radius:.6g} != configured {params.patch_radius:.6g}")


def clean_signals(patch_sets: Sequence[PatchSet]) -> np.ndarray:
    """Fully observed patches of all sets as training columns."""
    columns = []
    for ps in patch_sets:
        H, M = ps.signal_matrix()
        columns.append(H[:, M.all(axis=0)])
    m = patch_sets[0].params.signal_length if patch_sets else 0
    return np.hstack(columns) if columns else np.zeros((m, 0))


def learn_from_patch_sets(patch_sets: Sequence[PatchSet], scope: str, config: RunConfig,
                          return_trace: bool = False):
    if scope not in SCOPES:
        raise ValueError(f"unknown dictionary scope '{scope}', expected one of {SCOPES}")
    X = clean_signals(patch_sets)
    total = sum(len(ps) for ps in patch_sets)
    logger.info("training on %d fully observed patches out of %d", X.shape[1], total)
    if X.shape[1] < config.atom_count:
        raise InsufficientDataError(
            f"only {X.shape[1]} clean patches for {config.atom_count} atoms; lower atom_count or add shapes"
        )
    D, trace = ksvd_learn(X, config.learn_config(), patch_radius=config.resolved_patch_radius(),
                          provenance=scope, threads=config.threads, show_progress=config.progress)
    return (D, trace) if return_trace else D


def learn_dictionary(meshes: Sequence[Mesh], scope: str, config: RunConfig, return_trace: bool = False):
    """
    Learn a local, global or self-similar dictionary.

    Local and self-similar scopes take exactly one mesh; for self-similar the
    mesh is the damaged shape itself and only its fully observed patches
    are used, which is what every scope does anyway.
    """
    if scope in ("local", "self-similar") and len(meshes) != 1:
        raise ValueError(f"{scope} dictionaries are learned from exactly one mesh, got {len(meshes)}")
    if not meshes:
        raise ValueError("no meshes to learn from")
    patch_sets = [analyze_shape(mesh, config).patches for mesh in meshes]
    return learn_from_patch_sets(patch_sets, scope, config, return_trace)


# ---- sparse coding of patch sets ---------------------------------------

def encode_patches(ps: PatchSet, D: Dictionary, config: RunConfig,
                   min_observed_fraction: Optional[float] = None) -> Tuple[List[SparseCode], np.ndarray]:
    """
    Sparse-code every patch; returns (codes, used).

    Fully observed patches go through plain OMP, partially observed ones
    through masked OMP. Patches with no observed bin, or with fewer than
    ``min_observed_fraction`` observed bins, are skipped (empty code,
    ``used`` False).
    """
    k = config.sparsity

    def encode(s: int) -> Tuple[SparseCode, bool]:
        patch = ps.patches[s]
        if patch.mask.all():
            return omp_encode(patch.heights, D, k, config.residual_tol), True
        fraction = patch.observed_fraction
        if fraction == 0.0 or (min_observed_fraction is not None and fraction < min_observed_fraction):
            return SparseCode.empty(), False
        return masked_omp_encode(patch.heights, patch.mask, D, k, config.residual_tol), True

    order = list(progress(range(len(ps)), enabled=config.progress, desc="sparse coding"))
    results = parallel_map(encode, order, config.threads)
    codes = [code for code, _ in results]
    used = np.array([flag for _, flag in results], dtype=bool)
    if len(used) and not used.all():
        logger.info("skipped %d of %d patches with too few observed bins", int((~used).sum()), len(used))
    return codes, used


def _decoded_patch_set(params: PatchParams, seeds: SeedSet, codes: Sequence[SparseCode], used: np.ndarray,
                       D: Dictionary) -> PatchSet:
    signals = [reconstruct_signal(D, code) for code in codes]
    ps = patch_set_from_codes(params, seeds.points, seeds.rotations, signals, seeds.quad_ids)
    H, M = ps.signal_matrix()
    M[:, ~used] = False
    return ps.with_heights(H, M)


def _rebuild(analysis: ShapeAnalysis, donor: Mesh, codes: Sequence[SparseCode], used: np.ndarray, D: Dictionary,
             keep: Optional[np.ndarray] = None) -> Mesh:
    ps = _decoded_patch_set(analysis.patches.params, analysis.seeds, codes, used, D)
    vbm = build_vertex_bin_map(donor, analysis.seeds, ps.params)
    return reconstruct_mesh(ps, vbm, donor.faces, keep=keep, reference_positions=donor.vertices)


# ---- compression --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EncodedShape:
    quad_mesh: QuadMesh
    params: PatchParams
    codes: List[SparseCode]
    dictionary_hash: bytes
    sparsity: int
    subdivision_level: int
    used: Optional[np.ndarray] = None

    def __post_init__(self):
        expected = self.quad_mesh.n_quads * self.params.seeds_per_quad
        if len(self.codes) != expected:
            raise ValueError(f"expected {expected} codes (one per seed), got {len(self.codes)}")
        used = np.ones(expected, dtype=bool) if self.used is None else np.array(self.used, dtype=bool).reshape(-1)
        if len(used) != expected:
            raise ValueError(f"expected {expected} used flags, got {len(used)}")
        used.setflags(write=False)
        object.__setattr__(self, "used", used)
        if len(self.dictionary_hash) != 32:
            raise ValueError("dictionary hash must be 32 bytes")


def _quantize(code: SparseCode) -> SparseCode:
    return SparseCode(code.support, code.coefficients.astype(np.float32).astype(np.float64))


def encode_shape(mesh: Mesh, D: Dictionary, config: RunConfig) -> EncodedShape:
    """Quad mesh plus one sparse code per seed; coefficients are stored as float32."""
    _check_dictionary(D, config.patch_params())
    return encode_analysis(analyze_shape(mesh, config, for_encoding=True), D, config)


def encode_analysis(analysis: ShapeAnalysis, D: Dictionary, config: RunConfig) -> EncodedShape:
    params = analysis.patches.params
    _check_dictionary(D, params)
    codes, used = encode_patches(analysis.patches, D, config)
    return EncodedShape(
        quad_mesh=analysis.quad_mesh,
        params=params,
        codes=[_quantize(c) for c in codes],
        dictionary_hash=D.hash,
        sparsity=config.sparsity,
        subdivision_level=config.resolved_subdivision_level(),
        used=used,
    )


def decode_shape(enc: EncodedShape, D: Dictionary, threads: Optional[int] = None) -> Mesh:
    """Rebuild the mesh on the subdivided quad mesh; patches the encoder skipped contribute no bins."""
    if D.hash != enc.dictionary_hash:
        raise DictionaryMismatchError(
            f"shape was encoded with dictionary {enc.dictionary_hash.hex()[:12]}, got {D.hash_hex[:12]}"
        )
    donor = subdivide_quad_mesh(enc.quad_mesh, enc.subdivision_level)
    _, seeds = seeds_for_quad_mesh(enc.quad_mesh, enc.params, donor)
    ps = _decoded_patch_set(enc.params, seeds, enc.codes, enc.used, D)
    vbm = build_vertex_bin_map(donor, seeds, enc.params)
    logger.info("decoding %d patches onto %d donor vertices", len(ps), donor.n_vertices)
    return reconstruct_mesh(ps, vbm, donor.faces, reference_positions=donor.vertices)


def compression_stats(mesh: Mesh, enc: EncodedShape, decoded: Mesh) -> MetricsReport:
    """Entity accounting and reconstruction quality of one encoded shape."""
    entities = mesh_entities(mesh)
    quad_entities = enc.quad_mesh.entity_count()
    patch_entities = enc.sparsity * len(enc.codes) + quad_entities
    return MetricsReport(
        mean_distance=global_reconstruction_error(decoded, mesh),
        psnr_db=psnr(decoded, mesh),
        mesh_entities=entities,
        patches=len(enc.codes),
        quad_entities=quad_entities,
        patch_entities=patch_entities,
        compression_factor=entities / patch_entities,
    )


_ESHP_HEAD = struct.Struct("<4sI32sII")
_ESHP_PARAMS = struct.Struct("<IdIIII")


def save_encoded_shape(enc: EncodedShape, path: PathLike) -> None:
    qm = enc.quad_mesh
    p = enc.params
    chunks = [
        _ESHP_HEAD.pack(ESHP_MAGIC, ESHP_VERSION, enc.dictionary_hash, len(qm.vertices), qm.n_quads),
        qm.vertices.astype("<f8").tobytes(),
        qm.quads.astype("<u4").tobytes(),
        _ESHP_PARAMS.pack(p.grid_resolution, p.patch_radius, p.overlap_level, enc.sparsity,
                          enc.subdivision_level, len(enc.codes)),
    ]
    for code, used in zip(enc.codes, enc.used):
        if not used:
            chunks.append(struct.pack("<H", _UNUSED_CODE))
            continue
        chunks.append(struct.pack("<H", len(code)))
        pairs = np.empty(len(code), dtype=[("idx", "<u4"), ("coef", "<f4")])
        pairs["idx"] = code.support
        pairs["coef"] = code.coefficients
        chunks.append(pairs.tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(chunks))


def load_encoded_shape(path: PathLike) -> EncodedShape:
    path = Path(path)
    if not path.exists():
        raise DictionaryFormatError(f"encoded shape not found: {path}")
    data = path.read_bytes()
    try:
        magic, version, digest, n_vertices, n_quads = _ESHP_HEAD.unpack_from(data)
        if magic != ESHP_MAGIC:
            raise DictionaryFormatError(f"{path}: not an encoded shape file")
        if version != ESHP_VERSION:
            raise DictionaryFormatError(f"{path}: unsupported encoded shape version {version}")
        offset = _ESHP_HEAD.size
        vertices = np.frombuffer(data, "<f8", 3 * n_vertices, offset).reshape(-1, 3)
        offset += 24 * n_vertices
        quads = np.frombuffer(data, "<u4", 4 * n_quads, offset).reshape(-1, 4).astype(np.int64)
        offset += 16 * n_quads
        n, radius, overlap, sparsity, level, count = _ESHP_PARAMS.unpack_from(data, offset)
        offset += _ESHP_PARAMS.size
        codes, used = [], []
        pair = np.dtype([("idx", "<u4"), ("coef", "<f4")])
        for _ in range(count):
            (size,) = struct.unpack_from("<H", data, offset)
            offset += 2
            used.append(size != _UNUSED_CODE)
            if not used[-1]:
                codes.append(SparseCode.empty())
                continue
            pairs = np.frombuffer(data, pair, size, offset)
            offset += size * pair.itemsize
            codes.append(SparseCode(pairs["idx"].astype(np.int64), pairs["coef"].astype(np.float64)))
    except (struct.error, ValueError) as e:
        raise DictionaryFormatError(f"{path}: truncated encoded shape ({e})") from None
    if offset != len(data):
        raise DictionaryFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return EncodedShape(QuadMesh(vertices, quads), PatchParams(radius, n, overlap), codes, digest, sparsity, level,
                        np.asarray(used, dtype=bool))


# ---- missing vertices ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class RecoveryResult:
    mesh: Mesh
    missing: np.ndarray
    rmse: float


def recover_missing_vertices(mesh: Mesh, D: Dictionary, config: RunConfig,
                             truth: Optional[np.ndarray] = None) -> RecoveryResult:
    """
    Re-estimate vertices flagged invalid, keeping the connectivity.

    Invalid vertices start at the mean of their resolved 1-ring, the proxy
    is smoothed from there, and patches are sampled away from invalid
    vertices so their bins come out masked.

    Args:
        mesh: Mesh whose ``valid`` flags mark the missing vertices.
        D: Dictionary compatible with the configured patch parameters.
        config: Run configuration.
        truth: Ground-truth positions for the RMSE; defaults to the stored
            (unused) coordinates of the flagged vertices.

    Returns:
        RecoveryResult with the recovered mesh and the RMSE over flagged vertices.
    """
    params = config.patch_params()
    _check_dictionary(D, params)
    valid = np.ones(mesh.n_vertices, dtype=bool) if mesh.valid is None else mesh.valid
    missing = np.flatnonzero(~valid)
    logger.info("recovering %d of %d vertices", len(missing), mesh.n_vertices)
    donor = Mesh(ring_fill(mesh.vertices, valid, mesh.faces, mesh.vertices), mesh.faces, valid)
    analysis = analyze_shape(donor, config)
    codes, used = encode_patches(analysis.patches, D, config, config.min_observed_fraction)
    keep = valid if config.keep_observed_vertices else None
    recovered = _rebuild(analysis, Mesh(donor.vertices, donor.faces), codes, used, D, keep)
    reference = mesh.vertices if truth is None else np.asarray(truth, dtype=np.float64)
    error = rmse(recovered.vertices[missing], reference[missing]) if len(missing) else 0.0
    return RecoveryResult(recovered, missing, error)


# ---- hole filling --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HoleFillResult:
    mesh: Mesh
    baseline: Mesh
    inserted: np.ndarray
    new_faces: np.ndarray
    holes: HoleSpec = field(default_factory=HoleSpec)


def fill_holes(mesh: Mesh, D: Dictionary, config: RunConfig, exclude_border: bool = False) -> HoleFillResult:
    """
    Close holes by triangulation, then re-estimate the inserted vertices from patches.

    The quad mesh is computed fresh on the triangulated shape. Samples come
    only from the original faces, so bins over holes stay masked.
    """
    params = config.patch_params()
    _check_dictionary(D, params)
    holes = detect_holes(mesh, exclude_longest=exclude_border)
    for loop in holes.loops:
        size = loop_diameter(mesh.vertices, loop)
        if size > params.grid_length:
            logger.warning("hole at vertex %d spans %.4g, larger than the patch side %.4g",
                           int(loop[0]), size, params.grid_length)
    base = mesh if mesh.valid is not None else mesh.with_valid(np.ones(mesh.n_vertices, dtype=bool))
    triangulated = triangulate_holes(base, holes)
    inserted = np.arange(mesh.n_vertices, triangulated.n_vertices)
    new_faces = np.arange(mesh.n_faces, triangulated.n_faces)
    logger.info("%d holes closed with %d new vertices and %d new faces", len(holes), len(inserted), len(new_faces))

    original_faces = np.arange(triangulated.n_faces) < mesh.n_faces
    analysis = analyze_shape(triangulated, config, face_mask=original_faces)
    codes, used = encode_patches(analysis.patches, D, config, config.min_observed_fraction)
    keep = triangulated.valid if config.keep_observed_vertices else None
    donor = Mesh(triangulated.vertices, triangulated.faces)
    filled = _rebuild(analysis, donor, codes, used, D, keep)
    return HoleFillResult(filled, donor, inserted, new_faces, holes)


def _inpainted_points(mesh: Mesh, inserted: np.ndarray, new_faces: np.ndarray) -> np.ndarray:
    centroids = mesh.vertices[mesh.faces[new_faces]].mean(axis=1)
    return np.vstack([mesh.vertices[inserted], centroids])


def evaluate_hole_fill(result: HoleFillResult, reference: Mesh) -> MetricsReport:
    """Mean distance of the inpainted region to the undamaged reference, for the fill and the baseline."""
    if not len(result.new_faces):
        raise InsufficientDataError("no hole was filled, nothing to evaluate")
    ours = cloud_to_mesh_error(_inpainted_points(result.mesh, result.inserted, result.new_faces), reference)
    baseline = cloud_to_mesh_error(_inpainted_points(result.baseline, result.inserted, result.new_faces), reference)
    return MetricsReport(
        mean_distance=ours,
        extra={
            "baseline_mean_distance": baseline,
            "baseline_ratio": baseline / ours if ours > 0 else float("inf"),
            "holes": len(result.holes),
            "inserted_vertices": len(result.inserted),
        },
    )


# ---- denoising -------------------------------------------------------------

def denoise(noisy: Mesh, D: Dictionary, config: RunConfig) -> Mesh:
    """Replace every patch by its sparse approximation and rebuild on the noisy connectivity."""
    _check_dictionary(D, config.patch_params())
    analysis = analyze_shape(noisy, config)
    codes, used = encode_patches(analysis.patches, D, config)
    return _rebuild(analysis, Mesh(noisy.vertices, noisy.faces), codes, used, D)


def laplacian_denoise_baseline(noisy: Mesh, iterations: int = 5) -> Mesh:
    """Plain Laplacian smoothing, the geometric baseline for denoising."""
    return laplacian_smooth(noisy, iterations)
