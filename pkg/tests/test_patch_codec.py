import numpy as np
import pytest

from errors import DictionaryFormatError, ReconstructionError
from fixtures import grid_plane
from mesh_core import Mesh, PointCloud
from mesh_metrics import sample_surface_points
from patch_codec import (
    Patch,
    PatchParams,
    PatchSet,
    build_vertex_bin_map,
    extract_patch,
    extract_patch_set,
    grid_quantization_bound,
    load_patch_set,
    patch_set_from_codes,
    reconstruct_mesh,
    reconstruct_point_cloud,
    ring_fill,
    save_patch_set,
)
from quad_frames import QuadMesh, ReferenceFrame, quad_frames, seed_points_with_offsets


@pytest.fixture
def params():
    return PatchParams(patch_radius=0.1, grid_resolution=8, overlap_level=1)


@pytest.fixture
def dense_plane_cloud():
    return sample_surface_points(grid_plane(21, 1.0), density=2e5, seed=0)


def test_params_geometry(params):
    assert params.grid_length == pytest.approx(0.1 * 2 ** 0.5)
    assert params.signal_length == 64
    assert params.seeds_per_quad == 5
    centers = params.bin_centers
    assert centers.shape == (64, 2)
    # bin index = iy * N + ix
    assert centers[1, 0] > centers[0, 0] and centers[1, 1] == centers[0, 1]
    assert centers[8, 1] > centers[0, 1] and centers[8, 0] == centers[0, 0]
    assert grid_quantization_bound(params) == pytest.approx(params.grid_length / 8)
    with pytest.raises(ValueError):
        PatchParams(patch_radius=0.1, grid_resolution=1)


def test_patch_zeroes_unobserved_bins():
    patch = Patch(np.arange(4.0), np.array([True, False, True, False]), seed_id=3)
    assert patch.heights.tolist() == [0.0, 0.0, 2.0, 0.0]
    assert patch.observed_fraction == 0.5


def test_flat_patch_is_zero(params, dense_plane_cloud):
    frame = ReferenceFrame([0.5, 0.5, 0.0], np.eye(3))
    patch = extract_patch(dense_plane_cloud, frame, params)
    assert patch.mask.all()
    assert np.abs(patch.heights).max() < 1e-12


def test_sloped_patch_heights(params):
    plane = grid_plane(21, 1.0)
    sloped = plane.with_vertices(np.column_stack([plane.vertices[:, :2], 0.5 * plane.vertices[:, 0]]))
    cloud = sample_surface_points(sloped, density=2e5, seed=1)
    frame = ReferenceFrame([0.5, 0.5, 0.25], np.eye(3))
    patch = extract_patch(cloud, frame, params)
    assert patch.mask.all()
    expected = 0.5 * params.bin_centers[:, 0]
    assert np.abs(patch.heights - expected).max() <= 0.25 * params.bin_size + 1e-9


def test_patch_outside_surface_is_unobserved(params, dense_plane_cloud):
    frame = ReferenceFrame([1.0, 0.5, 0.0], np.eye(3))
    patch = extract_patch(dense_plane_cloud, frame, params)
    assert 0.3 < patch.observed_fraction < 0.7
    grid = patch.mask.reshape(8, 8)
    assert grid[:, :3].all() and not grid[:, 5:].any()


def test_extract_patch_set_order_and_cloud(params, dense_plane_cloud):
    qm = QuadMesh([[0.4, 0.4, 0], [0.5, 0.4, 0], [0.5, 0.5, 0], [0.4, 0.5, 0]], [[0, 1, 2, 3]])
    frames = quad_frames(qm)
    seeds = seed_points_with_offsets(qm, frames, params.overlap_level)
    ps = extract_patch_set(dense_plane_cloud, seeds, params, threads=2)
    assert len(ps) == 5
    assert [p.seed_id for p in ps.patches] == list(range(5))
    assert np.allclose(ps.origins, seeds.points)
    H, M = ps.signal_matrix()
    assert H.shape == M.shape == (64, 5)
    cloud = reconstruct_point_cloud(ps)
    assert len(cloud) == int(M.sum())
    assert np.abs(cloud.points[:, 2]).max() < 1e-12


def test_vertex_bin_map_and_reconstruction(params):
    donor = grid_plane(11, 0.2)
    qm = QuadMesh([[0, 0, 0], [0.2, 0, 0], [0.2, 0.2, 0], [0, 0.2, 0]], [[0, 1, 2, 3]])
    seeds = seed_points_with_offsets(qm, quad_frames(qm), 1)
    vbm = build_vertex_bin_map(donor, seeds, params)
    assert np.all(np.diff(vbm.vertex) >= 0)
    assert vbm.n_vertices == donor.n_vertices
    centre = 5 * 11 + 5
    assert any(p == 0 and b in (27, 28, 35, 36) for p, b in vbm.pairs(centre))
    assert vbm.patch_counts()[centre] == 5

    flat = patch_set_from_codes(params, seeds.points, seeds.rotations, [np.zeros(64)] * len(seeds))
    rebuilt = reconstruct_mesh(flat, vbm, donor.faces, reference_positions=donor.vertices)
    assert np.array_equal(rebuilt.faces, donor.faces)
    assert np.abs(rebuilt.vertices[:, 2]).max() < 1e-12
    seen = vbm.patch_counts() > 0
    assert np.abs(rebuilt.vertices[seen] - donor.vertices[seen]).max() <= params.bin_size


def test_reconstruction_keeps_pinned_vertices(params):
    donor = grid_plane(11, 0.2)
    qm = QuadMesh([[0, 0, 0], [0.2, 0, 0], [0.2, 0.2, 0], [0, 0.2, 0]], [[0, 1, 2, 3]])
    seeds = seed_points_with_offsets(qm, quad_frames(qm), 0)
    vbm = build_vertex_bin_map(donor, seeds, params)
    lifted = patch_set_from_codes(params, seeds.points, seeds.rotations, [np.full(64, 0.01)])
    keep = np.zeros(donor.n_vertices, dtype=bool)
    keep[:11] = True
    out = reconstruct_mesh(lifted, vbm, donor.faces, keep=keep, reference_positions=donor.vertices)
    assert np.array_equal(out.vertices[keep], donor.vertices[keep])
    seen = (vbm.patch_counts() > 0) & ~keep
    assert seen.any()
    assert np.allclose(out.vertices[seen, 2], 0.01)


def test_ring_fill():
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [9, 9, 9]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    resolved = np.array([True, True, True, False, False])
    out = ring_fill(V, resolved, faces, fallback=V)
    assert np.allclose(out[3], (V[0] + V[2]) / 2)
    assert np.allclose(out[4], V[4])

    two = np.array([[0, 1, 2], [3, 4, 5]])
    X = np.zeros((6, 3))
    with pytest.raises(ReconstructionError) as info:
        ring_fill(X, np.array([True, False, False, False, False, False]), two)
    assert info.value.component == 1


def test_ring_fill_layers():
    strip = grid_plane(5, 1.0)
    resolved = np.zeros(25, dtype=bool)
    resolved[:5] = True
    X = np.where(resolved[:, None], strip.vertices, 0.0)
    out = ring_fill(X, resolved, strip.faces)
    assert np.allclose(out[:, 2], 0.0)
    assert np.all(np.isfinite(out))


def test_pset_round_trip(tmp_path, params, dense_plane_cloud):
    qm = QuadMesh([[0.4, 0.4, 0], [0.5, 0.4, 0], [0.5, 0.5, 0], [0.4, 0.5, 0]], [[0, 1, 2, 3]])
    seeds = seed_points_with_offsets(qm, quad_frames(qm), 1)
    ps = extract_patch_set(dense_plane_cloud, seeds, params)
    ps = ps.with_heights(np.random.default_rng(0).normal(size=(64, 5)))
    path = tmp_path / "patches.pset"
    save_patch_set(ps, path)
    loaded = load_patch_set(path, overlap_level=1)
    assert loaded.params == ps.params
    H0, M0 = ps.signal_matrix()
    H1, M1 = loaded.signal_matrix()
    assert np.array_equal(M0, M1)
    assert np.allclose(H0, H1, atol=1e-6)
    assert np.array_equal(loaded.origins, ps.origins)
    assert np.array_equal(loaded.rotations, ps.rotations)
    assert load_patch_set(path).params.overlap_level == 0


def test_pset_rejects_damaged_files(tmp_path, params):
    ps = patch_set_from_codes(params, np.zeros((2, 3)), np.stack([np.eye(3)] * 2), [np.zeros(64)] * 2)
    path = tmp_path / "patches.pset"
    save_patch_set(ps, path)
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(DictionaryFormatError):
        load_patch_set(path)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(DictionaryFormatError):
        load_patch_set(path)


def test_patch_set_requires_rigid_settings(params):
    with pytest.raises(ValueError):
        PatchSet(params, [Patch(np.zeros(64), np.ones(64, dtype=bool))], np.zeros((1, 3)), 2 * np.eye(3)[None])
    with pytest.raises(ValueError):
        PatchSet(params, [], np.zeros((1, 3)), np.eye(3)[None])


def test_empty_cloud_gives_empty_patches(params):
    qm = QuadMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2, 3]])
    seeds = seed_points_with_offsets(qm, quad_frames(qm), 0)
    ps = extract_patch_set(PointCloud(np.zeros((0, 3))), seeds, params)
    assert not ps.patches[0].mask.any()


def test_reconstruct_mesh_without_estimates_needs_a_resolved_vertex(params):
    donor = Mesh([[5, 5, 5], [6, 5, 5], [5, 6, 5]], [[0, 1, 2]])
    qm = QuadMesh([[0, 0, 0], [0.1, 0, 0], [0.1, 0.1, 0], [0, 0.1, 0]], [[0, 1, 2, 3]])
    seeds = seed_points_with_offsets(qm, quad_frames(qm), 0)
    vbm = build_vertex_bin_map(donor, seeds, params)
    assert len(vbm) == 0
    flat = patch_set_from_codes(params, seeds.points, seeds.rotations, [np.zeros(64)])
    with pytest.raises(ReconstructionError):
        reconstruct_mesh(flat, vbm, donor.faces)
