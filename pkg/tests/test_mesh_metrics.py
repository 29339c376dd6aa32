import numpy as np
import pytest

from errors import InsufficientDataError, MeshFormatError
from fixtures import grid_plane, icosphere
from mesh_metrics import (
    PSNR_CAP_DB,
    MetricsReport,
    PointMeshIndex,
    closest_points_on_triangles,
    cloud_to_mesh_error,
    global_reconstruction_error,
    load_removed_vertices,
    mark_missing_vertices,
    mesh_entities,
    psnr,
    punch_holes,
    rmse,
    sample_surface_points,
)


def _brute_force(points, mesh):
    tri = mesh.vertices[mesh.faces]
    best = np.full(len(points), np.inf)
    for p_i, p in enumerate(points):
        P = np.repeat(p[None], len(tri), axis=0)
        cp = closest_points_on_triangles(P, tri[:, 0], tri[:, 1], tri[:, 2])
        best[p_i] = np.linalg.norm(P - cp, axis=1).min()
    return best


def test_closest_point_regions():
    a, b, c = np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]]), np.array([[0.0, 1, 0]])
    cases = {
        (0.2, 0.2, 1.0): (0.2, 0.2, 0.0),   # interior
        (-1.0, -1.0, 0.0): (0.0, 0.0, 0.0),  # vertex a
        (2.0, -0.5, 0.0): (1.0, 0.0, 0.0),   # vertex b
        (0.5, -1.0, 0.0): (0.5, 0.0, 0.0),   # edge ab
        (1.0, 1.0, 0.0): (0.5, 0.5, 0.0),    # edge bc
    }
    for p, expected in cases.items():
        got = closest_points_on_triangles(np.array([p]), a, b, c)[0]
        assert np.allclose(got, expected)


def test_index_matches_brute_force(rng):
    mesh = icosphere(2)
    points = rng.normal(size=(60, 3)) * 0.8
    dist, closest, face = PointMeshIndex(mesh, chunk=16).query(points)
    assert np.allclose(dist, _brute_force(points, mesh))
    tri = mesh.vertices[mesh.faces[face]]
    check = closest_points_on_triangles(points, tri[:, 0], tri[:, 1], tri[:, 2])
    assert np.allclose(check, closest)


def test_sampling_is_deterministic_and_on_surface():
    mesh = icosphere(2)
    a = sample_surface_points(mesh, 2000.0, seed=5)
    b = sample_surface_points(mesh, 2000.0, seed=5)
    assert np.array_equal(a.points, b.points)
    assert abs(len(a) - mesh.surface_area * 2000.0) < 0.05 * mesh.surface_area * 2000.0
    assert cloud_to_mesh_error(a, mesh) < 1e-12
    masked = sample_surface_points(mesh, 2000.0, face_mask=np.arange(mesh.n_faces) < 10)
    assert masked.source_face.max() < 10


def test_empty_cloud_is_a_data_error():
    with pytest.raises(InsufficientDataError):
        cloud_to_mesh_error(np.zeros((0, 3)), grid_plane(11))


def test_errors_and_psnr():
    plane = grid_plane(11)
    assert global_reconstruction_error(plane, plane) < 1e-12
    assert psnr(plane, plane) == PSNR_CAP_DB
    lifted = plane.with_vertices(plane.vertices + [0.0, 0.0, 0.01])
    assert global_reconstruction_error(lifted, plane) == pytest.approx(0.01)
    expected = 20 * np.log10(plane.bbox_diameter() / 0.01)
    assert psnr(lifted, plane) == pytest.approx(expected, rel=1e-6)
    assert rmse(np.zeros((2, 3)), np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 5.0]])) == pytest.approx(5.0)


def test_punch_holes_and_truth_file(tmp_path):
    mesh = icosphere(3)
    damaged, truth = punch_holes(mesh, hole_diameter=0.3, spacing=1.0, seed=2)
    assert len(truth.centers) >= 2
    assert damaged.n_vertices + len(truth.indices) == mesh.n_vertices
    assert np.array_equal(mesh.vertices[truth.kept_indices], damaged.vertices)
    assert len(damaged.boundary_edges()) > 0
    assert damaged.connected_components()[0] == 1
    truth.save(tmp_path / "removed.txt")
    indices, positions = load_removed_vertices(tmp_path / "removed.txt")
    assert np.array_equal(indices, truth.indices)
    assert np.allclose(positions, truth.positions)


def test_punch_holes_rejects_oversized_holes():
    with pytest.raises(ValueError):
        punch_holes(icosphere(2), hole_diameter=0.5, spacing=1.0, patch_length=0.2)
    with pytest.raises(ValueError):
        punch_holes(icosphere(2), hole_diameter=0.5, spacing=0.4)


def test_bad_truth_file(tmp_path):
    path = tmp_path / "removed.txt"
    path.write_text("3 0.1 0.2 0.3\n4 0.1 0.2\n")
    with pytest.raises(MeshFormatError) as info:
        load_removed_vertices(path)
    assert info.value.line == 2


def test_mark_missing_vertices():
    mesh = grid_plane(10)
    flagged = mark_missing_vertices(mesh, 0.2, seed=3)
    assert (~flagged.valid).sum() == 20
    again = mark_missing_vertices(mesh, 0.2, seed=3)
    assert np.array_equal(flagged.valid, again.valid)
    assert mark_missing_vertices(mesh, 0.0).valid.all()


def test_report_row():
    mesh = grid_plane(3)
    assert mesh_entities(mesh) == 3 * 8 + 9
    row = MetricsReport(mean_distance=0.1, patches=4, extra={"holes": 2}).to_dict()
    assert row["mean_distance"] == 0.1
    assert row["holes"] == 2
    assert "extra" not in row
