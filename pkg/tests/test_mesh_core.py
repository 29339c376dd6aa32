import numpy as np
import pytest

from errors import GeometryError, MeshFormatError
from fixtures import cube_surface, grid_plane, icosphere
from mesh_core import (
    Mesh,
    NormalizationRecord,
    PointCloud,
    invert_normalization,
    laplacian_smooth,
    load_mesh,
    midpoint_subdivide,
    normalize_unit_cube,
    quadric_edge_collapse,
    resample_to_resolution,
    save_mesh,
)


def test_mesh_validation():
    with pytest.raises(GeometryError):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    with pytest.raises(GeometryError):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])
    with pytest.raises(GeometryError):
        Mesh([[0, 0, np.nan]], np.zeros((0, 3)))
    mesh = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


def test_connectivity_helpers(sphere):
    assert len(sphere.boundary_edges()) == 0
    assert len(sphere.non_manifold_edges()) == 0
    assert len(sphere.edges) == 3 * sphere.n_faces // 2
    count, labels = sphere.connected_components()
    assert count == 1
    assert sorted(sphere.vertex_neighbors(0).tolist()) == sorted(set(
        sphere.faces[(sphere.faces == 0).any(axis=1)].reshape(-1).tolist()) - {0})
    assert np.allclose(np.linalg.norm(sphere.vertex_normals, axis=1), 1.0)
    # outward normals on a unit sphere
    assert np.all(np.einsum("ij,ij->i", sphere.vertex_normals, sphere.vertices) > 0.9)


def test_plane_geometry():
    plane = grid_plane(5, 2.0)
    assert plane.surface_area == pytest.approx(4.0)
    assert np.allclose(plane.face_normals, [0, 0, 1])
    assert plane.boundary_vertex_mask.sum() == 16
    assert plane.bbox_diameter() == pytest.approx(2 * 2 ** 0.5)


def test_obj_roundtrip_and_polygon_fan(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n")
    mesh = load_mesh(path)
    assert mesh.n_vertices == 4
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]
    out = tmp_path / "copy.obj"
    save_mesh(mesh, out)
    again = load_mesh(out)
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.faces, mesh.faces)


def test_ply_keeps_validity_flags(tmp_path):
    mesh = grid_plane(4).with_valid(np.arange(16) % 3 != 0)
    path = tmp_path / "flags.ply"
    save_mesh(mesh, path)
    loaded = load_mesh(path)
    assert np.array_equal(loaded.valid, mesh.valid)
    assert np.allclose(loaded.vertices, mesh.vertices)


def test_unreferenced_vertices_are_kept(tmp_path):
    path = tmp_path / "loose.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 5 5\nf 1 2 3\n")
    assert load_mesh(path).n_vertices == 4


@pytest.mark.parametrize("body, line", [
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n", 4),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 0\n", 4),
    ("v 0 0 0\nv 1 0\nv 0 1 0\nf 1 2 3\n", 2),
    ("v 0 0 0\nv 1 0 0\nl 1 2\n", 3),
])
def test_malformed_obj_reports_line(tmp_path, body, line):
    path = tmp_path / "bad.obj"
    path.write_text(body)
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.line == line


def test_unsupported_format_and_missing_file(tmp_path):
    with pytest.raises(MeshFormatError):
        load_mesh(tmp_path / "mesh.stl")
    with pytest.raises(MeshFormatError):
        load_mesh(tmp_path / "absent.obj")


def test_normalize_and_invert(tmp_path):
    mesh = icosphere(1, radius=3.0).with_vertices(icosphere(1, radius=3.0).vertices + [10.0, -2.0, 5.0])
    normalized, record = normalize_unit_cube(mesh)
    lo, hi = normalized.bbox()
    assert lo.min() >= -1e-12 and hi.max() <= 1 + 1e-12
    assert (hi - lo).max() == pytest.approx(1.0)
    record.save(tmp_path / "norm.json")
    restored = invert_normalization(normalized, NormalizationRecord.load(tmp_path / "norm.json"))
    assert np.allclose(restored.vertices, mesh.vertices)


def test_midpoint_subdivide_counts():
    base = icosphere(0)
    fine = midpoint_subdivide(base)
    assert (fine.n_vertices, fine.n_faces) == (42, 80)
    assert len(fine.boundary_edges()) == 0


def test_quadric_collapse_keeps_closed_surface():
    mesh = icosphere(3)
    out = quadric_edge_collapse(mesh, 300, show_progress=False)
    assert out.n_vertices <= 330
    assert len(out.boundary_edges()) == 0
    assert len(out.non_manifold_edges()) == 0
    assert np.abs(np.linalg.norm(out.vertices, axis=1) - 1.0).max() < 0.1


def test_quadric_collapse_preserves_open_border():
    plane = grid_plane(11)
    out = quadric_edge_collapse(plane, 60, show_progress=False)
    assert len(out.boundary_edges()) == len(plane.boundary_edges())
    assert np.allclose(out.vertices[:, 2], 0.0)


def test_resample_to_resolution():
    up = resample_to_resolution(icosphere(1), 600, show_progress=False)
    assert 0.9 * 600 <= up.n_vertices
    down = resample_to_resolution(icosphere(4), 500, show_progress=False)
    assert down.n_vertices <= 1.1 * 500


def test_laplacian_smooth():
    plane = grid_plane(9)
    noisy = plane.with_vertices(plane.vertices + np.random.default_rng(0).normal(0, 0.01, (81, 3)))
    smooth = laplacian_smooth(noisy, 10)
    border = plane.boundary_vertex_mask
    assert np.array_equal(smooth.vertices[border], noisy.vertices[border])
    assert np.abs(smooth.vertices[~border, 2]).mean() < np.abs(noisy.vertices[~border, 2]).mean()
    assert laplacian_smooth(noisy, 0) is noisy


def test_cube_fixture_is_closed():
    cube = cube_surface(5, 1.0)
    assert cube.n_vertices == 6 * 25 - 12 * 5 + 8
    assert len(cube.boundary_edges()) == 0
    assert np.all(np.einsum("ij,ij->i", cube.face_normals, cube.vertices[cube.faces].mean(axis=1)) > 0)


def test_point_cloud_radius_query():
    cloud = PointCloud(np.array([[0, 0, 0], [0.5, 0, 0], [2, 0, 0]], dtype=float))
    assert cloud.radius_query([0, 0, 0], 1.0).tolist() == [0, 1]
    assert PointCloud(np.zeros((0, 3))).radius_query([0, 0, 0], 1.0).tolist() == []
