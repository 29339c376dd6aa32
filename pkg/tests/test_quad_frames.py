import numpy as np
import pytest

from errors import GeometryError, MeshFormatError, NonManifoldError, QuadrangulationError
from fixtures import cube_surface, grid_plane, icosphere, rigid_motion
from quad_frames import (
    QuadMesh,
    ReferenceFrame,
    export_frames,
    export_quad_mesh,
    import_quad_mesh,
    quad_frames,
    quadrangulate,
    seed_points_with_offsets,
    seed_set_from_frames,
    subdivide_quad_mesh,
    validate_quad_mesh,
)


@pytest.fixture
def strip():
    """Two unit quads side by side; the second starts at a different corner."""
    V = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0], [1, 1, 0], [2, 1, 0]]
    return QuadMesh(V, [[0, 1, 4, 3], [2, 5, 4, 1]])


def test_quad_mesh_helpers(strip):
    assert strip.n_quads == 2
    assert strip.adjacency.tolist() == [[-1, 1, -1, -1], [-1, -1, 0, -1]]
    assert np.allclose(strip.centroids, [[0.5, 0.5, 0], [1.5, 0.5, 0]])
    assert np.allclose(strip.newell_normals, [[0, 0, 1], [0, 0, 1]])
    assert strip.mean_edge_length() == pytest.approx(1.0)
    assert strip.entity_count() == 4 * 2 + 6
    assert validate_quad_mesh(strip, target_length=1.0) == []


def test_quad_mesh_rejects_bad_indices():
    with pytest.raises(GeometryError):
        QuadMesh([[0, 0, 0]], [[0, 1, 2, 3]])


def test_validation_flags_problems():
    bent = QuadMesh([[0, 0, 0.5], [1, 0, -0.5], [1, 1, 0.5], [0, 1, -0.5]], [[0, 1, 2, 3]])
    assert any("not planar" in p for p in validate_quad_mesh(bent))
    assert any("within 30%" in p for p in validate_quad_mesh(bent, target_length=3.0))


def test_frames_are_aligned_across_quads(strip):
    frames = quad_frames(strip)
    assert np.allclose(frames[0].rotation, np.eye(3))
    assert np.allclose(frames[1].rotation[0], [1, 0, 0])
    assert np.allclose(frames[1].rotation[2], [0, 0, 1])
    assert np.allclose(frames[1].origin, [1.5, 0.5, 0])
    for f in frames:
        assert np.linalg.det(f.rotation) == pytest.approx(1.0)


def test_frames_follow_root_quad(strip):
    frames = quad_frames(strip, root_quad=1)
    assert np.allclose(frames[1].rotation[0], [0, 1, 0])
    assert np.allclose(frames[0].rotation[0], [0, 1, 0])


def test_reference_frame_round_trip():
    with pytest.raises(GeometryError):
        ReferenceFrame([0, 0, 0], np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(GeometryError):
        ReferenceFrame([0, 0, 0], 2 * np.eye(3))
    c, s = np.cos(0.3), np.sin(0.3)
    frame = ReferenceFrame([1, 2, 3], [[c, -s, 0], [s, c, 0], [0, 0, 1]])
    pts = np.random.default_rng(0).normal(size=(5, 3))
    assert np.allclose(frame.to_global(frame.to_local(pts)), pts)
    homogeneous = np.column_stack([pts, np.ones(5)]) @ frame.transform.T
    assert np.allclose(homogeneous[:, :3], frame.to_local(pts))


def test_offset_seeds(strip):
    frames = quad_frames(strip)
    seeds = seed_points_with_offsets(strip, frames, overlap_level=1)
    assert len(seeds) == 10
    assert seeds.offset_ids.tolist() == [0, 1, 2, 3, 4] * 2
    assert seeds.quad_ids.tolist() == [0] * 5 + [1] * 5
    expected = [[0.5, 0.5, 0], [0.75, 0.5, 0], [0.5, 0.75, 0], [0.25, 0.5, 0], [0.5, 0.25, 0]]
    assert np.allclose(seeds.points[:5], expected)
    assert np.allclose(seeds.rotations[3], frames[0].rotation)

    two = seed_points_with_offsets(strip, frames, overlap_level=2)
    assert len(two) == 2 * 9
    assert np.allclose(two.points[1], [0.5 + 0.5 / 3, 0.5, 0])
    assert np.allclose(two.points[5], [0.5 + 1.0 / 3, 0.5, 0])

    centres = seed_set_from_frames(frames)
    assert np.allclose(centres.points, seeds.points[seeds.offset_ids == 0])
    assert centres.frame(1).rotation.tolist() == frames[1].rotation.tolist()


def test_subdivision_shares_edge_vertices(strip):
    single = QuadMesh(strip.vertices, strip.quads[:1])
    fine = subdivide_quad_mesh(single, 2)
    assert (fine.n_vertices, fine.n_faces) == (25, 32)
    both = subdivide_quad_mesh(strip, 1)
    assert (both.n_vertices, both.n_faces) == (15, 16)
    assert len(both.non_manifold_edges()) == 0
    assert np.allclose(both.face_normals, [0, 0, 1])
    assert subdivide_quad_mesh(strip, 0).n_faces == 4


def test_quad_file_round_trip(tmp_path, strip):
    export_quad_mesh(strip, tmp_path / "quads.obj")
    again = import_quad_mesh(tmp_path / "quads.obj")
    assert np.array_equal(again.quads, strip.quads)
    assert np.allclose(again.vertices, strip.vertices)
    export_frames(quad_frames(strip), tmp_path / "frames.txt")
    table = np.loadtxt(tmp_path / "frames.txt")
    assert table.shape == (2, 13)


def test_import_rejects_triangles_and_non_manifold(tmp_path):
    path = tmp_path / "mixed.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\nf 1 2 3\n")
    with pytest.raises(MeshFormatError, match="face 1"):
        import_quad_mesh(path)
    fan = tmp_path / "fan.obj"
    fan.write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 2 0 0\nv 2 1 0\nv 1 -1 0\nv 0 -1 0\n"
        "f 1 2 3 4\nf 2 5 6 3\nf 2 3 7 8\n"
    )
    with pytest.raises(NonManifoldError):
        import_quad_mesh(fan)


def test_quadrangulate_plane():
    plane = grid_plane(41, 1.0)
    qm = quadrangulate(plane, 0.1)
    assert 81 <= qm.n_quads <= 100
    assert validate_quad_mesh(qm, target_length=0.1) == []
    assert np.allclose(qm.vertices[:, 2], 0.0)
    normals = qm.newell_normals
    assert np.all(normals[:, 2] > 0)


def test_quadrangulate_is_rigid_invariant_in_count():
    plane = grid_plane(41, 1.0)
    moved = rigid_motion(plane, angle=0.5, axis=(1.0, 0.0, 0.0), shift=(0.3, 0.1, 0.05))
    a = quadrangulate(plane, 0.1)
    b = quadrangulate(moved, 0.1)
    assert validate_quad_mesh(b, target_length=0.1) == []
    assert abs(a.n_quads - b.n_quads) <= 0.2 * a.n_quads


def test_quadrangulate_cube_follows_creases():
    cube = cube_surface(41, 1.0)
    qm = quadrangulate(cube, 0.25)
    # 6 faces of 4 x 4 cells
    assert 90 <= qm.n_quads <= 100
    assert validate_quad_mesh(qm, target_length=0.25) == []
    assert np.allclose(np.abs(qm.vertices).max(axis=1), 0.5, atol=1e-6)
    corners = qm.corners
    on_one_face = (np.abs(np.abs(corners) - 0.5) < 1e-6).all(axis=1).any(axis=1)
    assert on_one_face.all()
    outward = np.einsum("ij,ij->i", qm.newell_normals, qm.centroids)
    assert np.all(outward > 0)


def test_quadrangulate_sphere():
    sphere = icosphere(4, 0.4)
    h = 0.1
    qm = quadrangulate(sphere, h)
    expected = sphere.surface_area / (h * h)
    assert 0.4 * expected <= qm.n_quads <= 1.3 * expected
    assert validate_quad_mesh(qm, target_length=h) == []
    assert np.allclose(np.linalg.norm(qm.vertices, axis=1), 0.4, atol=5e-3)
    outward = np.einsum("ij,ij->i", qm.newell_normals, qm.centroids)
    assert np.all(outward > 0)


def test_quadrangulate_rejects_bad_length():
    plane = grid_plane(11)
    with pytest.raises(QuadrangulationError):
        quadrangulate(plane, 0.0)
    with pytest.raises(QuadrangulationError):
        quadrangulate(plane, 1.0)
