import numpy as np
import pytest

from fixtures import (
    FIXTURES,
    build_fixture,
    bumpy_noise,
    cube_surface,
    displaced_sphere,
    grid_plane,
    icosphere,
    rigid_motion,
)


@pytest.mark.parametrize("level, vertices, faces", [(0, 12, 20), (1, 42, 80), (2, 162, 320)])
def test_icosphere_counts(level, vertices, faces):
    mesh = icosphere(level)
    assert (mesh.n_vertices, mesh.n_faces) == (vertices, faces)
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0)
    assert len(mesh.boundary_edges()) == 0


def test_displaced_sphere_radii():
    mesh = displaced_sphere(subdivisions=3)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert radii.min() >= 0.39 - 1e-9 and radii.max() <= 0.41 + 1e-9
    assert radii.std() > 0


def test_cube_is_closed():
    cube = cube_surface(5, 1.0)
    assert len(cube.boundary_edges()) == 0
    assert len(cube.non_manifold_edges()) == 0
    assert np.abs(cube.vertices).max() == pytest.approx(0.5)


def test_noise_and_motion_are_deterministic():
    plane = grid_plane(11)
    a, b = bumpy_noise(plane, 0.01, seed=4), bumpy_noise(plane, 0.01, seed=4)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.allclose(a.vertices[:, :2], plane.vertices[:, :2])
    moved = rigid_motion(plane)
    assert np.allclose(moved.edges, plane.edges)
    assert moved.surface_area == pytest.approx(plane.surface_area)


def test_build_fixture():
    assert set(FIXTURES) == {"displaced-sphere", "sphere", "plane", "cube", "periodic"}
    assert build_fixture("plane").n_vertices == 81 * 81
    with pytest.raises(ValueError):
        build_fixture("teapot")
