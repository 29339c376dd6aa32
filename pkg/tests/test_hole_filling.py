import numpy as np
import pytest

from errors import NonManifoldError
from fixtures import grid_plane, icosphere
from hole_filling import HoleSpec, detect_holes, loop_diameter, triangulate_hole, triangulate_holes
from mesh_core import Mesh
from mesh_metrics import punch_holes


def _without_cells(n, cells):
    """grid_plane(n) with the two triangles of every listed (i, j) cell removed."""
    plane = grid_plane(n, 1.0)
    drop = set()
    for i, j in cells:
        k = j * (n - 1) + i
        drop.update({k, k + (n - 1) ** 2})
    keep = [f for f in range(plane.n_faces) if f not in drop]
    return Mesh(plane.vertices, plane.faces[keep])


def _directed_edges_unique(mesh):
    half = np.stack([mesh.faces, np.roll(mesh.faces, -1, axis=1)], axis=2).reshape(-1, 2)
    return len(np.unique(half, axis=0)) == len(half)


def test_closed_mesh_has_no_holes():
    assert len(detect_holes(icosphere(1))) == 0


def test_detects_hole_and_border():
    mesh = _without_cells(9, [(3, 3), (4, 3), (3, 4), (4, 4)])
    holes = detect_holes(mesh)
    assert len(holes) == 2
    for loop in holes.loops:
        assert loop[0] == loop.min()
    sizes = sorted(len(loop) for loop in holes.loops)
    assert sizes == [8, 32]
    inner = detect_holes(mesh, exclude_longest=True)
    assert len(inner) == 1 and len(inner.loops[0]) == 8
    assert set(inner.vertices().tolist()) == set(inner.loops[0].tolist())


def test_loop_follows_boundary_half_edges():
    mesh = _without_cells(9, [(4, 4)])
    loop = detect_holes(mesh, exclude_longest=True).loops[0]
    half = {tuple(e) for e in np.stack([mesh.faces, np.roll(mesh.faces, -1, axis=1)], axis=2).reshape(-1, 2).tolist()}
    for u, v in zip(loop, np.roll(loop, -1)):
        assert (int(u), int(v)) in half


def test_pinched_boundary_is_rejected():
    bowtie = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]], [[0, 1, 2], [0, 3, 4]])
    with pytest.raises(NonManifoldError):
        detect_holes(bowtie)


def test_hole_spec_validation():
    with pytest.raises(ValueError):
        HoleSpec([np.array([1, 2])])
    with pytest.raises(ValueError):
        HoleSpec([np.array([1, 2, 1])])


def test_planar_four_cycle_without_refinement():
    mesh = _without_cells(5, [(1, 1)])
    loop = detect_holes(mesh, exclude_longest=True).loops[0]
    assert len(loop) == 4
    closed = triangulate_hole(mesh, loop, refine=False)
    assert closed.n_vertices == mesh.n_vertices
    assert closed.n_faces == mesh.n_faces + 2
    assert len(detect_holes(closed, exclude_longest=True)) == 0
    assert _directed_edges_unique(closed)
    assert np.allclose(closed.face_normals[mesh.n_faces:], [0, 0, 1])
    assert closed.valid.all()


def test_planar_twelve_cycle_with_refinement():
    cells = [(i, j) for i in (3, 4, 5) for j in (3, 4, 5)]
    mesh = _without_cells(10, cells)
    loop = detect_holes(mesh, exclude_longest=True).loops[0]
    assert len(loop) == 12
    assert loop_diameter(mesh.vertices, loop) == pytest.approx(np.sqrt(2) * 3 / 9)
    closed = triangulate_hole(mesh, loop)
    new = np.arange(mesh.n_vertices, closed.n_vertices)
    assert len(new) >= 1
    assert not closed.valid[new].any()
    assert closed.valid[:mesh.n_vertices].all()
    assert np.allclose(closed.vertices[new, 2], 0.0)
    lo, hi = 3 / 9, 6 / 9
    assert np.all((closed.vertices[new, :2] > lo) & (closed.vertices[new, :2] < hi))
    assert len(detect_holes(closed, exclude_longest=True)) == 0
    assert len(closed.non_manifold_edges()) == 0
    assert _directed_edges_unique(closed)
    assert np.all(closed.face_normals[mesh.n_faces:, 2] > 0.99)


def test_fill_punched_sphere_closes_every_hole():
    mesh = icosphere(3)
    damaged, truth = punch_holes(mesh, hole_diameter=0.35, spacing=1.2, seed=0)
    holes = detect_holes(damaged)
    assert len(holes) == len(truth.centers)
    closed = triangulate_holes(damaged, holes)
    assert len(closed.boundary_edges()) == 0
    assert len(closed.non_manifold_edges()) == 0
    assert _directed_edges_unique(closed)
    inserted = closed.vertices[damaged.n_vertices:]
    if len(inserted):
        radii = np.linalg.norm(inserted, axis=1)
        assert np.all(radii < 1.0 + 1e-9) and np.all(radii > 0.8)
