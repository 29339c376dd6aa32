"""
Deterministic synthetic meshes for tests, studies and the ``fixture`` command.
"""

import math
from typing import Dict, Tuple

import numpy as np

from mesh_core import Mesh, midpoint_subdivide


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    """
    Subdivided icosahedron projected on a sphere.

    Examples:
        >>> icosphere(0).n_vertices, icosphere(1).n_vertices
        (12, 42)
    """
    t = (1.0 + math.sqrt(5.0)) / 2.0
    V = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    F = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    mesh = Mesh(V / np.linalg.norm(V, axis=1, keepdims=True), F)
    for _ in range(subdivisions):
        mesh = midpoint_subdivide(mesh)
        mesh = mesh.with_vertices(mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True))
    return mesh.with_vertices(mesh.vertices * radius)


def displacement(directions: np.ndarray, amplitude: float, frequency: float) -> np.ndarray:
    """Radial offset of the displaced sphere along unit directions."""
    u = np.asarray(directions, dtype=np.float64)
    return amplitude * np.sin(frequency * u[:, 0]) * np.sin(frequency * u[:, 1]) * np.sin(frequency * u[:, 2])


def displaced_sphere(radius: float = 0.4, amplitude: float = 0.01, frequency: float = 8.0,
                     subdivisions: int = 5) -> Mesh:
    """Sphere with a smooth sinusoidal radial displacement."""
    base = icosphere(subdivisions)
    u = base.vertices
    r = radius + displacement(u, amplitude, frequency)
    return base.with_vertices(u * r[:, None])


def grid_plane(n: int = 41, size: float = 1.0) -> Mesh:
    """n x n vertices on [0, size]^2 at z = 0, faces facing +z."""
    if n < 2:
        raise ValueError("need at least 2 vertices per side")
    s = np.linspace(0.0, size, n)
    xs, ys = np.meshgrid(s, s)
    V = np.column_stack([xs.reshape(-1), ys.reshape(-1), np.zeros(n * n)])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    a = (j * n + i).reshape(-1)
    b, c, d = a + 1, a + n + 1, a + n
    F = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return Mesh(V, F)


def _grid_faces(n: int, offset: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    a = (j * n + i).reshape(-1) + offset
    b, c, d = a + 1, a + n + 1, a + n
    return np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])


def cube_surface(n: int = 17, size: float = 1.0) -> Mesh:
    """Closed axis-aligned cube centred at the origin, n x n vertices per face, outward faces."""
    s = np.linspace(-size / 2, size / 2, n)
    u, v = np.meshgrid(s, s)
    u, v = u.reshape(-1), v.reshape(-1)
    h = np.full_like(u, size / 2)
    sides = [
        np.column_stack([u, v, h]), np.column_stack([v, u, -h]),
        np.column_stack([h, u, v]), np.column_stack([-h, v, u]),
        np.column_stack([v, h, u]), np.column_stack([u, -h, v]),
    ]
    V = np.vstack(sides)
    F = np.vstack([_grid_faces(n, k * n * n) for k in range(len(sides))])
    # weld the shared border vertices of neighbouring faces
    key = np.round(2.0 * V / (size / (n - 1))).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty(len(first), dtype=np.int64)
    remap[order] = np.arange(len(first))
    return Mesh(V[first[order]], remap[inverse.reshape(-1)][F])


def periodic_surface(n: int = 81, size: float = 1.0, period: float = 0.125, amplitude: float = 0.01) -> Mesh:
    """Plane with a tiled bump pattern repeating every ``period``."""
    plane = grid_plane(n, size)
    x, y = plane.vertices[:, 0], plane.vertices[:, 1]
    z = amplitude * np.sin(2 * np.pi * x / period) * np.cos(2 * np.pi * y / period)
    return plane.with_vertices(np.column_stack([x, y, z]))


def bumpy_noise(mesh: Mesh, sigma: float = 0.005, seed: int = 0) -> Mesh:
    """Gaussian noise of std ``sigma`` along the vertex normals."""
    rng = np.random.default_rng(seed)
    offset = rng.normal(0.0, sigma, mesh.n_vertices)
    return mesh.with_vertices(mesh.vertices + offset[:, None] * mesh.vertex_normals)


def rigid_motion(mesh: Mesh, angle: float = 0.7, axis: Tuple[float, float, float] = (1.0, 2.0, 3.0),
                 shift: Tuple[float, float, float] = (0.1, -0.2, 0.05)) -> Mesh:
    """Rotate about ``axis`` (Rodrigues) and translate."""
    k = np.asarray(axis, dtype=np.float64)
    k /= np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K
    return mesh.with_vertices(mesh.vertices @ R.T + np.asarray(shift))


FIXTURES = {
    "displaced-sphere": lambda: displaced_sphere(),
    "sphere": lambda: icosphere(5, radius=0.4),
    "plane": lambda: grid_plane(81, 1.0),
    "cube": lambda: cube_surface(41, 0.8),
    "periodic": lambda: periodic_surface(),
}


def build_fixture(name: str) -> Mesh:
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture '{name}', expected one of {sorted(FIXTURES)}")
    return FIXTURES[name]()


def synthetic_corpus() -> Dict[str, Mesh]:
    """Three small shapes used by the global-dictionary studies."""
    return {
        "displaced-sphere": displaced_sphere(subdivisions=4),
        "bumpy-sphere": displaced_sphere(radius=0.38, amplitude=0.015, frequency=6.0, subdivisions=4),
        "cube": cube_surface(25, 0.7),
    }
