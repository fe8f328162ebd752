"""Procedural meshes and analytic occupancy functions used by tests,
experiment scripts, and the synthetic training corpora."""
from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh, normalize_to_unit_cube

_PHI = (1.0 + 5.0 ** 0.5) / 2.0

_ICO_VERTS = np.array([
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
], dtype=np.float64)

_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(subdivisions: int = 3, radius: float = 0.3) -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere of the given radius."""
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = list(_ICO_FACES)
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                idx = len(verts) - 1
                midpoint[key] = idx
            return idx

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    return TriangleMesh(np.array(verts) * radius, np.array(faces, dtype=np.int32))


def ellipsoid(axes=(0.3, 0.25, 0.2), subdivisions: int = 3) -> TriangleMesh:
    """Icosphere scaled anisotropically; ``axes`` are the semi-axis lengths."""
    base = icosphere(subdivisions, radius=1.0)
    return TriangleMesh(base.vertices * np.asarray(axes, dtype=np.float64), base.triangles)


def box(half_extents=(0.3, 0.3, 0.3)) -> TriangleMesh:
    h = np.asarray(half_extents, dtype=np.float64)
    corners = np.array([(x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                       dtype=np.float64) * h
    # 12 triangles, outward-oriented
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # -x, +x
        (0, 4, 5, 1), (2, 3, 7, 6),  # -y, +y
        (0, 2, 6, 4), (1, 5, 7, 3),  # -z, +z
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(corners, np.array(tris, dtype=np.int32))


def torus(major: float = 0.3, minor: float = 0.12, n_major: int = 48,
          n_minor: int = 24) -> TriangleMesh:
    u = np.arange(n_major) * (2 * np.pi / n_major)
    v = np.arange(n_minor) * (2 * np.pi / n_minor)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    r = major + minor * np.cos(vv)
    verts = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(vv)], axis=-1)
    verts = verts.reshape(-1, 3)
    tris = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.array(tris, dtype=np.int32))


# -- analytic occupancy oracles -------------------------------------------
def sphere_occupancy(points: np.ndarray, radius: float = 0.3, center=(0, 0, 0)) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return (np.linalg.norm(p, axis=-1) < radius).astype(np.uint8)


def ellipsoid_occupancy(points: np.ndarray, axes=(0.3, 0.25, 0.2)) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64) / np.asarray(axes, dtype=np.float64)
    return (np.einsum("...i,...i->...", p, p) < 1.0).astype(np.uint8)


def box_occupancy(points: np.ndarray, half_extents=(0.3, 0.3, 0.3)) -> np.ndarray:
    p = np.abs(np.asarray(points, dtype=np.float64))
    return np.all(p < np.asarray(half_extents, dtype=np.float64), axis=-1).astype(np.uint8)


def torus_occupancy(points: np.ndarray, major: float = 0.3, minor: float = 0.12) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    ring = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2) - major
    return (ring ** 2 + p[..., 2] ** 2 < minor ** 2).astype(np.uint8)


# -- corpora ---------------------------------------------------------------
def random_ellipsoid_axes(n: int, lo: float = 0.25, hi: float = 0.35,
                          seed: int = 0) -> np.ndarray:
    """(n, 3) semi-axes drawn uniformly from [lo, hi]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(n, 3))


def ellipsoid_family(n: int, lo: float = 0.25, hi: float = 0.35, seed: int = 0,
                     subdivisions: int = 3) -> list[TriangleMesh]:
    return [ellipsoid(a, subdivisions=subdivisions)
            for a in random_ellipsoid_axes(n, lo, hi, seed)]


def pulsating_sphere_frames(n_frames: int = 16, base: float = 0.28,
                            amplitude: float = 0.07,
                            subdivisions: int = 3) -> list[TriangleMesh]:
    """Sphere whose radius swings sinusoidally over the animation; frame t of
    n maps to phase 2*pi*t/(n-1)."""
    radii = pulsating_sphere_radii(n_frames, base, amplitude)
    return [icosphere(subdivisions, radius=r) for r in radii]


def pulsating_sphere_radii(n_frames: int = 16, base: float = 0.28,
                           amplitude: float = 0.07) -> np.ndarray:
    if n_frames == 1:
        return np.array([base])
    phase = np.linspace(0.0, 2 * np.pi, n_frames)
    return base + amplitude * np.sin(phase)


def normalized(mesh: TriangleMesh) -> TriangleMesh:
    return normalize_to_unit_cube(mesh)
