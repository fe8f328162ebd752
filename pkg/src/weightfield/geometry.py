"""Triangle meshes: OBJ/OFF io, unit-cube normalization, generalized winding
numbers for occupancy supervision, point sampling, and marching cubes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mc_tables import CORNER_OFFSETS, CORNER_PAIRS, EDGE_TABLE, TRI_TABLE

FOUR_PI = 4.0 * math.pi


class MeshParseError(ValueError):
    """Raised for malformed OBJ/OFF content; message carries path and line number."""


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int32, indices into vertices
    name: str | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("degenerate triangle with repeated vertex indices")

    @property
    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        a, b, c = self.triangle_corners
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class LabeledPointBatch:
    points: np.ndarray  # (N, n) float32, n in {3, 4}
    labels: np.ndarray  # (N,) uint8 in {0, 1}

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.points.ndim != 2 or self.points.shape[1] not in (3, 4):
            raise ValueError(f"points must be (N, 3) or (N, 4), got {self.points.shape}")
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels length mismatch")

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


@dataclass
class ScalarFieldGrid:
    values: np.ndarray  # (nx, ny, nz) float32
    lo: np.ndarray = field(default_factory=lambda: np.full(3, -0.5))
    hi: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("grid values must be 3-dimensional")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.values.shape

    def axis_coords(self) -> list[np.ndarray]:
        return [np.linspace(self.lo[d], self.hi[d], self.values.shape[d]) for d in range(3)]


# -- file io ---------------------------------------------------------------
def load_mesh(path) -> TriangleMesh:
    """Read an OBJ (v/f lines) or OFF file; n-gon faces are fan-triangulated."""
    path = str(path)
    with open(path) as f:
        text = f.read()
    suffix = path.rsplit(".", 1)[-1].lower() if "." in path else ""
    if suffix == "off":
        return _parse_off(text, path)
    if suffix == "obj":
        return _parse_obj(text, path)
    raise MeshParseError(f"{path}: unsupported mesh format (expected .obj or .off)")


def _fan(indices: list[int]) -> list[tuple[int, int, int]]:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _parse_obj(text: str, path: str) -> TriangleMesh:
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as e:
                raise MeshParseError(f"{path}:{lineno}: bad vertex coordinate: {e}") from e
        elif parts[0] == "f":
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError as e:
                    raise MeshParseError(f"{path}:{lineno}: bad face index {token!r}") from e
                if i < 1:
                    raise MeshParseError(f"{path}:{lineno}: face indices must be positive (1-based)")
                if i > len(verts):
                    raise MeshParseError(
                        f"{path}:{lineno}: face index {i} exceeds the {len(verts)} vertices read so far")
                idx.append(i - 1)
            if len(idx) < 3:
                raise MeshParseError(f"{path}:{lineno}: face needs at least 3 vertices")
            tris.extend(_fan(idx))
        # other OBJ statements (vn, vt, o, g, s, mtllib, ...) are ignored
    try:
        return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                            np.array(tris, dtype=np.int32).reshape(-1, 3), name=path)
    except ValueError as e:
        raise MeshParseError(f"{path}: {e}") from e


def _parse_off(text: str, path: str) -> TriangleMesh:
    tokens: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        for tok in line.split():
            tokens.append((lineno, tok))
    pos = 0

    def take(what: str) -> tuple[int, str]:
        nonlocal pos
        if pos >= len(tokens):
            last = tokens[-1][0] if tokens else 0
            raise MeshParseError(f"{path}:{last}: unexpected end of file, wanted {what}")
        t = tokens[pos]
        pos += 1
        return t

    lineno, magic = take("OFF header")
    if magic != "OFF":
        raise MeshParseError(f"{path}:{lineno}: expected OFF header, got {magic!r}")
    counts = []
    for what in ("vertex count", "face count", "edge count"):
        lineno, tok = take(what)
        try:
            counts.append(int(tok))
        except ValueError as e:
            raise MeshParseError(f"{path}:{lineno}: bad {what} {tok!r}") from e
    nv, nf, _ = counts
    verts = np.empty((nv, 3), dtype=np.float64)
    for i in range(nv):
        for d in range(3):
            lineno, tok = take("vertex coordinate")
            try:
                verts[i, d] = float(tok)
            except ValueError as e:
                raise MeshParseError(f"{path}:{lineno}: bad coordinate {tok!r}") from e
    tris: list[tuple[int, int, int]] = []
    for _ in range(nf):
        lineno, tok = take("face size")
        try:
            n = int(tok)
        except ValueError as e:
            raise MeshParseError(f"{path}:{lineno}: bad face size {tok!r}") from e
        if n < 3:
            raise MeshParseError(f"{path}:{lineno}: face needs at least 3 vertices")
        idx = []
        for _ in range(n):
            lineno, tok = take("face index")
            try:
                v = int(tok)
            except ValueError as e:
                raise MeshParseError(f"{path}:{lineno}: bad face index {tok!r}") from e
            if not 0 <= v < nv:
                raise MeshParseError(f"{path}:{lineno}: face index {v} out of range for {nv} vertices")
            idx.append(v)
        tris.extend(_fan(idx))
    try:
        return TriangleMesh(verts, np.array(tris, dtype=np.int32).reshape(-1, 3), name=path)
    except ValueError as e:
        raise MeshParseError(f"{path}: {e}") from e


def save_obj(mesh: TriangleMesh, path):
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def save_off(mesh: TriangleMesh, path):
    with open(path, "w") as f:
        f.write("OFF\n")
        f.write(f"{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")


# -- normalization ---------------------------------------------------------
def normalize_to_unit_cube(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box at the origin and scale the largest extent to 1."""
    if len(mesh.vertices) == 0:
        raise ValueError("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        raise ValueError("cannot normalize a zero-extent mesh")
    center = (lo + hi) / 2.0
    return TriangleMesh((mesh.vertices - center) / extent, mesh.triangles.copy(), name=mesh.name)


# -- generalized winding numbers -------------------------------------------
def solid_angles(mesh: TriangleMesh, query) -> np.ndarray:
    """Signed solid angle each triangle subtends at a single query point."""
    q = np.asarray(query, dtype=np.float64).reshape(3)
    a, b, c = (corner - q for corner in mesh.triangle_corners)
    la = np.linalg.norm(a, axis=1)
    lb = np.linalg.norm(b, axis=1)
    lc = np.linalg.norm(c, axis=1)
    numer = np.einsum("ij,ij->i", a, np.cross(b, c))
    denom = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
             + np.einsum("ij,ij->i", b, c) * la + np.einsum("ij,ij->i", c, a) * lb)
    return 2.0 * np.arctan2(numer, denom)


def winding_number(mesh: TriangleMesh, query) -> float:
    """Van Oosterom-Strackee summation; ~1 inside and ~0 outside a closed mesh."""
    return math.fsum(solid_angles(mesh, query)) / FOUR_PI


def winding_numbers(mesh: TriangleMesh, points: np.ndarray, chunk_elems: int = 16_000_000) -> np.ndarray:
    """Winding number for each row of ``points``, vectorized in query chunks."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a0, b0, c0 = mesh.triangle_corners
    nf = max(len(mesh.triangles), 1)
    chunk = max(1, chunk_elems // nf)
    out = np.empty(len(pts), dtype=np.float64)
    for s in range(0, len(pts), chunk):
        q = pts[s:s + chunk]
        a = a0[None, :, :] - q[:, None, :]
        b = b0[None, :, :] - q[:, None, :]
        c = c0[None, :, :] - q[:, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        numer = np.einsum("qij,qij->qi", a, np.cross(b, c))
        denom = (la * lb * lc + np.einsum("qij,qij->qi", a, b) * lc
                 + np.einsum("qij,qij->qi", b, c) * la + np.einsum("qij,qij->qi", c, a) * lb)
        out[s:s + chunk] = np.arctan2(numer, denom).sum(axis=1) * (2.0 / FOUR_PI)
    return out


def occupancy_labels(mesh: TriangleMesh, points: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (winding_numbers(mesh, points) > threshold).astype(np.uint8)


# -- point sampling --------------------------------------------------------
def _surface_points(mesh: TriangleMesh, k: int, rng: np.random.Generator) -> np.ndarray:
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero surface area")
    tri = rng.choice(len(areas), size=k, p=areas / total)
    u = rng.random(k)
    v = rng.random(k)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a, b, c = mesh.triangle_corners
    return a[tri] + u[:, None] * (b[tri] - a[tri]) + v[:, None] * (c[tri] - a[tri])


def sample_surface_points(mesh: TriangleMesh, k: int = 2048, seed: int = 0) -> np.ndarray:
    """Area-weighted, barycentric-uniform surface samples, (k, 3) float64."""
    return _surface_points(mesh, k, np.random.default_rng(seed))


def _stratified_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform-density cube samples with jittered-grid stratification: one
    point per cell of the largest g^3 lattice that fits in n, the remainder
    i.i.d. Guarantees no unsupervised void larger than a couple of cells,
    which plain i.i.d. draws cannot promise at desk-scale point counts."""
    g = int(n ** (1.0 / 3.0) + 1e-9)
    parts = []
    if g >= 2:
        axes = np.arange(g, dtype=np.float64)
        cells = np.stack(np.meshgrid(axes, axes, axes, indexing="ij"), axis=-1)
        cells = cells.reshape(-1, 3)
        parts.append((cells + rng.random(cells.shape)) / g - 0.5)
    else:
        g = 0
    rest = n - g ** 3
    if rest:
        parts.append(rng.uniform(-0.5, 0.5, size=(rest, 3)))
    return np.concatenate(parts, axis=0)


def sample_supervision_3d(mesh: TriangleMesh, n_uniform: int = 100_000,
                          n_near: int = 100_000, near_sigma: float = 0.01,
                          seed: int = 0) -> LabeledPointBatch:
    """Uniform cube samples plus Gaussian-perturbed surface samples, labeled
    inside/outside by winding number > 0.5."""
    rng = np.random.default_rng(seed)
    parts = []
    if n_uniform:
        parts.append(_stratified_uniform(rng, n_uniform))
    if n_near:
        near = _surface_points(mesh, n_near, rng)
        near += rng.normal(0.0, near_sigma, size=near.shape)
        parts.append(near)
    pts = np.concatenate(parts, axis=0) if parts else np.empty((0, 3))
    pts = pts.astype(np.float32)
    # label from the stored float32 coordinates so labels are recomputable
    labels = occupancy_labels(mesh, pts.astype(np.float64))
    return LabeledPointBatch(pts, labels)


def frame_times(n_frames: int) -> np.ndarray:
    """Frame index -> time coordinate, linear over [-0.5, 0.5]; a single frame sits at -0.5."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if n_frames == 1:
        return np.array([-0.5])
    return np.linspace(-0.5, 0.5, n_frames)


def sample_supervision_4d(frames: list[TriangleMesh], n_per_frame: int = 200_000,
                          near_sigma: float = 0.01, seed: int = 0) -> LabeledPointBatch:
    """Per-frame 3D supervision (half uniform, half near-surface) with the
    frame's time coordinate appended as a 4th input dimension."""
    if not frames:
        raise ValueError("empty frame list")
    times = frame_times(len(frames))
    batches = []
    labels = []
    for t, mesh in enumerate(frames):
        n_uniform = n_per_frame // 2
        sub = sample_supervision_3d(mesh, n_uniform=n_uniform,
                                    n_near=n_per_frame - n_uniform,
                                    near_sigma=near_sigma, seed=[seed, t])
        col = np.full((len(sub.points), 1), np.float32(times[t]))
        batches.append(np.concatenate([sub.points, col], axis=1))
        labels.append(sub.labels)
    return LabeledPointBatch(np.concatenate(batches, axis=0), np.concatenate(labels))


# -- marching cubes --------------------------------------------------------
_EDGE_KEYS = []  # (axis, corner offset of the low end) per table edge
for _pa, _pb in CORNER_PAIRS:
    _da = CORNER_OFFSETS[_pa]
    _db = CORNER_OFFSETS[_pb]
    _axis = next(d for d in range(3) if _da[d] != _db[d])
    _lo = _da if _da[_axis] < _db[_axis] else _db
    _EDGE_KEYS.append((_axis, _lo))


def marching_cubes(grid: ScalarFieldGrid, iso: float) -> TriangleMesh:
    """256-case marching cubes with linear edge interpolation and welded,
    shared vertices (closed fields produce watertight surfaces)."""
    nx, ny, nz = grid.resolution
    if min(nx, ny, nz) < 2:
        raise ValueError("marching cubes needs resolution >= 2 per axis")
    vals = grid.values.astype(np.float64)
    below = vals < iso  # "below iso" corners set case bits

    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        sub = below[ox:ox + nx - 1, oy:oy + ny - 1, oz:oz + nz - 1]
        case |= sub.astype(np.uint16) << bit
    active = np.argwhere((case != 0) & (case != 255))

    spacing = [(grid.hi[d] - grid.lo[d]) / (grid.resolution[d] - 1) for d in range(3)]
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    edge_vertex: dict[tuple[int, int, int, int], int] = {}

    for i, j, k in active:
        c = int(case[i, j, k])
        crossings = EDGE_TABLE[c]
        cell_vertex = [-1] * 12
        for e in range(12):
            if not crossings & (1 << e):
                continue
            axis, lo_off = _EDGE_KEYS[e]
            li, lj, lk = i + lo_off[0], j + lo_off[1], k + lo_off[2]
            key = (axis, li, lj, lk)
            idx = edge_vertex.get(key)
            if idx is None:
                hi_idx = [li, lj, lk]
                hi_idx[axis] += 1
                va = vals[li, lj, lk]
                vb = vals[hi_idx[0], hi_idx[1], hi_idx[2]]
                s = (iso - va) / (vb - va)
                pos = [grid.lo[0] + li * spacing[0],
                       grid.lo[1] + lj * spacing[1],
                       grid.lo[2] + lk * spacing[2]]
                pos[axis] += s * spacing[axis]
                idx = len(verts)
                verts.append((pos[0], pos[1], pos[2]))
                edge_vertex[key] = idx
            cell_vertex[e] = idx
        tt = TRI_TABLE[c]
        for s in range(0, len(tt), 3):
            # table order already winds counter-clockwise seen from outside
            tri = (cell_vertex[tt[s]], cell_vertex[tt[s + 1]], cell_vertex[tt[s + 2]])
            if tri[0] != tri[1] and tri[1] != tri[2] and tri[0] != tri[2]:
                tris.append(tri)

    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int32).reshape(-1, 3))


def connected_components(mesh: TriangleMesh) -> list[np.ndarray]:
    """Triangle indices of each edge-connected surface component, largest
    total area first."""
    if len(mesh.triangles) == 0:
        return []
    parent = np.arange(len(mesh.vertices))

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for a, b, c in mesh.triangles:
        ra, rb, rc = find(int(a)), find(int(b)), find(int(c))
        parent[rb] = ra
        parent[rc] = ra
    tri_root = np.array([find(int(t[0])) for t in mesh.triangles])
    areas = mesh.triangle_areas()
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(tri_root):
        groups.setdefault(int(r), []).append(i)
    comps = [np.array(g, dtype=np.int64) for g in groups.values()]
    comps.sort(key=lambda g: -float(areas[g].sum()))
    return comps


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """The largest-area connected component, reindexed to its own vertices.

    Extraction from overfit occupancy fields can grow small spurious bubbles
    in barely-supervised corners of the domain; the principal surface is the
    component that carries essentially all the area."""
    comps = connected_components(mesh)
    if len(comps) <= 1:
        return mesh
    tris = mesh.triangles[comps[0]]
    used = np.unique(tris)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[tris], name=mesh.name)


def edge_use_counts(mesh: TriangleMesh) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for t in mesh.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (int(min(a, b)), int(max(a, b)))
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every undirected edge is shared by exactly two triangles."""
    if len(mesh.triangles) == 0:
        return False
    return all(n == 2 for n in edge_use_counts(mesh).values())
