"""Rigid transforms, triangle meshes, surface sampling, OBBs and 2D polygons.

Global frame is right-handed and z-up, units are meters. Orientations are
(roll, pitch, yaw) with R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

MIN_TRIANGLE_AREA = 1e-12


class GeometryError(ValueError):
    pass


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """3x3 rotation for roll/pitch/yaw in radians, R = Rz(yaw) Ry(pitch) Rx(roll)."""
    if not all(math.isfinite(v) for v in (roll, pitch, yaw)):
        raise GeometryError("euler angles must be finite")
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def euler_from_rotation(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_from_euler` (pitch in [-pi/2, pi/2])."""
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock, fold everything into yaw
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
    return roll, pitch, yaw


def axis_angle_rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping local coordinates into the parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise GeometryError("pose components must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_xyz_rpy(cls, xyz: Sequence[float] = (0.0, 0.0, 0.0),
                     rpy: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        return cls(rotation_from_euler(*map(float, rpy)), np.asarray(xyz, dtype=float))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def position(self) -> np.ndarray:
        return self.translation

    @property
    def rpy(self) -> tuple[float, float, float]:
        return euler_from_rotation(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, atol=atol)
                and np.allclose(self.translation, other.translation, atol=atol))

    def __repr__(self):
        r, p, y = self.rpy
        x = self.translation
        return f"Pose(xyz=({x[0]:.4g}, {x[1]:.4g}, {x[2]:.4g}), rpy=({r:.4g}, {p:.4g}, {y:.4g}))"


# --------------------------------------------------------------------------- meshes


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float).reshape(-1, 3)
        F = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(V)):
            raise GeometryError("mesh vertices must be finite")
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise GeometryError("triangle index out of range")
        if F.size:
            areas = _triangle_areas(V, F)
            bad = np.flatnonzero(areas < MIN_TRIANGLE_AREA)
            if bad.size:
                raise GeometryError(f"degenerate triangle {int(bad[0])} (area < {MIN_TRIANGLE_AREA})")
        V.setflags(write=False)
        F.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)

    @property
    def areas(self) -> np.ndarray:
        return _triangle_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def is_empty(self) -> bool:
        return len(self.triangles) == 0


def _triangle_areas(V: np.ndarray, F: np.ndarray) -> np.ndarray:
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def merge_meshes(meshes: Iterable[TriMesh]) -> TriMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.vstack(verts), np.vstack(tris))


def box_mesh(size: Sequence[float], center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with outward (counter-clockwise) winding."""
    hx, hy, hz = (0.5 * float(s) for s in size)
    cx, cy, cz = (float(c) for c in center)
    V = np.array([[sx * hx + cx, sy * hy + cy, sz * hz + cz]
                  for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
    F = np.array([
        [0, 2, 1], [1, 2, 3],  # -z
        [4, 5, 6], [5, 7, 6],  # +z
        [0, 1, 4], [1, 5, 4],  # -y
        [2, 6, 3], [3, 6, 7],  # +y
        [0, 4, 2], [2, 4, 6],  # -x
        [1, 3, 5], [3, 7, 5],  # +x
    ])
    return TriMesh(V, F)


def transform_mesh(pose: Pose, mesh: TriMesh) -> TriMesh:
    return TriMesh(pose.apply(mesh.vertices), mesh.triangles)


def load_mesh(path: str | Path) -> TriMesh:
    """Load an ASCII STL or OFF file (meters)."""
    path = Path(path)
    suffix = path.suffix.lower()
    text = path.read_text()
    if suffix == ".off":
        return _parse_off(text, path)
    if suffix == ".stl":
        return _parse_ascii_stl(text, path)
    raise GeometryError(f"unsupported mesh format: {path}")


def _parse_off(text: str, path: Path) -> TriMesh:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0].upper() != "OFF":
        raise GeometryError(f"{path}: missing OFF header")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    V = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nf):
        k = int(tokens[pos])
        idx = [int(t) for t in tokens[pos + 1:pos + 1 + k]]
        pos += 1 + k
        # fan-triangulate polygons
        for i in range(1, k - 1):
            tris.append((idx[0], idx[i], idx[i + 1]))
    return TriMesh(V, np.array(tris, dtype=np.int64).reshape(-1, 3))


def _parse_ascii_stl(text: str, path: Path) -> TriMesh:
    verts = []
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0] == "vertex":
            verts.append([float(v) for v in parts[1:4]])
    if not verts or len(verts) % 3:
        raise GeometryError(f"{path}: not an ASCII STL with whole facets")
    V = np.array(verts)
    # weld identical coordinates so floor boundaries can be traced
    uniq, inverse = np.unique(V, axis=0, return_inverse=True)
    return TriMesh(uniq, inverse.reshape(-1, 3))


def write_off(mesh: TriMesh, path: str | Path) -> None:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def write_ascii_stl(mesh: TriMesh, path: str | Path, name: str = "mesh") -> None:
    out = [f"solid {name}"]
    for tri in mesh.triangles:
        a, b, c = mesh.vertices[tri]
        n = np.cross(b - a, c - a)
        n = n / np.linalg.norm(n)
        out.append(f"  facet normal {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
        out.append("    outer loop")
        for v in (a, b, c):
            out.append(f"      vertex {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
        out.append("    endloop")
        out.append("  endfacet")
    out.append(f"endsolid {name}")
    Path(path).write_text("\n".join(out) + "\n")


# --------------------------------------------------------------------------- sampling


def _barycentric_points(V: np.ndarray, tris: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(len(tris))
    v = rng.random(len(tris))
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a, b, c = V[tris[:, 0]], V[tris[:, 1]], V[tris[:, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def sample_mesh_surface(mesh: TriMesh, density: float, rng_seed: int = 0) -> np.ndarray:
    """Area-weighted surface samples at ``density`` points per square meter.

    Each triangle receives floor or ceil of its expected count; the fractional
    remainders are carried across triangles with a single random phase, so the
    total equals the rounded expectation and every triangle is unbiased.
    """
    if density <= 0:
        raise GeometryError("density must be positive")
    if mesh.is_empty():
        raise GeometryError("empty mesh")
    rng = np.random.default_rng(rng_seed)
    expected = mesh.areas * density
    cum = np.concatenate([[0.0], np.cumsum(expected)])
    phase = rng.random()
    counts = np.diff(np.floor(cum + phase)).astype(np.int64)
    tri_idx = np.repeat(np.arange(len(mesh.triangles)), counts)
    if tri_idx.size == 0:
        return np.zeros((0, 3))
    return _barycentric_points(mesh.vertices, mesh.triangles[tri_idx], rng)


def sample_mesh_count(mesh: TriMesh, count: int, rng_seed: int = 0) -> np.ndarray:
    """Exactly ``count`` area-weighted uniform samples on the surface."""
    if count < 1:
        raise GeometryError("count must be >= 1")
    if mesh.is_empty():
        raise GeometryError("empty mesh")
    rng = np.random.default_rng(rng_seed)
    areas = mesh.areas
    tri_idx = rng.choice(len(areas), size=count, p=areas / areas.sum())
    return _barycentric_points(mesh.vertices, mesh.triangles[tri_idx], rng)


# --------------------------------------------------------------------------- OBB


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray  # rows are the unit box axes
    half_extents: np.ndarray

    def __post_init__(self):
        for name in ("center", "axes", "half_extents"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.half_extents < 0):
            raise GeometryError("negative half extent")

    @property
    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.axes

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents))

    def local_coords(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.axes.T

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        q = np.abs(self.local_coords(points))
        return np.all(q <= self.half_extents + tol, axis=-1)

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance from each point to the closest of the six faces."""
        q = np.abs(self.local_coords(points))
        d = q - self.half_extents
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.min(-d, axis=-1)
        return np.where(np.all(d <= 0.0, axis=-1), inside, outside)

    def transformed(self, pose: Pose) -> "OrientedBox":
        return OrientedBox(pose.apply(self.center), self.axes @ pose.rotation.T, self.half_extents)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.corners
        return c.min(axis=0), c.max(axis=0)


def _extents_along(points: np.ndarray, axes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    proj = points @ axes.T
    return proj.min(axis=0), proj.max(axis=0)


def _min_area_direction(pts2: np.ndarray) -> float | None:
    """Angle of the minimum-area enclosing rectangle of planar points."""
    try:
        hull = ConvexHull(pts2)
    except (QhullError, ValueError):
        return None
    h = pts2[hull.vertices]
    edges = np.roll(h, -1, axis=0) - h
    angles = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2))
    best, best_area = None, math.inf
    for a in angles:
        c, s = math.cos(a), math.sin(a)
        rot = h @ np.array([[c, -s], [s, c]])
        area = np.prod(rot.max(axis=0) - rot.min(axis=0))
        if area < best_area - 1e-15:
            best, best_area = a, area
    return best


def compute_obb(points: np.ndarray) -> OrientedBox:
    """PCA oriented bounding box.

    Axes are covariance eigenvectors. When two eigenvalues coincide the
    in-plane orientation is ambiguous, so it is fixed by the minimum-area
    rectangle of the points projected onto that plane.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise GeometryError("compute_obb needs at least one point")
    mean = P.mean(axis=0)
    cov = np.cov((P - mean).T, bias=True) if len(P) > 1 else np.zeros((3, 3))
    evals, evecs = np.linalg.eigh(cov)
    axes = evecs.T.copy()
    scale = max(float(evals.max()), 1e-300)
    for i, j in ((0, 1), (1, 2), (0, 2)):
        k = 3 - i - j
        if evals.max() > 1e-12 and abs(evals[i] - evals[j]) <= 1e-9 * scale \
                and abs(evals[k] - evals[i]) > 1e-9 * scale:
            u, v = axes[i], axes[j]
            pts2 = np.column_stack([(P - mean) @ u, (P - mean) @ v])
            a = _min_area_direction(pts2)
            if a is not None:
                c, s = math.cos(a), math.sin(a)
                axes[i], axes[j] = c * u + s * v, -s * u + c * v
            break
    if np.linalg.det(axes) < 0:
        axes[2] = -axes[2]
    lo, hi = _extents_along(P, axes)
    half = 0.5 * (hi - lo)
    half[half < 1e-12] = 0.0
    center = (0.5 * (hi + lo)) @ axes
    return OrientedBox(center, axes, half)


# --------------------------------------------------------------------------- polygons


@dataclass(frozen=True, eq=False)
class Polygon2:
    vertices: np.ndarray
    hole: bool = False

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if len(V) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        gaps = np.linalg.norm(np.roll(V, -1, axis=0) - V, axis=1)
        if np.any(gaps <= 1e-9):
            raise GeometryError("polygon has repeated consecutive vertices")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    @property
    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _on_segment(px, py, ax, ay, bx, by, tol=1e-12) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > tol * max(1.0, math.hypot(bx - ax, by - ay)):
        return False
    return (min(ax, bx) - tol <= px <= max(ax, bx) + tol
            and min(ay, by) - tol <= py <= max(ay, by) + tol)


def point_in_polygon(p: Sequence[float], poly: Polygon2) -> bool:
    """Even-odd ray casting; points on the boundary count as inside."""
    px, py = float(p[0]), float(p[1])
    V = poly.vertices
    n = len(V)
    inside = False
    for i in range(n):
        ax, ay = V[i]
        bx, by = V[(i + 1) % n]
        if _on_segment(px, py, ax, ay, bx, by):
            return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def points_in_polygon(points: np.ndarray, poly: Polygon2) -> np.ndarray:
    """Vectorized :func:`point_in_polygon` over an (M, 2) array."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    px, py = P[:, 0], P[:, 1]
    V = poly.vertices
    A, B = V, np.roll(V, -1, axis=0)
    inside = np.zeros(len(P), dtype=bool)
    boundary = np.zeros(len(P), dtype=bool)
    for (ax, ay), (bx, by) in zip(A, B):
        seg = math.hypot(bx - ax, by - ay)
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        on = ((np.abs(cross) <= 1e-12 * max(1.0, seg))
              & (px >= min(ax, bx) - 1e-12) & (px <= max(ax, bx) + 1e-12)
              & (py >= min(ay, by) - 1e-12) & (py <= max(ay, by) + 1e-12))
        boundary |= on
        straddle = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= straddle & (px < x_cross)
    return inside | boundary


def _merge_collinear(loop: list[np.ndarray], tol: float = 1e-9) -> list[np.ndarray]:
    changed = True
    pts = list(loop)
    while changed and len(pts) > 3:
        changed = False
        for i in range(len(pts)):
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % len(pts)]
            ab, bc = b - a, c - b
            if abs(ab[0] * bc[1] - ab[1] * bc[0]) <= tol * max(1e-12, np.linalg.norm(ab) * np.linalg.norm(bc)) \
                    and np.dot(ab, bc) > 0:
                del pts[i]
                changed = True
                break
    return pts


def extract_floor_boundary(floor_mesh: TriMesh, surface_height: float,
                           height_tolerance: float = 0.01) -> list[Polygon2]:
    """Boundary polygons of the floor's top surface.

    Upward-facing triangles with all three vertices within
    ``height_tolerance`` of ``surface_height`` are kept (so the undersides of
    walls standing on the floor do not count); edges used by exactly one of them form
    closed loops. Loops nested an odd number of times are flagged as holes.
    """
    V = floor_mesh.vertices
    F = floor_mesh.triangles
    T = V[F]
    up = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])[:, 2] > 0
    flat = np.all(np.abs(T[:, :, 2] - surface_height) <= height_tolerance, axis=1) & up
    if not np.any(flat):
        raise GeometryError("no floor surface found")
    # weld vertices on their planar coordinates
    keys = np.round(V[:, :2] / 1e-7).astype(np.int64)
    _, weld, _ = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    weld = weld.reshape(-1)
    xy = {}
    for vi, w in enumerate(weld):
        xy.setdefault(int(w), V[vi, :2])

    edge_count: dict[tuple[int, int], int] = {}
    directed: dict[tuple[int, int], int] = {}
    for tri in F[flat]:
        a, b, c = (int(weld[i]) for i in tri)
        # orient each triangle counter-clockwise seen from above
        pa, pb, pc = xy[a], xy[b], xy[c]
        if (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]) < 0:
            b, c = c, b
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            edge_count[key] = edge_count.get(key, 0) + 1
            directed[(u, v)] = directed.get((u, v), 0) + 1
    nxt: dict[int, list[int]] = {}
    for (u, v) in directed:
        if edge_count[(min(u, v), max(u, v))] == 1:
            nxt.setdefault(u, []).append(v)

    loops = []
    while nxt:
        start = min(nxt)
        loop = [start]
        cur = start
        while True:
            outs = nxt.get(cur)
            if not outs:
                break
            n = outs.pop(0)
            if not outs:
                del nxt[cur]
            if n == start:
                break
            loop.append(n)
            cur = n
        if len(loop) >= 3:
            pts = _merge_collinear([np.asarray(xy[i]) for i in loop])
            if len(pts) >= 3:
                loops.append(Polygon2(np.array(pts)))
    polys = []
    for i, poly in enumerate(loops):
        probe = poly.vertices[0]
        depth = sum(1 for j, other in enumerate(loops)
                    if j != i and point_in_polygon(probe, other))
        polys.append(Polygon2(poly.vertices, hole=bool(depth % 2)))
    return polys
