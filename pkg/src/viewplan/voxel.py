"""Dense 3D occupancy grids, voxel ray traversal and 2D projection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .geometry import OrientedBox

log = logging.getLogger(__name__)

MAX_CELLS = 10**9


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VoxelGrid3:
    """Boolean occupancy over ``dims`` voxels with min corner at ``origin``."""

    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray
    n_dropped: int = 0

    def __post_init__(self):
        if not self.resolution > 0:
            raise GridError("resolution must be positive")
        origin = np.array(self.origin, dtype=float).reshape(3)
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise GridError("occupancy must be a non-empty 3D array")
        origin.setflags(write=False)
        occ.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.occupancy.shape)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * np.array(self.dims)

    @property
    def voxel_diagonal(self) -> float:
        return self.resolution * math.sqrt(3.0)

    def index_of(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel indices (floor convention), not clipped to dims."""
        return np.floor((np.asarray(points, dtype=float) - self.origin) / self.resolution).astype(np.int64)

    def center_of(self, index: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def in_bounds(self, index: np.ndarray) -> np.ndarray:
        idx = np.asarray(index)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)

    def is_occupied(self, index: Sequence[int]) -> bool:
        i = tuple(int(v) for v in index)
        if not self.in_bounds(np.array(i)):
            return False
        return bool(self.occupancy[i])

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.occupancy)

    def occupied_centers(self) -> np.ndarray:
        return self.center_of(self.occupied_indices())

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def with_occupancy(self, occupancy: np.ndarray) -> "VoxelGrid3":
        return VoxelGrid3(self.origin, self.resolution, occupancy, self.n_dropped)


@dataclass(frozen=True, eq=False)
class OccupancyGrid2:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise GridError("resolution must be positive")
        origin = np.array(self.origin, dtype=float).reshape(2)
        occ = np.asarray(self.occupancy, dtype=bool)
        origin.setflags(write=False)
        occ.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def dims(self) -> tuple[int, int]:
        return tuple(int(d) for d in self.occupancy.shape)

    def cell_of(self, xy: Sequence[float]) -> tuple[int, int]:
        ij = np.floor((np.asarray(xy, dtype=float)[:2] - self.origin) / self.resolution).astype(np.int64)
        return int(ij[0]), int(ij[1])

    def center_of(self, cell: Sequence[int]) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) * self.resolution

    def in_bounds(self, cell: Sequence[int]) -> bool:
        return 0 <= cell[0] < self.dims[0] and 0 <= cell[1] < self.dims[1]

    def inflate(self, radius: float) -> "OccupancyGrid2":
        """Dilate occupied cells by a disk of ``radius`` meters."""
        r = int(math.floor(radius / self.resolution + 1e-9))
        if r <= 0 or not self.occupancy.any():
            return self
        from scipy.ndimage import binary_dilation
        ii, jj = np.mgrid[-r:r + 1, -r:r + 1]
        disk = (ii * ii + jj * jj) * self.resolution**2 <= radius**2 + 1e-12
        return OccupancyGrid2(self.origin, self.resolution, binary_dilation(self.occupancy, structure=disk))


# --------------------------------------------------------------------------- construction


def build_from_points(points: np.ndarray, resolution: float,
                      bounds: tuple[Sequence[float], Sequence[float]]) -> VoxelGrid3:
    """Mark every voxel that contains at least one point.

    ``bounds`` is (min corner, max corner); dims round up to cover it.
    Points outside the grid are dropped and counted in ``n_dropped``.
    """
    if not resolution > 0:
        raise GridError("resolution must be positive")
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if np.any(hi <= lo):
        raise GridError("degenerate bounds")
    dims = np.maximum(1, np.ceil((hi - lo) / resolution - 1e-9)).astype(np.int64)
    if int(np.prod(dims)) > MAX_CELLS:
        raise GridError("grid too large")
    occ = np.zeros(tuple(dims), dtype=bool)
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    idx = np.floor((P - lo) / resolution).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < dims), axis=1)
    dropped = int(len(P) - ok.sum())
    if dropped:
        log.debug("build_from_points: %d points outside bounds ignored", dropped)
    idx = idx[ok]
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid3(lo, resolution, occ, dropped)


def overlay_state(env: VoxelGrid3, boxes: Sequence[OrientedBox]) -> VoxelGrid3:
    """Copy of ``env`` with the surface shell of every box marked occupied.

    A voxel joins the shell when its center is within half a voxel diagonal
    of one of the box faces.
    """
    if not boxes:
        return env
    occ = env.occupancy.copy()
    band = 0.5 * env.voxel_diagonal
    dims = np.array(env.dims)
    for box in boxes:
        lo, hi = box.aabb()
        i0 = np.maximum(np.floor((lo - band - env.origin) / env.resolution).astype(np.int64), 0)
        i1 = np.minimum(np.ceil((hi + band - env.origin) / env.resolution).astype(np.int64), dims)
        if np.any(i1 <= i0):
            continue
        axes = [np.arange(i0[k], i1[k]) for k in range(3)]
        I, J, K = np.meshgrid(*axes, indexing="ij")
        centers = env.origin + (np.stack([I, J, K], axis=-1) + 0.5) * env.resolution
        shell = box.surface_distance(centers.reshape(-1, 3)).reshape(I.shape) <= band
        occ[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]] |= shell
    return env.with_occupancy(occ)


def region_occupied(grid: VoxelGrid3, lo: Sequence[float], hi: Sequence[float]) -> bool:
    """True iff some occupied voxel center lies inside the closed box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi < lo):
        raise GridError("invalid box")
    # voxel i has center origin + (i + 0.5) res; solve lo <= center <= hi
    i0 = np.ceil((lo - grid.origin) / grid.resolution - 0.5).astype(np.int64)
    i1 = np.floor((hi - grid.origin) / grid.resolution - 0.5).astype(np.int64)
    i0 = np.maximum(i0, 0)
    i1 = np.minimum(i1, np.array(grid.dims) - 1)
    if np.any(i1 < i0):
        return False
    return bool(grid.occupancy[i0[0]:i1[0] + 1, i0[1]:i1[1] + 1, i0[2]:i1[2] + 1].any())


def project_to_2d(grid: VoxelGrid3, z_min: float, z_max: float) -> OccupancyGrid2:
    """Column-OR of voxels whose center height lies in [z_min, z_max]."""
    if not z_min < z_max:
        raise GridError("z_min must be below z_max")
    zc = grid.origin[2] + (np.arange(grid.dims[2]) + 0.5) * grid.resolution
    band = (zc >= z_min) & (zc <= z_max)
    occ = grid.occupancy[:, :, band].any(axis=2) if band.any() else np.zeros(grid.dims[:2], dtype=bool)
    return OccupancyGrid2(grid.origin[:2], grid.resolution, occ)


# --------------------------------------------------------------------------- ray traversal


@numba.njit(cache=True)
def _first_hit(occ, ox, oy, oz, res, ax, ay, az, bx, by, bz, out):
    """Incremental voxel stepping from a to b; writes the first occupied index.

    Returns True on a hit. Ties step x before y before z.
    """
    nx, ny, nz = occ.shape
    # grid units
    x0 = (ax - ox) / res
    y0 = (ay - oy) / res
    z0 = (az - oz) / res
    dx = (bx - ax) / res
    dy = (by - ay) / res
    dz = (bz - az) / res
    # clip parameter range [0, 1] against the grid box
    t0 = 0.0
    t1 = 1.0
    for axis in range(3):
        if axis == 0:
            p, d, n = x0, dx, nx
        elif axis == 1:
            p, d, n = y0, dy, ny
        else:
            p, d, n = z0, dz, nz
        if d == 0.0:
            if p < 0.0 or p >= n:
                return False
        else:
            ta = (0.0 - p) / d
            tb = (n - p) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t0 > t1:
        return False

    # target voxel (may be outside the grid)
    gx = int(math.floor(x0 + dx))
    gy = int(math.floor(y0 + dy))
    gz = int(math.floor(z0 + dz))

    px = x0 + t0 * dx
    py = y0 + t0 * dy
    pz = z0 + t0 * dz
    ix = int(math.floor(px))
    iy = int(math.floor(py))
    iz = int(math.floor(pz))
    # entry exactly on the far face of the box
    if ix >= nx:
        ix = nx - 1
    if iy >= ny:
        iy = ny - 1
    if iz >= nz:
        iz = nz - 1
    if ix < 0:
        ix = 0
    if iy < 0:
        iy = 0
    if iz < 0:
        iz = 0

    inf = np.inf
    if dx > 0.0:
        sx = 1
        tmx = (ix + 1 - x0) / dx
        tdx = 1.0 / dx
    elif dx < 0.0:
        sx = -1
        tmx = (ix - x0) / dx
        tdx = -1.0 / dx
    else:
        sx = 0
        tmx = inf
        tdx = inf
    if dy > 0.0:
        sy = 1
        tmy = (iy + 1 - y0) / dy
        tdy = 1.0 / dy
    elif dy < 0.0:
        sy = -1
        tmy = (iy - y0) / dy
        tdy = -1.0 / dy
    else:
        sy = 0
        tmy = inf
        tdy = inf
    if dz > 0.0:
        sz = 1
        tmz = (iz + 1 - z0) / dz
        tdz = 1.0 / dz
    elif dz < 0.0:
        sz = -1
        tmz = (iz - z0) / dz
        tdz = -1.0 / dz
    else:
        sz = 0
        tmz = inf
        tdz = inf

    while True:
        if occ[ix, iy, iz]:
            out[0] = ix
            out[1] = iy
            out[2] = iz
            return True
        if ix == gx and iy == gy and iz == gz:
            return False
        if tmx <= tmy and tmx <= tmz:
            if tmx > t1:
                return False
            ix += sx
            tmx += tdx
            if ix < 0 or ix >= nx:
                return False
        elif tmy <= tmz:
            if tmy > t1:
                return False
            iy += sy
            tmy += tdy
            if iy < 0 or iy >= ny:
                return False
        else:
            if tmz > t1:
                return False
            iz += sz
            tmz += tdz
            if iz < 0 or iz >= nz:
                return False


@numba.njit(cache=True)
def _first_hits(occ, origin, res, starts, ends, out):
    hit = np.zeros(len(starts), dtype=np.bool_)
    buf = np.zeros(3, dtype=np.int64)
    for m in range(len(starts)):
        if _first_hit(occ, origin[0], origin[1], origin[2], res,
                      starts[m, 0], starts[m, 1], starts[m, 2],
                      ends[m, 0], ends[m, 1], ends[m, 2], buf):
            hit[m] = True
            out[m, 0] = buf[0]
            out[m, 1] = buf[1]
            out[m, 2] = buf[2]
    return hit


def raycast_first_hit(grid: VoxelGrid3, origin: Sequence[float], target: Sequence[float]):
    """First occupied voxel on the segment origin -> target, up to target's voxel.

    Returns ``(index, center)`` or ``None`` when the segment is free.
    """
    a = np.asarray(origin, dtype=float)
    b = np.asarray(target, dtype=float)
    if np.array_equal(a, b):
        raise GridError("origin and target coincide")
    out = np.zeros(3, dtype=np.int64)
    if _first_hit(grid.occupancy, grid.origin[0], grid.origin[1], grid.origin[2], grid.resolution,
                  a[0], a[1], a[2], b[0], b[1], b[2], out):
        idx = tuple(int(v) for v in out)
        return idx, grid.center_of(np.array(idx))
    return None


def raycast_batch(grid: VoxelGrid3, starts: np.ndarray, ends: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized first-hit query; returns (hit mask, (M, 3) hit indices)."""
    S = np.ascontiguousarray(np.asarray(starts, dtype=float).reshape(-1, 3))
    E = np.ascontiguousarray(np.asarray(ends, dtype=float).reshape(-1, 3))
    if S.shape != E.shape:
        raise GridError("starts and ends differ in shape")
    out = np.full((len(S), 3), -1, dtype=np.int64)
    hit = _first_hits(grid.occupancy, grid.origin, grid.resolution, S, E, out)
    return hit, out


def traverse(grid: VoxelGrid3, origin: Sequence[float], target: Sequence[float]) -> list[tuple[int, int, int]]:
    """In-grid voxels visited from origin to target, in order, ignoring occupancy."""
    a = np.asarray(origin, dtype=float)
    b = np.asarray(target, dtype=float)
    # every unvisited voxel is "occupied", so each query yields the next voxel
    remaining = np.ones(grid.dims, dtype=bool)
    out = np.zeros(3, dtype=np.int64)
    visited = []
    while _first_hit(remaining, grid.origin[0], grid.origin[1], grid.origin[2], grid.resolution,
                     a[0], a[1], a[2], b[0], b[1], b[2], out):
        idx = (int(out[0]), int(out[1]), int(out[2]))
        visited.append(idx)
        remaining[idx] = False
    return visited


# --------------------------------------------------------------------------- export


def write_ply_points(path: str | Path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    """ASCII PLY point cloud, optional uint8 RGB per point."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    header = ["ply", "format ascii 1.0", f"element vertex {len(P)}",
              "property double x", "property double y", "property double z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    lines = list(header)
    if colors is None:
        lines += [f"{x!r} {y!r} {z!r}" for x, y, z in P.tolist()]
    else:
        C = np.asarray(colors, dtype=np.int64).reshape(-1, 3)
        lines += [f"{x!r} {y!r} {z!r} {r} {g} {b}" for (x, y, z), (r, g, b) in zip(P.tolist(), C.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def export_grid_ply(grid: VoxelGrid3, path: str | Path) -> None:
    write_ply_points(path, grid.occupied_centers())
