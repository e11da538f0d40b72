"""Pyramidal camera frustum model and ray-cast visibility."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Pose
from .voxel import VoxelGrid3, raycast_batch


@dataclass(frozen=True)
class CameraIntrinsics:
    fov_v: float  # radians
    fov_h: float  # radians
    max_range: float  # meters

    def __post_init__(self):
        if not (0 < self.fov_v < math.pi and 0 < self.fov_h < math.pi):
            raise ValueError("fields of view must lie in (0, pi)")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")


@dataclass(frozen=True, eq=False)
class CameraView:
    """Camera at ``pose.position`` looking along its local +z axis."""

    pose: Pose
    intrinsics: CameraIntrinsics

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation

    @property
    def forward(self) -> np.ndarray:
        return self.pose.rotation[:, 2]


def load_camera_profiles(path: str | Path | None = None) -> dict[str, CameraIntrinsics]:
    """Named presets; FOV values in the file are degrees."""
    if path is None:
        text = resources.files("viewplan").joinpath("data/cameras.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    return {name: CameraIntrinsics(math.radians(p["fov_v_deg"]), math.radians(p["fov_h_deg"]),
                                   float(p["max_range"]))
            for name, p in doc.items()}


def contains_points(view: CameraView, points: np.ndarray) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    q = (P - view.pose.translation) @ view.pose.rotation  # world -> camera
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    k = view.intrinsics
    with np.errstate(invalid="ignore"):
        inside = ((z > 0)
                  & (np.abs(np.arctan2(x, z)) <= 0.5 * k.fov_h)
                  & (np.abs(np.arctan2(y, z)) <= 0.5 * k.fov_v)
                  & (np.linalg.norm(q, axis=-1) <= k.max_range))
    return inside


def contains_point(view: CameraView, p: Sequence[float]) -> bool:
    return bool(contains_points(view, np.asarray(p, dtype=float).reshape(1, 3))[0])


def points_visibility(view: CameraView, grid: VoxelGrid3, points: np.ndarray, eps: float) -> np.ndarray:
    """Per-point 0/1 visibility of ``points`` (M, 3) from one view."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    vis = np.zeros(len(P), dtype=bool)
    inside = contains_points(view, P)
    # a point at the vertex itself has no ray; treat it as seen
    at_vertex = np.all(P == view.position, axis=1)
    vis[inside & at_vertex] = True
    cast = np.flatnonzero(inside & ~at_vertex)
    if cast.size == 0:
        return vis
    starts = np.broadcast_to(view.position, (cast.size, 3))
    hit, idx = raycast_batch(grid, starts, P[cast])
    centers = grid.center_of(idx)
    close = np.linalg.norm(P[cast] - centers, axis=1) <= eps
    vis[cast] = ~hit | close
    return vis


def point_visibility(view: CameraView, grid: VoxelGrid3, p: Sequence[float], eps: float) -> int:
    return int(points_visibility(view, grid, np.asarray(p, dtype=float).reshape(1, 3), eps)[0])


def object_visibility(views: Sequence[CameraView], grid: VoxelGrid3, points: np.ndarray, eps: float) -> float:
    """Fraction of points seen by at least one view at one state."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise ValueError("empty point set")
    seen = np.zeros(len(P), dtype=bool)
    for v in views:
        seen |= points_visibility(v, grid, P, eps)
    return int(seen.sum()) / len(P)


def visibility_table(view: CameraView, grids: Sequence[VoxelGrid3], point_sets: np.ndarray,
                     eps: float) -> np.ndarray:
    """(K, P) boolean visibility of one view over every state."""
    return np.stack([points_visibility(view, g, pts, eps) for g, pts in zip(grids, point_sets)])


def avg_visibility(views: Sequence[CameraView], grids: Sequence[VoxelGrid3], point_sets,
                   eps: float) -> float:
    """Trajectory-averaged object visibility."""
    if len(grids) != len(point_sets):
        raise ValueError("grids and point sets must align by state")
    if len(grids) == 0:
        raise ValueError("need at least one state")
    return sum(object_visibility(views, g, pts, eps) for g, pts in zip(grids, point_sets)) / len(grids)


def avg_visibility_from_tables(tables: Sequence[np.ndarray]) -> float:
    """Same as :func:`avg_visibility` given precomputed per-view tables."""
    if not tables:
        return 0.0
    seen = np.logical_or.reduce(list(tables))
    return float(np.mean(seen.sum(axis=1) / seen.shape[1]))
