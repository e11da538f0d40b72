"""Configuration-space camera pose sampling and candidate filtering."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import CameraIntrinsics, CameraView, load_camera_profiles
from .geometry import Polygon2, Pose, points_in_polygon
from .metrics import coverage
from .robot import JointConfig, KinematicChain, MotionEnvelope, chain_from_dict, link_poses
from .voxel import VoxelGrid3, region_occupied


class SamplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SupervisorModel:
    """A mobile manipulator with a camera on one of its links."""

    chain: KinematicChain
    camera_link: str
    camera_mount: Pose
    footprint_radius: float
    collision_radius: float
    collision_height: float
    intrinsics: CameraIntrinsics
    name: str = "supervisor"

    def __post_init__(self):
        self.chain.link_index(self.camera_link)
        if self.collision_radius < self.footprint_radius:
            raise SamplingError("collision radius must be >= footprint radius")
        if not self.collision_height > 0:
            raise SamplingError("collision height must be positive")

    def camera_view(self, config: JointConfig) -> CameraView:
        poses = link_poses(self.chain, config)
        pose = poses[self.chain.link_index(self.camera_link)] @ self.camera_mount
        return CameraView(pose, self.intrinsics)

    def collision_box(self, base_xy: Sequence[float], floor_height: float,
                      clearance: float) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned box enclosing the collision cylinder above the floor."""
        x, y = float(base_xy[0]), float(base_xy[1])
        r = self.collision_radius
        lo = np.array([x - r, y - r, floor_height + clearance])
        hi = np.array([x + r, y + r, floor_height + self.collision_height])
        return lo, hi


def supervisor_from_dict(doc: dict, root: str | Path = ".",
                         profiles: dict[str, CameraIntrinsics] | None = None) -> SupervisorModel:
    root = Path(root)
    chain_doc = doc["chain"]
    if isinstance(chain_doc, str):
        chain_path = root / chain_doc
        chain = chain_from_dict(json.loads(chain_path.read_text()), chain_path.parent)
    else:
        chain = chain_from_dict(chain_doc, root)
    profiles = profiles or load_camera_profiles()
    cam = doc["intrinsics"]
    if isinstance(cam, str):
        if cam not in profiles:
            raise SamplingError(f"unknown camera preset {cam!r}")
        intr = profiles[cam]
    else:
        intr = CameraIntrinsics(math.radians(cam["fov_v_deg"]), math.radians(cam["fov_h_deg"]),
                                float(cam["max_range"]))
    mount = doc["camera_mount"]
    return SupervisorModel(
        chain=chain,
        camera_link=mount["link"],
        camera_mount=Pose.from_xyz_rpy(mount.get("xyz", (0, 0, 0)), mount.get("rpy", (0, 0, 0))),
        footprint_radius=float(doc["footprint_radius"]),
        collision_radius=float(doc["collision"]["radius"]),
        collision_height=float(doc["collision"]["height"]),
        intrinsics=intr,
        name=doc.get("name", chain.name),
    )


def load_supervisor(path: str | Path, profiles=None) -> SupervisorModel:
    path = Path(path)
    return supervisor_from_dict(json.loads(path.read_text()), path.parent, profiles)


@dataclass(frozen=True, eq=False)
class CandidateViewpoint:
    id: int
    view: CameraView
    config: JointConfig
    coverage: float | None = None
    target_coverage: float | None = None
    collision_free: bool | None = None

    @property
    def base_xy(self) -> np.ndarray:
        return np.array(self.config.base[:2])


# --------------------------------------------------------------------------- sampling


def sample_base_positions(floor: Sequence[Polygon2], spacing: float) -> np.ndarray:
    """Evenly spaced grid over the floor's bounding box, kept if on the floor."""
    if not spacing > 0:
        raise SamplingError("spacing must be positive")
    outers = [p for p in floor if not p.hole]
    holes = [p for p in floor if p.hole]
    if not outers:
        raise SamplingError("operational area too small")
    lo = np.min([p.bounds()[0] for p in outers], axis=0)
    hi = np.max([p.bounds()[1] for p in outers], axis=0)
    nx = int(math.floor((hi[0] - lo[0]) / spacing + 1e-9)) + 1
    ny = int(math.floor((hi[1] - lo[1]) / spacing + 1e-9)) + 1
    xs = lo[0] + spacing * np.arange(nx)
    ys = lo[1] + spacing * np.arange(ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    keep = np.zeros(len(pts), dtype=bool)
    for poly in outers:
        keep |= points_in_polygon(pts, poly)
    for poly in holes:
        keep &= ~points_in_polygon(pts, poly)
    if not keep.any():
        raise SamplingError("operational area too small")
    return pts[keep]


def sample_candidates(model: SupervisorModel, count: int, base_positions: np.ndarray,
                      rng_seed: int = 0, start_id: int = 0) -> list[CandidateViewpoint]:
    """Random base cell (with replacement), random yaw, uniform arm joints."""
    if count < 1:
        raise SamplingError("count must be >= 1")
    bases = np.asarray(base_positions, dtype=float).reshape(-1, 2)
    if len(bases) == 0:
        raise SamplingError("no base positions")
    rng = np.random.default_rng(rng_seed)
    limits = [l.limits for l in model.chain.movable_links]
    out = []
    for n in range(count):
        x, y = bases[rng.integers(len(bases))]
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        joints = tuple(float(rng.uniform(lo, hi)) if hi > lo else float(lo) for lo, hi in limits)
        config = JointConfig((float(x), float(y), float(yaw)), joints)
        out.append(CandidateViewpoint(start_id + n, model.camera_view(config), config))
    return out


# --------------------------------------------------------------------------- filters


def orientation_angle(view: CameraView, target: np.ndarray) -> float:
    r = np.asarray(target, dtype=float) - view.position
    z = view.forward
    if np.linalg.norm(r) < 1e-12:
        return 0.0
    return math.atan2(float(np.linalg.norm(np.cross(z, r))), float(np.dot(z, r)))


def prefilter_orientation(candidate: CandidateViewpoint, envelope: MotionEnvelope,
                          alpha_threshold: float) -> bool:
    """Keep (True) unless the camera axis is more than the threshold off the envelope center."""
    return orientation_angle(candidate.view, envelope.centroid) <= alpha_threshold


def filter_orientation(candidates: Sequence[CandidateViewpoint], envelope: MotionEnvelope,
                       alpha_threshold: float) -> list[CandidateViewpoint]:
    return [c for c in candidates if prefilter_orientation(c, envelope, alpha_threshold)]


def filter_coverage(candidates: Sequence[CandidateViewpoint], envelope: MotionEnvelope,
                    c_single: float) -> list[CandidateViewpoint]:
    if not 0.0 <= c_single <= 1.0:
        raise SamplingError("threshold must lie in [0, 1]")
    kept = []
    for c in candidates:
        cov = coverage([c.view], envelope)
        if cov >= c_single:
            kept.append(replace(c, coverage=cov))
    return kept


def filter_target_coverage(candidates: Sequence[CandidateViewpoint],
                           object_envelope: MotionEnvelope | None,
                           c_single_target: float) -> list[CandidateViewpoint]:
    """Identity when there is no target object."""
    if object_envelope is None:
        return list(candidates)
    if not 0.0 <= c_single_target <= 1.0:
        raise SamplingError("threshold must lie in [0, 1]")
    kept = []
    for c in candidates:
        cov = coverage([c.view], object_envelope)
        if cov >= c_single_target:
            kept.append(replace(c, target_coverage=cov))
    return kept


def _boxes_overlap(alo, ahi, blo, bhi) -> bool:
    return bool(np.all(alo <= bhi) and np.all(blo <= ahi))


def filter_collision(candidates: Sequence[CandidateViewpoint], env: VoxelGrid3,
                     envelope: MotionEnvelope, state_grids: Sequence[VoxelGrid3] | None,
                     model: SupervisorModel, floor_height: float = 0.0,
                     clearance: float | None = None) -> list[CandidateViewpoint]:
    """Two-stage box check: static environment, then the robot at each state.

    Without per-state grids, any overlap with the envelope's bounding box
    excludes the candidate.
    """
    clearance = env.resolution if clearance is None else clearance
    elo, ehi = envelope.aabb()
    kept = []
    for c in candidates:
        lo, hi = model.collision_box(c.base_xy, floor_height, clearance)
        if region_occupied(env, lo, hi):
            continue
        if _boxes_overlap(lo, hi, elo, ehi):
            if state_grids is None:
                continue
            if any(region_occupied(g, lo, hi) for g in state_grids):
                continue
        kept.append(replace(c, collision_free=True))
    return kept
