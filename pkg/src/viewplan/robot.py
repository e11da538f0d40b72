"""Serial kinematic chains on mobile bases, trajectories and motion envelopes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import (GeometryError, OrientedBox, Pose, TriMesh, axis_angle_rotation, box_mesh,
                       compute_obb, load_mesh, sample_mesh_count)
from .voxel import VoxelGrid3, overlay_state

JOINT_KINDS = ("revolute", "prismatic", "fixed")
LIMIT_TOL = 1e-12


class KinematicsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    origin: Pose = field(default_factory=Pose)
    joint: str = "fixed"
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    limits: tuple[float, float] = (0.0, 0.0)
    geometry: TriMesh | None = None

    def __post_init__(self):
        if self.joint not in JOINT_KINDS:
            raise KinematicsError(f"link {self.name!r}: unknown joint type {self.joint!r}")
        lo, hi = self.limits
        if lo > hi:
            raise KinematicsError(f"link {self.name!r}: joint limits lo > hi")
        if self.joint != "fixed" and np.linalg.norm(self.axis) < 1e-12:
            raise KinematicsError(f"link {self.name!r}: zero joint axis")

    @property
    def movable(self) -> bool:
        return self.joint != "fixed"

    def joint_motion(self, q: float) -> Pose:
        if self.joint == "revolute":
            return Pose(axis_angle_rotation(self.axis, q), np.zeros(3))
        if self.joint == "prismatic":
            a = np.asarray(self.axis, dtype=float)
            return Pose(np.eye(3), q * a / np.linalg.norm(a))
        return Pose()


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Ordered serial chain; link i is the child of link i-1, link 0 of the base."""

    links: tuple[Link, ...]
    name: str = "chain"

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise KinematicsError("duplicate link names")

    @property
    def movable_links(self) -> list[Link]:
        return [l for l in self.links if l.movable]

    @property
    def dof(self) -> int:
        return len(self.movable_links)

    @property
    def geometric_links(self) -> list[Link]:
        return [l for l in self.links if l.geometry is not None]

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KinematicsError(f"no link named {name!r}")

    @cached_property
    def local_boxes(self) -> dict[str, OrientedBox]:
        return {l.name: compute_obb(l.geometry.vertices) for l in self.geometric_links}


@dataclass(frozen=True)
class JointConfig:
    base: tuple[float, float, float] = (0.0, 0.0, 0.0)  # x, y, yaw
    joints: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(float(v) for v in self.base))
        object.__setattr__(self, "joints", tuple(float(v) for v in self.joints))
        if len(self.base) != 3:
            raise KinematicsError("base must be (x, y, yaw)")

    def base_pose(self) -> Pose:
        x, y, yaw = self.base
        return Pose.from_xyz_rpy((x, y, 0.0), (0.0, 0.0, yaw))


@dataclass(frozen=True)
class Trajectory:
    states: tuple[JointConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if not self.states:
            raise KinematicsError("trajectory needs at least one state")
        n = len(self.states[0].joints)
        if any(len(s.joints) != n for s in self.states):
            raise KinematicsError("trajectory states have inconsistent joint counts")

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)


@dataclass(frozen=True, eq=False)
class AttachedObject:
    mesh: TriMesh
    link: str
    grasp: Pose = field(default_factory=Pose)

    @cached_property
    def local_box(self) -> OrientedBox:
        return compute_obb(self.mesh.vertices)


@dataclass(frozen=True, eq=False)
class MotionEnvelope:
    points: np.ndarray  # (8*K*L, 3)
    n_states: int
    n_links: int

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(P) != 8 * self.n_states * self.n_links:
            raise KinematicsError("envelope point count must equal 8*K*L")
        P.setflags(write=False)
        object.__setattr__(self, "points", P)

    def __len__(self):
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    def state_corners(self, i: int) -> np.ndarray:
        """(L, 8, 3) corners for state i."""
        return self.points.reshape(self.n_states, self.n_links, 8, 3)[i]


@dataclass(frozen=True, eq=False)
class TargetPointSet:
    local_points: np.ndarray  # (P, 3)
    world_points: np.ndarray  # (K, P, 3)

    def __post_init__(self):
        L = np.asarray(self.local_points, dtype=float).reshape(-1, 3)
        W = np.asarray(self.world_points, dtype=float)
        if W.ndim != 3 or W.shape[1:] != L.shape:
            raise KinematicsError("world points must be (K, P, 3) matching local points")
        L.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "local_points", L)
        object.__setattr__(self, "world_points", W)

    @property
    def n_states(self) -> int:
        return self.world_points.shape[0]

    @property
    def centroids(self) -> np.ndarray:
        return self.world_points.mean(axis=1)


# --------------------------------------------------------------------------- kinematics


def check_limits(chain: KinematicChain, state: JointConfig) -> None:
    movable = chain.movable_links
    if len(state.joints) != len(movable):
        raise KinematicsError(
            f"{chain.name}: expected {len(movable)} joint values, got {len(state.joints)}")
    for link, q in zip(movable, state.joints):
        lo, hi = link.limits
        if not (lo - LIMIT_TOL <= q <= hi + LIMIT_TOL):
            raise KinematicsError(f"joint {link.name!r} value {q:.6g} outside limits [{lo:.6g}, {hi:.6g}]")


def link_poses(chain: KinematicChain, state: JointConfig) -> list[Pose]:
    check_limits(chain, state)
    T = state.base_pose()
    poses = []
    values = iter(state.joints)
    for link in chain.links:
        T = T @ link.origin
        if link.movable:
            T = T @ link.joint_motion(next(values))
        poses.append(T)
    return poses


def object_pose(chain: KinematicChain, poses: Sequence[Pose], attached: AttachedObject) -> Pose:
    return poses[chain.link_index(attached.link)] @ attached.grasp


def forward_kinematics(chain: KinematicChain, state: JointConfig,
                       attached: AttachedObject | None = None) -> list[Pose]:
    """World pose of every link, followed by the attached object's pose if given."""
    poses = link_poses(chain, state)
    if attached is not None:
        poses.append(object_pose(chain, poses, attached))
    return poses


def state_boxes(chain: KinematicChain, state: JointConfig,
                attached: AttachedObject | None = None) -> list[OrientedBox]:
    """World OBBs of every geometric link (and the object) at one state."""
    poses = link_poses(chain, state)
    boxes = [chain.local_boxes[l.name].transformed(p)
             for l, p in zip(chain.links, poses) if l.geometry is not None]
    if attached is not None:
        boxes.append(attached.local_box.transformed(object_pose(chain, poses, attached)))
    return boxes


def motion_envelope(chain: KinematicChain, traj: Trajectory,
                    attached: AttachedObject | None = None) -> MotionEnvelope:
    n_links = len(chain.geometric_links) + (attached is not None)
    if n_links == 0:
        raise KinematicsError("no geometry")
    corners = [box.corners for state in traj for box in state_boxes(chain, state, attached)]
    return MotionEnvelope(np.concatenate(corners), len(traj), n_links)


def object_envelope(chain: KinematicChain, traj: Trajectory,
                    attached: AttachedObject | None) -> MotionEnvelope:
    if attached is None:
        raise KinematicsError("object envelope requires an attached object")
    corners = []
    for state in traj:
        pose = object_pose(chain, link_poses(chain, state), attached)
        corners.append(attached.local_box.transformed(pose).corners)
    return MotionEnvelope(np.concatenate(corners), len(traj), 1)


def sample_target_points(attached: AttachedObject, count: int = 200, rng_seed: int = 0) -> np.ndarray:
    try:
        return sample_mesh_count(attached.mesh, count, rng_seed)
    except GeometryError as exc:
        raise KinematicsError(str(exc)) from exc


def target_points_at_states(local_points: np.ndarray, chain: KinematicChain, traj: Trajectory,
                            attached: AttachedObject) -> TargetPointSet:
    local = np.asarray(local_points, dtype=float)
    world = [object_pose(chain, link_poses(chain, s), attached).apply(local) for s in traj]
    return TargetPointSet(local, np.stack(world))


def state_occupancy(env: VoxelGrid3, chain: KinematicChain, state: JointConfig,
                    attached: AttachedObject | None = None) -> VoxelGrid3:
    return overlay_state(env, state_boxes(chain, state, attached))


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def interpolate_trajectory(keyframes: Sequence[JointConfig], steps_per_segment: int) -> Trajectory:
    """Piecewise-linear joint-space interpolation; yaw takes the shorter way round."""
    if len(keyframes) < 2:
        raise KinematicsError("need at least two keyframes")
    if steps_per_segment < 1:
        raise KinematicsError("steps_per_segment must be >= 1")
    n = len(keyframes[0].joints)
    if any(len(k.joints) != n for k in keyframes):
        raise KinematicsError("keyframes have inconsistent joint counts")
    states = [keyframes[0]]
    for a, b in zip(keyframes[:-1], keyframes[1:]):
        qa, qb = np.array(a.joints), np.array(b.joints)
        dyaw = _wrap(b.base[2] - a.base[2])
        for s in range(1, steps_per_segment + 1):
            t = s / steps_per_segment
            if s == steps_per_segment:
                states.append(b)
                continue
            yaw = _wrap(a.base[2] + t * dyaw)
            states.append(JointConfig(
                (a.base[0] + t * (b.base[0] - a.base[0]), a.base[1] + t * (b.base[1] - a.base[1]), yaw),
                tuple(qa + t * (qb - qa))))
    return Trajectory(tuple(states))


# --------------------------------------------------------------------------- file formats


def _geometry_from_spec(spec: dict, root: Path) -> TriMesh:
    if "mesh" in spec:
        mesh = load_mesh(root / spec["mesh"])
    elif "box" in spec:
        mesh = box_mesh(spec["box"])
    else:
        raise KinematicsError("geometry needs 'mesh' or 'box'")
    offset = Pose.from_xyz_rpy(spec.get("xyz", (0, 0, 0)), spec.get("rpy", (0, 0, 0)))
    return TriMesh(offset.apply(mesh.vertices), mesh.triangles)


def chain_from_dict(doc: dict, root: str | Path = ".") -> KinematicChain:
    """Build a chain from the JSON description (see README for the schema)."""
    root = Path(root)
    links = []
    for i, ld in enumerate(doc["links"]):
        try:
            joint = ld.get("joint", {"type": "fixed"})
            kind = joint.get("type", "fixed")
            limits = tuple(joint.get("limits", (0.0, 0.0)))
            links.append(Link(
                name=ld["name"],
                origin=Pose.from_xyz_rpy(ld.get("xyz", (0, 0, 0)), ld.get("rpy", (0, 0, 0))),
                joint=kind,
                axis=tuple(joint.get("axis", (0.0, 0.0, 1.0))),
                limits=(float(limits[0]), float(limits[1])),
                geometry=_geometry_from_spec(ld["geometry"], root) if ld.get("geometry") else None,
            ))
        except KeyError as exc:
            raise KinematicsError(f"links[{i}]: missing field {exc}") from exc
    return KinematicChain(tuple(links), doc.get("name", "chain"))


def load_chain(path: str | Path) -> KinematicChain:
    path = Path(path)
    return chain_from_dict(json.loads(path.read_text()), path.parent)


def config_from_dict(doc: dict) -> JointConfig:
    return JointConfig(tuple(doc.get("base", (0.0, 0.0, 0.0))), tuple(doc.get("joints", ())))


def trajectory_from_dict(doc: dict) -> Trajectory:
    """Either ``{"states": [...]}`` or ``{"keyframes": [...], "steps_per_segment": n}``."""
    if "states" in doc:
        return Trajectory(tuple(config_from_dict(s) for s in doc["states"]))
    frames = [config_from_dict(k) for k in doc["keyframes"]]
    if len(frames) == 1:
        return Trajectory((frames[0],))
    return interpolate_trajectory(frames, int(doc.get("steps_per_segment", 1)))
