"""Scene ingestion, end-to-end viewpoint selection runs, reports and export."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import allocation, camera, metrics, optimizer, robot, sampler
from .geometry import GeometryError, Polygon2, Pose, TriMesh, extract_floor_boundary, load_mesh, \
    sample_mesh_surface, transform_mesh
from .voxel import OccupancyGrid2, VoxelGrid3, build_from_points, project_to_2d, write_ply_points

log = logging.getLogger(__name__)

OPERATIONS = ("pick", "place")


class SceneError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, count: int, message: str | None = None):
        self.stage = stage
        self.count = count
        super().__init__(message or f"no candidates left after {stage} (funnel count {count})")


# --------------------------------------------------------------------------- scene model


@dataclass(frozen=True, eq=False)
class AsBuiltObject:
    name: str
    mesh: TriMesh


@dataclass(frozen=True)
class Material:
    name: str
    type: str
    position: tuple[float, float, float]
    rotation: tuple[float, float, float]  # roll, pitch, yaw
    picking_direction: tuple[float, float, float]
    offset: tuple[float, float, float]

    @property
    def pose(self) -> Pose:
        return Pose.from_xyz_rpy(self.position, self.rotation)


@dataclass(frozen=True)
class Target:
    name: str
    type: str
    position: tuple[float, float, float]
    normal: tuple[float, float, float]
    order: int
    installed: bool = False

    @property
    def pose(self) -> Pose:
        return target_pose(self.position, self.normal)


@dataclass(frozen=True, eq=False)
class TrajectorySpec:
    name: str
    operation: str
    target: int
    trajectory: robot.Trajectory
    attached: robot.AttachedObject | None


@dataclass(frozen=True, eq=False)
class SupervisorSpec:
    name: str
    model: sampler.SupervisorModel
    model_ref: str
    start: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class Scene:
    root: Path
    doc: dict
    as_built: tuple[AsBuiltObject, ...]
    material_meshes: dict[str, TriMesh]
    materials: tuple[Material, ...]
    targets: tuple[Target, ...]
    floor_mesh: TriMesh
    floor_height: float
    construction: robot.KinematicChain
    supervisors: tuple[SupervisorSpec, ...]
    trajectories: tuple[TrajectorySpec, ...]

    def target(self, order: int) -> Target:
        for t in self.targets:
            if t.order == order:
                return t
        raise SceneError(f"targets: no target with order {order}")

    def material_for(self, target: Target) -> Material:
        """The material consumed by ``target``: first of its type in the layer."""
        for m in self.materials:
            if m.type == target.type:
                return m
        raise SceneError(f"materials: no material of type {target.type!r} for target {target.order}")

    def trajectory(self, operation: str, order: int) -> TrajectorySpec:
        for t in self.trajectories:
            if t.operation == operation and t.target == order:
                return t
        raise SceneError(f"trajectories: no {operation} trajectory for target {order}")

    def environment_meshes(self, exclude_materials: Sequence[str] = ()) -> list[TriMesh]:
        meshes = [a.mesh for a in self.as_built]
        for m in self.materials:
            if m.name not in exclude_materials:
                meshes.append(transform_mesh(m.pose, self.material_meshes[m.type]))
        return meshes


def target_pose(position: Sequence[float], normal: Sequence[float]) -> Pose:
    """Object frame at ``position`` with local +x along the normal and +z kept up."""
    x = np.asarray(normal, dtype=float)
    x = x / np.linalg.norm(x)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(x, up)) > 1.0 - 1e-9:
        up = np.array([1.0, 0.0, 0.0])
    y = np.cross(up, x)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    return Pose(np.column_stack([x, y, z]), np.asarray(position, dtype=float))


def _req(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise SceneError(f"{where}.{key}: missing field")
    return doc[key]


def _vec(value, where: str, n: int = 3) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise SceneError(f"{where}: expected {n} numbers") from None
    if len(out) != n or not all(math.isfinite(v) for v in out):
        raise SceneError(f"{where}: expected {n} finite numbers")
    return out


def _unit(value, where: str) -> tuple[float, float, float]:
    v = np.array(_vec(value, where))
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        raise SceneError(f"{where}: zero-length direction")
    return tuple(float(c) for c in v / norm)


def _load_mesh_ref(ref: str, root: Path, where: str) -> TriMesh:
    path = root / ref
    if not path.exists():
        raise SceneError(f"{where}: mesh file {ref!r} not found")
    try:
        return load_mesh(path)
    except (GeometryError, ValueError, IndexError) as exc:
        raise SceneError(f"{where}: {exc}") from exc


def _placed_mesh(entry: dict, root: Path, where: str) -> TriMesh:
    mesh = _load_mesh_ref(_req(entry, "mesh", where), root, f"{where}.mesh")
    if "xyz" in entry or "rpy" in entry:
        pose = Pose.from_xyz_rpy(_vec(entry.get("xyz", (0, 0, 0)), f"{where}.xyz"),
                                 _vec(entry.get("rpy", (0, 0, 0)), f"{where}.rpy"))
        mesh = transform_mesh(pose, mesh)
    return mesh


def scene_from_dict(doc: dict, root: str | Path = ".") -> Scene:
    """Validate and load a scene document; errors name the offending path."""
    root = Path(root)
    profiles = camera.load_camera_profiles(root / doc["camera_profiles"]) if "camera_profiles" in doc else None

    as_built = []
    names = set()
    for i, e in enumerate(_req(doc, "as_built", "scene")):
        where = f"as_built[{i}]"
        name = _req(e, "name", where)
        if name in names:
            raise SceneError(f"{where}.name: duplicate name {name!r}")
        names.add(name)
        as_built.append(AsBuiltObject(name, _placed_mesh(e, root, where)))

    material_meshes = {}
    for t, e in _req(doc, "material_types", "scene").items():
        material_meshes[t] = _load_mesh_ref(_req(e, "mesh", f"material_types.{t}"), root,
                                            f"material_types.{t}.mesh")

    materials = []
    for i, e in enumerate(_req(doc, "materials", "scene")):
        where = f"materials[{i}]"
        mtype = _req(e, "type", where)
        if mtype not in material_meshes:
            raise SceneError(f"{where}.type: unknown material type {mtype!r}")
        materials.append(Material(
            name=_req(e, "name", where), type=mtype,
            position=_vec(_req(e, "position", where), f"{where}.position"),
            rotation=_vec(_req(e, "rotation", where), f"{where}.rotation"),
            picking_direction=_unit(_req(e, "picking_direction", where), f"{where}.picking_direction"),
            offset=_vec(_req(e, "offset", where), f"{where}.offset"),
        ))

    targets = []
    for i, e in enumerate(_req(doc, "targets", "scene")):
        where = f"targets[{i}]"
        order = _req(e, "order", where)
        if not isinstance(order, int) or order < 1:
            raise SceneError(f"{where}.order: must be a positive integer")
        targets.append(Target(
            name=_req(e, "name", where), type=_req(e, "type", where),
            position=_vec(_req(e, "position", where), f"{where}.position"),
            normal=_unit(_req(e, "normal", where), f"{where}.normal"),
            order=order, installed=bool(e.get("installed", False)),
        ))
    orders = [t.order for t in targets]
    if len(set(orders)) != len(orders):
        dup = next(o for o in orders if orders.count(o) > 1)
        raise SceneError(f"targets: duplicate order {dup}")
    if sorted(orders) != list(range(1, len(orders) + 1)):
        raise SceneError("targets: orders must be contiguous from 1")
    mtypes = {m.type for m in materials}
    for i, t in enumerate(targets):
        if t.type not in material_meshes:
            raise SceneError(f"targets[{i}].type: unknown material type {t.type!r}")
        if not t.installed and t.type not in mtypes:
            raise SceneError(f"targets[{i}].type: no material of type {t.type!r}")

    floor = _req(doc, "floor", "scene")
    if "as_built" in floor:
        ref = floor["as_built"]
        match = [a for a in as_built if a.name == ref]
        if not match:
            raise SceneError(f"floor.as_built: no as-built object named {ref!r}")
        floor_mesh = match[0].mesh
    else:
        floor_mesh = _placed_mesh(floor, root, "floor")
    floor_height = float(_req(floor, "surface_height", "floor"))

    robots = _req(doc, "robots", "scene")
    cref = _req(_req(robots, "construction", "robots"), "chain", "robots.construction")
    cpath = root / cref
    if not cpath.exists():
        raise SceneError(f"robots.construction.chain: file {cref!r} not found")
    try:
        chain = robot.load_chain(cpath)
    except (robot.KinematicsError, KeyError, GeometryError) as exc:
        raise SceneError(f"robots.construction.chain: {exc}") from exc

    supervisors = []
    for i, e in enumerate(_req(robots, "supervisors", "robots")):
        where = f"robots.supervisors[{i}]"
        mref = _req(e, "model", where)
        mpath = root / mref
        if not mpath.exists():
            raise SceneError(f"{where}.model: file {mref!r} not found")
        try:
            model = sampler.load_supervisor(mpath, profiles)
        except (sampler.SamplingError, robot.KinematicsError, KeyError) as exc:
            raise SceneError(f"{where}.model: {exc}") from exc
        supervisors.append(SupervisorSpec(_req(e, "name", where), model, mref,
                                          _vec(_req(e, "start", where), f"{where}.start")))
    if not supervisors:
        raise SceneError("robots.supervisors: at least one supervising robot required")
    if len({s.model_ref for s in supervisors}) != 1:
        raise SceneError("robots.supervisors: all supervising robots must share one model")

    trajectories = []
    for i, e in enumerate(_req(doc, "trajectories", "scene")):
        where = f"trajectories[{i}]"
        op = _req(e, "operation", where)
        if op not in OPERATIONS:
            raise SceneError(f"{where}.operation: must be 'pick' or 'place'")
        order = _req(e, "target", where)
        if order not in orders:
            raise SceneError(f"{where}.target: no target with order {order}")
        try:
            traj = robot.trajectory_from_dict(e)
            for s in traj:
                robot.check_limits(chain, s)
        except (robot.KinematicsError, KeyError) as exc:
            raise SceneError(f"{where}: {exc}") from exc
        attached = None
        if e.get("attached"):
            a = e["attached"]
            otype = _req(a, "type", f"{where}.attached")
            if otype not in material_meshes:
                raise SceneError(f"{where}.attached.type: unknown material type {otype!r}")
            link = _req(a, "link", f"{where}.attached")
            try:
                chain.link_index(link)
            except robot.KinematicsError:
                raise SceneError(f"{where}.attached.link: no link named {link!r}") from None
            grasp = a.get("grasp", {})
            attached = robot.AttachedObject(
                material_meshes[otype], link,
                Pose.from_xyz_rpy(grasp.get("xyz", (0, 0, 0)), grasp.get("rpy", (0, 0, 0))))
        trajectories.append(TrajectorySpec(_req(e, "name", where), op, order, traj, attached))

    return Scene(root, copy.deepcopy(doc), tuple(as_built), material_meshes, tuple(materials),
                 tuple(targets), floor_mesh, floor_height, chain, tuple(supervisors), tuple(trajectories))


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise SceneError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON ({exc})") from None
    return scene_from_dict(doc, path.parent)


_PATH_KEYS = ("mesh", "chain", "model", "camera_profiles")


def _rebase_paths(node: Any, old_root: Path, new_root: Path) -> Any:
    if isinstance(node, dict):
        out = {}
        for k, v in node.items():
            if k in _PATH_KEYS and isinstance(v, str):
                out[k] = os.path.relpath((old_root / v).resolve(), new_root.resolve())
            else:
                out[k] = _rebase_paths(v, old_root, new_root)
        return out
    if isinstance(node, list):
        return [_rebase_paths(v, old_root, new_root) for v in node]
    return node


def save_scene(scene: Scene, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = _rebase_paths(scene.doc, scene.root, path.parent)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def update_after_install(scene: Scene, target_order: int) -> Scene:
    """Move the consumed material out of the material layer into the as-built layer."""
    target = scene.target(target_order)
    material = scene.material_for(target)
    doc = copy.deepcopy(scene.doc)
    doc["materials"] = [m for m in doc["materials"] if m["name"] != material.name]
    roll, pitch, yaw = target.pose.rpy
    doc["as_built"].append({
        "name": target.name,
        "mesh": doc["material_types"][target.type]["mesh"],
        "xyz": list(target.position),
        "rpy": [roll, pitch, yaw],
    })
    for t in doc["targets"]:
        if t["order"] == target_order:
            t["installed"] = True
    return scene_from_dict(doc, scene.root)


# --------------------------------------------------------------------------- config


@dataclass(frozen=True)
class PipelineConfig:
    sample_count: int = 800
    c_single: float = 0.5
    c_single_target: float = 0.4
    coverage_threshold: float = 0.97
    nsga: optimizer.Nsga2Params = field(default_factory=optimizer.Nsga2Params)
    epsilon: float | None = None  # default 1.5 voxel diagonals
    alpha_threshold: float = math.radians(60.0)
    voxel_resolution: float = 0.05
    base_spacing: float = 0.25
    target_point_count: int = 200
    seed: int = 0
    surface_samples_per_voxel_face: float = 16.0
    grid_padding: float = 0.5
    floor_height_tolerance: float = 0.01

    def __post_init__(self):
        for name in ("c_single", "c_single_target", "coverage_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("sample_count", "target_point_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("voxel_resolution", "base_spacing", "surface_samples_per_voxel_face"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def eps(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 1.5 * math.sqrt(3.0) * self.voxel_resolution

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_threshold_deg"] = math.degrees(d.pop("alpha_threshold"))
        d["epsilon"] = self.eps
        d["nsga"].pop("seed")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "alpha_threshold_deg" in d:
            d["alpha_threshold"] = math.radians(d.pop("alpha_threshold_deg"))
        if "nsga" in d:
            d["nsga"] = optimizer.Nsga2Params(**d["nsga"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: str | Path) -> PipelineConfig:
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


def subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


# --------------------------------------------------------------------------- environment


@dataclass(frozen=True, eq=False)
class Environment:
    grid: VoxelGrid3
    nav_grid: OccupancyGrid2
    floor: list[Polygon2]


def build_environment(scene: Scene, config: PipelineConfig, exclude_materials: Sequence[str] = (),
                      extra_points: np.ndarray | None = None) -> Environment:
    """Voxelize surface samples of the as-built and material layers.

    ``extra_points`` only widen the grid bounds (e.g. the robot envelope).
    """
    meshes = scene.environment_meshes(exclude_materials)
    res = config.voxel_resolution
    density = config.surface_samples_per_voxel_face / res**2
    clouds = [sample_mesh_surface(m, density, subseed(config.seed, 100 + i)) for i, m in enumerate(meshes)]
    pts = np.concatenate(clouds) if clouds else np.zeros((0, 3))

    corners = [m.vertices for m in meshes] + [scene.floor_mesh.vertices]
    if extra_points is not None and len(extra_points):
        corners.append(np.asarray(extra_points))
    allpts = np.concatenate(corners)
    pad = config.grid_padding
    lo = allpts.min(axis=0) - pad
    hi = allpts.max(axis=0) + pad
    # align the vertical grid with the floor surface
    lo[2] = scene.floor_height - res * math.ceil((scene.floor_height - lo[2]) / res)
    grid = build_from_points(pts, res, (lo, hi))

    floor = extract_floor_boundary(scene.floor_mesh, scene.floor_height, config.floor_height_tolerance)
    nav = navigation_grid(scene, grid)
    return Environment(grid, nav, floor)


def navigation_grid(scene: Scene, grid: VoxelGrid3) -> OccupancyGrid2:
    """Project the robot-height band above the floor and inflate by the footprint."""
    model = scene.supervisors[0].model
    z0 = scene.floor_height + grid.resolution
    z1 = scene.floor_height + model.collision_height
    return project_to_2d(grid, z0, z1).inflate(model.footprint_radius)


# --------------------------------------------------------------------------- reporting


@dataclass
class RunReport:
    operation: str
    target: int
    trajectory: str
    seed: int
    status: str
    selection: dict
    metrics: dict
    table: dict
    assignment: dict
    funnel: dict
    config: dict
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("timing")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)


@dataclass(eq=False)
class RunContext:
    """Intermediate products of a run, for export and inspection."""

    scene: Scene
    config: PipelineConfig
    spec: TrajectorySpec
    envelope: robot.MotionEnvelope
    environment: Environment
    object_envelope: robot.MotionEnvelope | None = None
    targets: robot.TargetPointSet | None = None
    state_grids: list[VoxelGrid3] | None = None
    candidates: dict[int, sampler.CandidateViewpoint] = field(default_factory=dict)

    def views(self, ids: Sequence[int]) -> list[camera.CameraView]:
        return [self.candidates[i].view for i in ids]


def _prepare(scene: Scene, config: PipelineConfig, operation: str, target_order: int) -> RunContext:
    if operation not in OPERATIONS:
        raise SceneError(f"operation must be one of {OPERATIONS}")
    spec = scene.trajectory(operation, target_order)
    chain = scene.construction
    attached = spec.attached
    envelope = robot.motion_envelope(chain, spec.trajectory, attached)
    exclude = ()
    if operation == "place":
        # the material is in the gripper, not at its storage spot
        exclude = (scene.material_for(scene.target(target_order)).name,)
    env = build_environment(scene, config, exclude, envelope.points)
    ctx = RunContext(scene, config, spec, envelope, env)
    if attached is not None:
        ctx.object_envelope = robot.object_envelope(chain, spec.trajectory, attached)
        local = robot.sample_target_points(attached, config.target_point_count, subseed(config.seed, 2))
        ctx.targets = robot.target_points_at_states(local, chain, spec.trajectory, attached)
        ctx.state_grids = [robot.state_occupancy(env.grid, chain, s, attached) for s in spec.trajectory]
    return ctx


def _visibility_fn(ctx: RunContext):
    tables: dict[int, np.ndarray] = {}

    def table(cid: int) -> np.ndarray:
        if cid not in tables:
            tables[cid] = camera.visibility_table(ctx.candidates[cid].view, ctx.state_grids,
                                                  ctx.targets.world_points, ctx.config.eps)
        return tables[cid]

    def avg_vis(ids: Sequence[int]) -> float:
        return camera.avg_visibility_from_tables([table(i) for i in ids])

    return avg_vis, table


def _r2(x: float) -> float:
    return float(f"{x:.2f}")


def run_selection(scene: Scene, config: PipelineConfig, operation: str, target_order: int,
                  return_context: bool = False):
    """Full pick/place viewpoint selection; returns a :class:`RunReport`."""
    t_start = time.perf_counter()
    timing = {}
    ctx = _prepare(scene, config, operation, target_order)
    timing["prepare_s"] = time.perf_counter() - t_start
    env, envelope = ctx.environment, ctx.envelope
    model = scene.supervisors[0].model
    n_views = len(scene.supervisors)

    t0 = time.perf_counter()
    bases = sampler.sample_base_positions(env.floor, config.base_spacing)
    cands = sampler.sample_candidates(model, config.sample_count, bases, subseed(config.seed, 1))
    funnel = {"sampled": len(cands)}

    def stage(name: str, kept: list) -> list:
        funnel[name] = len(kept)
        if not kept:
            raise PipelineError(name, 0)
        return kept

    cands = stage("orientation", sampler.filter_orientation(cands, envelope, config.alpha_threshold))
    cands = stage("coverage", sampler.filter_coverage(cands, envelope, config.c_single))
    if ctx.object_envelope is not None:
        cands = stage("target_coverage",
                      sampler.filter_target_coverage(cands, ctx.object_envelope, config.c_single_target))
    else:
        funnel["target_coverage"] = len(cands)
    cands = stage("collision", sampler.filter_collision(
        cands, env.grid, envelope, ctx.state_grids, model, scene.floor_height))
    ctx.candidates = {c.id: c for c in cands}
    timing["filter_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    evaluator = optimizer.CombinationEvaluator.from_candidates(cands, envelope, ctx.targets)
    singles = [optimizer.Individual((c.id,), evaluator.evaluate_ids([c.id]))
               for c in cands if c.coverage >= config.coverage_threshold]
    pool = [c for c in cands if c.coverage < config.coverage_threshold]
    funnel["single_view"] = len(singles)
    funnel["combination_pool"] = len(pool)
    pareto = []
    if len(pool) >= n_views:
        pool_eval = optimizer.CombinationEvaluator.from_candidates(pool, envelope, ctx.targets)
        params = replace(config.nsga, seed=subseed(config.seed, 3))
        pareto = optimizer.nsga2_run(pool, params, n_views=n_views, evaluator=pool_eval)
    funnel["pareto"] = len(pareto)
    if not pareto and not singles:
        raise PipelineError("optimization", 0)
    timing["optimize_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    vis_fn = _visibility_fn(ctx)[0] if ctx.targets is not None else None
    outcome = optimizer.select_final(pareto, singles, config.coverage_threshold, vis_fn)
    timing["select_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    nav = navigation_grid(scene, robot.state_occupancy(
        env.grid, scene.construction, ctx.spec.trajectory.states[0], ctx.spec.attached))
    chosen = [ctx.candidates[i] for i in outcome.candidate_ids]
    goals = [allocation.viewpoint_goal_cell(c, nav) for c in chosen]
    starts = [s.start[:2] for s in scene.supervisors]
    costs, _paths = allocation.navigation_costs(nav, starts, goals)
    assignment = allocation.assign(costs)
    timing["allocate_s"] = time.perf_counter() - t0

    report = _make_report(ctx, outcome, chosen, costs, goals, assignment, funnel, nav)
    timing["total_s"] = time.perf_counter() - t_start
    report.timing = timing
    if return_context:
        return report, ctx
    return report


def _make_report(ctx: RunContext, outcome: optimizer.SelectionOutcome, chosen, costs, goals,
                 assignment: allocation.Assignment, funnel: dict, nav: OccupancyGrid2) -> RunReport:
    scene, config = ctx.scene, ctx.config
    # views ordered by the index of the robot they are assigned to
    ordered = sorted(assignment.robot_to_viewpoint.items())
    views_out = []
    for r, col in ordered:
        c = chosen[col]
        roll, pitch, yaw = c.view.pose.rpy
        views_out.append({
            "robot": scene.supervisors[r].name,
            "candidate_id": c.id,
            "camera_position": [float(v) for v in c.view.position],
            "camera_rpy": [roll, pitch, yaw],
            "base": list(c.config.base),
            "joints": list(c.config.joints),
            "goal_cell": list(goals[col]),
            "path_cost": float(costs[r, col]),
        })
    views = [chosen[col].view for _, col in ordered]
    d_env = metrics.view_distances_pick(views, ctx.envelope)
    m = {"coverage": metrics.coverage(views, ctx.envelope),
         "distance_objective": outcome.distance,
         "d_envelope": [float(v) for v in d_env]}
    table = {"C(V)": _r2(m["coverage"])}
    for n, v in enumerate(d_env, 1):
        table[f"d(G(s),v{n})"] = _r2(v)
    if ctx.targets is not None:
        d_obj = metrics.view_distances_place(views, ctx.targets)
        m["d_object"] = [float(v) for v in d_obj]
        m["avg_visibility"] = float(outcome.avg_visibility)
        for n, v in enumerate(d_obj, 1):
            table[f"d(obj,v{n})"] = _r2(v)
        table["AvgVis(V)"] = _r2(m["avg_visibility"])
    return RunReport(
        operation=ctx.spec.operation,
        target=ctx.spec.target,
        trajectory=ctx.spec.name,
        seed=config.seed,
        status="below_threshold" if outcome.below_threshold else "ok",
        selection={"kind": outcome.kind, "candidate_ids": list(outcome.candidate_ids), "views": views_out},
        metrics=m,
        table=table,
        assignment={
            "total_cost": assignment.total_cost,
            "robot_to_candidate": {scene.supervisors[r].name: chosen[col].id for r, col in ordered},
            "cost_matrix": [[float(x) if math.isfinite(x) else None for x in row] for row in costs],
            "nav_resolution": nav.resolution,
        },
        funnel=funnel,
        config=config.to_dict(),
    )


# --------------------------------------------------------------------------- recompute / export


def recompute(report: RunReport | dict, scene: Scene, config: PipelineConfig) -> tuple[dict, RunContext]:
    """Recompute report metrics from the scene, config and selected configurations."""
    rep = report if isinstance(report, RunReport) else RunReport.from_dict(report)
    ctx = _prepare(scene, config, rep.operation, rep.target)
    model = scene.supervisors[0].model
    views = []
    for v in rep.selection["views"]:
        cfg = robot.JointConfig(tuple(v["base"]), tuple(v["joints"]))
        cand = sampler.CandidateViewpoint(v["candidate_id"], model.camera_view(cfg), cfg)
        ctx.candidates[cand.id] = cand
        views.append(cand.view)
    out = {"coverage": metrics.coverage(views, ctx.envelope),
           "d_envelope": [float(x) for x in metrics.view_distances_pick(views, ctx.envelope)]}
    if ctx.targets is not None:
        out["d_object"] = [float(x) for x in metrics.view_distances_place(views, ctx.targets)]
        out["avg_visibility"] = camera.avg_visibility(views, ctx.state_grids, ctx.targets.world_points,
                                                      config.eps)
    return out, ctx


def frustum_segments(view: camera.CameraView, length: float | None = None) -> np.ndarray:
    """(8, 2, 3) segments: four apex edges and the far rectangle."""
    k = view.intrinsics
    length = k.max_range if length is None else length
    th, tv = math.tan(0.5 * k.fov_h), math.tan(0.5 * k.fov_v)
    dirs = np.array([[th, tv, 1.0], [-th, tv, 1.0], [-th, -tv, 1.0], [th, -tv, 1.0]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    far = view.pose.apply(dirs * length)
    apex = view.position
    segs = [(apex, f) for f in far] + [(far[i], far[(i + 1) % 4]) for i in range(4)]
    return np.array(segs)


def write_ply_segments(path: str | Path, segments: np.ndarray) -> None:
    S = np.asarray(segments, dtype=float).reshape(-1, 2, 3)
    verts = S.reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(verts)}",
             "property double x", "property double y", "property double z",
             f"element edge {len(S)}", "property int vertex1", "property int vertex2", "end_header"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
    lines += [f"{2 * i} {2 * i + 1}" for i in range(len(S))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply_vertices(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Coordinates (and RGB if present) from an ASCII PLY written by this module."""
    lines = Path(path).read_text().splitlines()
    n = 0
    has_color = False
    end = 0
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            n = int(line.split()[2])
        if line.startswith("property uchar red"):
            has_color = True
        if line == "end_header":
            end = i + 1
            break
    rows = [l.split() for l in lines[end:end + n]]
    xyz = np.array([[float(v) for v in r[:3]] for r in rows]).reshape(-1, 3)
    rgb = np.array([[int(v) for v in r[3:6]] for r in rows]).reshape(-1, 3) if has_color else None
    return xyz, rgb


VISIBLE_RGB = (0, 200, 0)
OCCLUDED_RGB = (220, 0, 0)


def export_geometry(report: RunReport, scene: Scene, path: str | Path,
                    config: PipelineConfig | None = None, context: RunContext | None = None) -> list[Path]:
    """Write envelope/target-point/frustum PLY files and the JSON report into ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write export directory {out}: {exc}") from exc
    if context is None:
        config = config or PipelineConfig.from_dict(dict(report.config, seed=report.seed))
        _, context = recompute(report, scene, config)
    ids = [v["candidate_id"] for v in report.selection["views"]]
    views = context.views(ids)
    written = []
    p = out / "envelope.ply"
    write_ply_points(p, context.envelope.points)
    written.append(p)
    if context.targets is not None:
        vis = np.stack([
            np.logical_or.reduce([camera.points_visibility(v, g, pts, context.config.eps) for v in views])
            for g, pts in zip(context.state_grids, context.targets.world_points)])
        colors = np.where(vis.reshape(-1, 1), VISIBLE_RGB, OCCLUDED_RGB)
        p = out / "target_points.ply"
        write_ply_points(p, context.targets.world_points.reshape(-1, 3), colors)
        written.append(p)
    p = out / "frustums.ply"
    write_ply_segments(p, np.concatenate([frustum_segments(v) for v in views]))
    written.append(p)
    p = out / "report.json"
    p.write_text(report.to_json())
    written.append(p)
    return written
