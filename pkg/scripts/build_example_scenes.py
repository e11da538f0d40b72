"""Regenerate the bundled example scenes under src/viewplan/data/.

room        one wall segment, one frame material, one target
case_study  same room, three frames installed side by side
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from viewplan.geometry import Pose, box_mesh, merge_meshes, write_off
from viewplan.pipeline import target_pose
from viewplan.robot import JointConfig, chain_from_dict, link_poses

DATA = Path(__file__).resolve().parents[1] / "src" / "viewplan" / "data"

FRAME_T, FRAME_W, FRAME_H = 0.09, 1.0, 1.2
# object pose in the tool frame: tool +x points down onto the top plate
GRASP = Pose.from_xyz_rpy((0, 0, FRAME_H / 2 + 0.02), (0, math.pi / 2, 0)).inverse()
STEPS = 5


def frame_mesh():
    """Stud frame: two end studs, a middle stud, top and bottom plates (local +x = face normal)."""
    s = 0.09
    inner = FRAME_W - 2 * s
    post_h = FRAME_H - 2 * s
    parts = [
        box_mesh((FRAME_T, s, FRAME_H), (0, -(FRAME_W - s) / 2, 0)),
        box_mesh((FRAME_T, s, FRAME_H), (0, (FRAME_W - s) / 2, 0)),
        box_mesh((FRAME_T, inner, s), (0, 0, (FRAME_H - s) / 2)),
        box_mesh((FRAME_T, inner, s), (0, 0, -(FRAME_H - s) / 2)),
        box_mesh((FRAME_T, s, post_h), (0, 0, 0)),
    ]
    return merge_meshes(parts)


def kr_chain():
    def link(name, xyz, joint=None, box=None, center=(0, 0, 0)):
        d = {"name": name, "xyz": list(xyz), "rpy": [0, 0, 0]}
        if joint:
            d["joint"] = joint
        if box:
            d["geometry"] = {"box": list(box), "xyz": list(center)}
        return d

    rz = lambda lo, hi: {"type": "revolute", "axis": [0, 0, 1], "limits": [lo, hi]}
    ry = lambda lo, hi: {"type": "revolute", "axis": [0, 1, 0], "limits": [lo, hi]}
    rx = lambda lo, hi: {"type": "revolute", "axis": [1, 0, 0], "limits": [lo, hi]}
    return {
        "name": "kr60-like",
        "links": [
            link("track_carriage", (0, 0, 0), box=(0.8, 0.8, 0.5), center=(0, 0, 0.25)),
            link("turret", (0, 0, 0.5), rz(-3.2, 3.2), (0.5, 0.5, 0.3), (0, 0, 0.15)),
            link("upper_arm", (0.3, 0, 0.3), ry(-2.0, 1.2), (0.25, 0.25, 1.0), (0, 0, 0.5)),
            link("forearm", (0, 0, 1.0), ry(-2.5, 2.5), (1.0, 0.2, 0.2), (0.5, 0, 0)),
            link("wrist_1", (1.0, 0, 0), rx(-3.2, 3.2), (0.15, 0.15, 0.15), (0.075, 0, 0)),
            link("wrist_2", (0.15, 0, 0), ry(-2.2, 2.2), (0.1, 0.12, 0.12), (0.05, 0, 0)),
            link("flange", (0.1, 0, 0), rx(-3.2, 3.2), (0.05, 0.2, 0.2), (0.025, 0, 0)),
            link("tool0", (0.05, 0, 0)),
        ],
    }


def supervisor_chain():
    return {
        "name": "turtlebot-manipulator",
        "links": [
            {"name": "base", "geometry": {"box": [0.3, 0.3, 0.2], "xyz": [0, 0, 0.1]}},
            {"name": "arm_base", "xyz": [0.0, 0, 0.2]},
            {"name": "link1", "xyz": [0, 0, 0.077], "joint": {"type": "revolute", "axis": [0, 0, 1],
                                                             "limits": [-math.pi, math.pi]}},
            {"name": "link2", "xyz": [0, 0, 0.0], "joint": {"type": "revolute", "axis": [0, 1, 0],
                                                           "limits": [-1.5, 1.5]}},
            {"name": "link3", "xyz": [0.024, 0, 0.128], "joint": {"type": "revolute", "axis": [0, 1, 0],
                                                                 "limits": [-1.5, 1.4]}},
            {"name": "link4", "xyz": [0.124, 0, 0], "joint": {"type": "revolute", "axis": [0, 1, 0],
                                                             "limits": [-1.7, 2.0]}},
            {"name": "camera_link", "xyz": [0.126, 0, 0]},
        ],
    }


SUPERVISOR = {
    "name": "turtlebot-manipulator",
    "chain": "supervisor_chain.json",
    "intrinsics": "d435-depth",
    # camera optical axis (+z) along the last link's +x
    "camera_mount": {"link": "camera_link", "xyz": [0, 0, 0], "rpy": [0, math.pi / 2, 0]},
    "footprint_radius": 0.2,
    "collision": {"radius": 0.25, "height": 0.75},
}


def solve_ik(chain, base, target: Pose, seed):
    lo = np.array([l.limits[0] for l in chain.movable_links])
    hi = np.array([l.limits[1] for l in chain.movable_links])

    def resid(q):
        T = link_poses(chain, JointConfig(base, tuple(q)))[-1]
        dp = T.translation - target.translation
        dr = (T.rotation - target.rotation).ravel()
        return np.concatenate([dp, 0.5 * dr])

    sol = least_squares(resid, np.clip(seed, lo + 1e-6, hi - 1e-6), bounds=(lo, hi), xtol=1e-14, ftol=1e-14)
    err = np.abs(resid(sol.x)).max()
    if err > 1e-6:
        raise RuntimeError(f"IK did not converge (residual {err:.2e})")
    return [float(v) for v in sol.x]


def tool_pose_for(obj: Pose) -> Pose:
    """Tool frame gripping the top plate of ``obj``, approach axis pointing down."""
    return obj @ GRASP.inverse()


def shifted(p: Pose, d) -> Pose:
    return Pose(p.rotation, p.translation + np.asarray(d, dtype=float))


def trajectories_for(chain, order, base, material_pose: Pose, target: Pose):
    home = [0.0, -0.3, 1.2, 0.0, -0.9, 0.0]
    grasp_m = tool_pose_for(material_pose)
    pre_pick = shifted(grasp_m, (0, 0, 0.3))
    heading = lambda p: math.atan2(p.translation[1] - base[1], p.translation[0] - base[0])
    q_pre_pick = solve_ik(chain, base, pre_pick, [heading(pre_pick), 0.3, 0.8, 0, -1.0, 0])
    q_grasp = solve_ik(chain, base, grasp_m, q_pre_pick)
    lift = shifted(grasp_m, (0, 0, 0.15))
    q_lift = solve_ik(chain, base, lift, q_grasp)
    place = tool_pose_for(target)
    pre_place = shifted(place, -0.3 * target.rotation[:, 0] + np.array([0, 0, 0.15]))
    q_pre_place = solve_ik(chain, base, pre_place, [heading(pre_place), 0.3, 0.8, 0, -1.0, 0])
    q_place = solve_ik(chain, base, place, q_pre_place)
    kf = lambda q: {"base": list(base), "joints": q}
    grasp = {"xyz": [float(v) for v in GRASP.translation], "rpy": list(GRASP.rpy)}
    return [
        {"name": f"pick_{order}", "operation": "pick", "target": order, "steps_per_segment": STEPS,
         "keyframes": [kf(home), kf(q_pre_pick), kf(q_grasp)], "attached": None},
        {"name": f"place_{order}", "operation": "place", "target": order, "steps_per_segment": STEPS,
         "keyframes": [kf(q_grasp), kf(q_lift), kf(q_pre_place), kf(q_place)],
         "attached": {"type": "frame", "link": "tool0", "grasp": grasp}},
    ]


def build(name: str, n_targets: int, base_xy, material_xy, floor_lo, floor_hi, starts, root=DATA):
    out = Path(root) / name
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "robots").mkdir(parents=True, exist_ok=True)
    size = (floor_hi[0] - floor_lo[0], floor_hi[1] - floor_lo[1], 0.1)
    center = ((floor_hi[0] + floor_lo[0]) / 2, (floor_hi[1] + floor_lo[1]) / 2, -0.05)
    write_off(box_mesh(size, center), out / "meshes" / "floor.off")
    write_off(box_mesh((0.15, 2.2, 2.5), (3.0, -1.9, 1.25)), out / "meshes" / "wall.off")
    write_off(frame_mesh(), out / "meshes" / "frame.off")
    (out / "robots" / "kr60.json").write_text(json.dumps(kr_chain(), indent=2) + "\n")
    (out / "robots" / "supervisor_chain.json").write_text(json.dumps(supervisor_chain(), indent=2) + "\n")
    (out / "robots" / "supervisor.json").write_text(json.dumps(SUPERVISOR, indent=2) + "\n")
    chain = chain_from_dict(kr_chain())

    materials, targets, trajs = [], [], []
    z = FRAME_H / 2 + 0.01
    for k in range(n_targets):
        order = k + 1
        dy = float(FRAME_W * k)
        base = (base_xy[0], base_xy[1] + dy, 0.0)
        m_pos = (material_xy[0], material_xy[1] + dy, z)
        m_rpy = (0.0, 0.0, 0.0)
        t_pos = (3.0, -0.3 + dy, z)
        t_normal = (1.0, 0.0, 0.0)
        materials.append({"name": f"frame_{order}", "type": "frame", "position": list(m_pos),
                          "rotation": list(m_rpy), "picking_direction": [1.0, 0.0, 0.0],
                          "offset": [0.0, 0.0, 0.0]})
        targets.append({"name": f"target_frame_{order}", "type": "frame", "position": list(t_pos),
                        "normal": list(t_normal), "order": order})
        trajs += trajectories_for(chain, order, base, Pose.from_xyz_rpy(m_pos, m_rpy),
                                  target_pose(t_pos, t_normal))

    scene = {
        "as_built": [{"name": "floor", "mesh": "meshes/floor.off"},
                     {"name": "wall", "mesh": "meshes/wall.off"}],
        "material_types": {"frame": {"mesh": "meshes/frame.off"}},
        "materials": materials,
        "targets": targets,
        "floor": {"as_built": "floor", "surface_height": 0.0},
        "robots": {
            "construction": {"chain": "robots/kr60.json"},
            "supervisors": [
                {"name": f"supervisor_{i + 1}", "model": "robots/supervisor.json", "start": [x, y, 0.0]}
                for i, (x, y) in enumerate(starts)
            ],
        },
        "trajectories": trajs,
    }
    (out / "scene.json").write_text(json.dumps(scene, indent=2) + "\n")
    print(f"wrote {out / 'scene.json'}")


# robot works from beside the partition; the frame travels along its normal into place
ROOM = dict(base_xy=(2.3, -2.2), material_xy=(1.6, -0.3), floor_lo=(-3.0, -4.0), floor_hi=(7.0, 4.0),
            starts=[(-2.5, -3.5), (-2.5, 3.5)])
CASE_STUDY = ROOM

if __name__ == "__main__":
    build("room", 1, **ROOM)
    build("case_study", 3, **CASE_STUDY)
