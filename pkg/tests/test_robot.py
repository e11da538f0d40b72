import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial import Delaunay

from oracles import fk_matrix_chain
from viewplan.geometry import Pose, box_mesh, sample_mesh_count
from viewplan.robot import (AttachedObject, JointConfig, KinematicsError, Trajectory, chain_from_dict,
                            forward_kinematics, interpolate_trajectory, link_poses, motion_envelope,
                            object_envelope, sample_target_points, state_occupancy, target_points_at_states,
                            trajectory_from_dict)
from viewplan.voxel import VoxelGrid3


def planar_chain(l1, l2):
    rz = {"type": "revolute", "axis": [0, 0, 1], "limits": [-math.pi, math.pi]}
    return chain_from_dict({"links": [
        {"name": "l1", "joint": rz},
        {"name": "l2", "xyz": [l1, 0, 0], "joint": rz},
        {"name": "tip", "xyz": [l2, 0, 0]},
    ]})


def random_chain_doc(rng, n_links=None, with_geometry=True):
    n_links = n_links or int(rng.integers(2, 8))
    links = []
    for i in range(n_links):
        d = {"name": f"link{i}", "xyz": rng.uniform(-0.5, 0.5, 3).tolist(),
             "rpy": rng.uniform(-math.pi, math.pi, 3).tolist()}
        kind = rng.choice(["revolute", "prismatic", "fixed"], p=[0.6, 0.2, 0.2])
        if kind != "fixed":
            d["joint"] = {"type": str(kind), "axis": rng.normal(size=3).tolist(), "limits": [-2.0, 2.0]}
        if with_geometry and rng.random() < 0.7:
            d["geometry"] = {"box": rng.uniform(0.05, 0.4, 3).tolist(), "xyz": rng.uniform(-0.1, 0.1, 3).tolist()}
        links.append(d)
    return {"name": "random", "links": links}


def random_state(rng, chain):
    base = (rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-math.pi, math.pi))
    return JointConfig(base, tuple(rng.uniform(l.limits[0], l.limits[1]) for l in chain.movable_links))


def cube_chain():
    return chain_from_dict({"links": [{"name": "cube", "geometry": {"box": [1, 1, 1]}}]})


# --------------------------------------------------------------------------- forward kinematics


def test_zero_config_is_cumulative_offsets():
    doc = random_chain_doc(np.random.default_rng(0))
    chain = chain_from_dict(doc)
    poses = link_poses(chain, JointConfig((0, 0, 0), (0.0,) * chain.dof))
    T = np.eye(4)
    for ld, P in zip(doc["links"], poses):
        T = T @ Pose.from_xyz_rpy(ld["xyz"], ld["rpy"]).matrix()
        assert np.allclose(P.matrix(), T, atol=1e-12)


def test_planar_two_link_quarter_turn():
    chain = planar_chain(0.7, 0.4)
    tip = link_poses(chain, JointConfig(joints=(math.pi / 2, 0)))[-1].translation
    assert np.allclose(tip, [0, 1.1, 0], atol=1e-9)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi),
       st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_planar_two_link_closed_form(t1, t2, l1, l2):
    chain = planar_chain(l1, l2)
    tip = link_poses(chain, JointConfig(joints=(t1, t2)))[-1].translation
    expect = [l1 * math.cos(t1) + l2 * math.cos(t1 + t2), l1 * math.sin(t1) + l2 * math.sin(t1 + t2), 0]
    assert np.allclose(tip, expect, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_random_chain_matches_matrix_oracle(seed):
    rng = np.random.default_rng(seed)
    doc = random_chain_doc(rng)
    chain = chain_from_dict(doc)
    state = random_state(rng, chain)
    got = link_poses(chain, state)
    expect = fk_matrix_chain(doc["links"], state.joints, state.base)
    for P, T in zip(got, expect):
        assert np.allclose(P.matrix(), T, atol=1e-9)


def test_joint_perturbation_moves_only_descendants():
    rng = np.random.default_rng(3)
    doc = random_chain_doc(rng, 6)
    chain = chain_from_dict(doc)
    state = random_state(rng, chain)
    k = 1 if chain.dof > 1 else 0
    q = list(state.joints)
    q[k] += 1e-3
    a = link_poses(chain, state)
    b = link_poses(chain, JointConfig(state.base, tuple(q)))
    first_moved = chain.links.index(chain.movable_links[k])
    for i, (pa, pb) in enumerate(zip(a, b)):
        if i < first_moved:
            assert pa.allclose(pb, atol=0)


def test_limit_violation_names_joint():
    chain = planar_chain(1, 1)
    with pytest.raises(KinematicsError, match="'l2'"):
        link_poses(chain, JointConfig(joints=(0, 4.0)))
    with pytest.raises(KinematicsError):
        link_poses(chain, JointConfig(joints=(0,)))


def test_attached_object_pose():
    chain = planar_chain(1, 1)
    grasp = Pose.from_xyz_rpy((0.1, 0, 0))
    att = AttachedObject(box_mesh((0.1, 0.1, 0.1)), "tip", grasp)
    poses = forward_kinematics(chain, JointConfig(joints=(0, 0)), att)
    assert len(poses) == len(chain.links) + 1
    assert np.allclose(poses[-1].translation, [2.1, 0, 0])


# --------------------------------------------------------------------------- envelopes


def test_single_cube_envelope_is_its_corners():
    env = motion_envelope(cube_chain(), Trajectory((JointConfig(),)))
    assert len(env) == 8
    assert sorted(map(tuple, np.round(env.points, 12))) == sorted(
        (x, y, z) for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5))


def test_repeated_state_duplicates_corners():
    env = motion_envelope(cube_chain(), Trajectory((JointConfig(), JointConfig())))
    assert len(env) == 16
    assert np.array_equal(env.points[:8], env.points[8:])


def test_ten_state_three_link_chain_with_object():
    rng = np.random.default_rng(4)
    rz = {"type": "revolute", "axis": [0, 0, 1], "limits": [-3, 3]}
    ry = {"type": "revolute", "axis": [0, 1, 0], "limits": [-3, 3]}
    chain = chain_from_dict({"links": [
        {"name": "a", "joint": rz, "geometry": {"box": [0.3, 0.3, 0.5], "xyz": [0, 0, 0.25]}},
        {"name": "b", "xyz": [0, 0, 0.5], "joint": ry, "geometry": {"box": [0.8, 0.2, 0.2], "xyz": [0.4, 0, 0]}},
        {"name": "c", "xyz": [0.8, 0, 0], "joint": ry, "geometry": {"box": [0.6, 0.1, 0.1], "xyz": [0.3, 0, 0]}},
        {"name": "tool", "xyz": [0.6, 0, 0]},
    ]})
    att = AttachedObject(box_mesh((0.4, 0.2, 0.1)), "tool", Pose.from_xyz_rpy((0.2, 0, 0)))
    traj = Trajectory(tuple(random_state(rng, chain) for _ in range(10)))
    env = motion_envelope(chain, traj, att)
    assert len(env) == 8 * 10 * 4
    for i, state in enumerate(traj):
        corners = env.state_corners(i)
        poses = forward_kinematics(chain, state, att)
        meshes = [(poses[chain.link_index(l.name)], l.geometry) for l in chain.geometric_links]
        meshes.append((poses[-1], att.mesh))
        for (pose, mesh), box in zip(meshes, corners):
            hull = Delaunay(box)
            verts = pose.apply(mesh.vertices)
            # points on the hull boundary may test marginally outside; shrink toward the centroid
            c = box.mean(axis=0)
            assert np.all(hull.find_simplex(c + (verts - c) * (1 - 1e-9)) >= 0)


def test_no_geometry_error():
    with pytest.raises(KinematicsError, match="no geometry"):
        motion_envelope(planar_chain(1, 1), Trajectory((JointConfig(joints=(0, 0)),)))


def test_object_envelope_counts_and_translation():
    px = {"type": "prismatic", "axis": [1, 0, 0], "limits": [-5, 5]}
    chain = chain_from_dict({"links": [{"name": "slide", "joint": px}]})
    att = AttachedObject(box_mesh((0.2, 0.3, 0.4)), "slide")
    still = Trajectory(tuple(JointConfig(joints=(0.0,)) for _ in range(3)))
    env = object_envelope(chain, still, att)
    assert len(env) == 24
    assert np.array_equal(env.points[:8], env.points[8:16])
    moving = Trajectory(tuple(JointConfig(joints=(float(x),)) for x in (0.0, 1.0, 2.5)))
    env = object_envelope(chain, moving, att)
    cents = env.points.reshape(3, 8, 3).mean(axis=1)
    assert np.allclose(cents - cents[0], [[0, 0, 0], [1, 0, 0], [2.5, 0, 0]], atol=1e-12)
    with pytest.raises(KinematicsError):
        object_envelope(chain, moving, None)


# --------------------------------------------------------------------------- target points


def test_target_points_on_surface_and_deterministic():
    mesh = box_mesh((0.09, 1.0, 1.2))
    att = AttachedObject(mesh, "tip")
    pts = sample_target_points(att, 200, 5)
    assert pts.shape == (200, 3)
    half = np.array([0.045, 0.5, 0.6])
    on_face = np.any(np.isclose(np.abs(pts), half, atol=1e-12), axis=1)
    assert on_face.all() and np.all(np.abs(pts) <= half + 1e-12)
    assert np.array_equal(pts, sample_target_points(att, 200, 5))
    assert sample_target_points(att, 1, 5).shape == (1, 3)


def test_target_points_identity_and_rigidity():
    rng = np.random.default_rng(9)
    chain = planar_chain(0.5, 0.5)
    att = AttachedObject(box_mesh((0.3, 0.2, 0.1)), "l1")
    local = sample_mesh_count(att.mesh, 30, 1)
    ident = target_points_at_states(local, chain, Trajectory((JointConfig(joints=(0, 0)),)), att)
    assert np.allclose(ident.world_points[0], local, atol=1e-15)

    att = AttachedObject(att.mesh, "tip", Pose.from_xyz_rpy((0.1, 0.2, 0.3), (0.3, 0.2, 0.1)))
    traj = Trajectory(tuple(random_state(rng, chain) for _ in range(6)))
    tps = target_points_at_states(local, chain, traj, att)
    ref = np.linalg.norm(local[:, None] - local[None], axis=-1)
    for W in tps.world_points:
        assert np.allclose(np.linalg.norm(W[:, None] - W[None], axis=-1), ref, atol=1e-9)


def test_target_points_pure_translation():
    px = {"type": "prismatic", "axis": [0, 1, 0], "limits": [-5, 5]}
    chain = chain_from_dict({"links": [{"name": "slide", "joint": px}]})
    att = AttachedObject(box_mesh((0.2, 0.2, 0.2)), "slide")
    local = sample_mesh_count(att.mesh, 10, 0)
    traj = Trajectory(tuple(JointConfig(joints=(float(y),)) for y in (0, 1, 2)))
    tps = target_points_at_states(local, chain, traj, att)
    for k, W in enumerate(tps.world_points):
        assert np.allclose(W, local + [0, k, 0], atol=1e-15)


# --------------------------------------------------------------------------- occupancy


def test_state_occupancy():
    env = VoxelGrid3((-1.5, -1.5, -1.5), 0.1, np.zeros((30, 30, 30), dtype=bool))
    assert state_occupancy(env, planar_chain(1, 1), JointConfig(joints=(0, 0))) is env
    out = state_occupancy(env, cube_chain(), JointConfig())
    assert out.n_occupied > 0
    centers = out.occupied_centers()
    box = cube_chain().local_boxes["cube"]
    assert np.all(box.surface_distance(centers) <= 0.5 * env.voxel_diagonal + 1e-12)
    rng = np.random.default_rng(0)
    busy = env.with_occupancy(rng.random(env.dims) < 0.05)
    assert state_occupancy(busy, cube_chain(), JointConfig()).n_occupied >= busy.n_occupied


# --------------------------------------------------------------------------- interpolation


def test_two_keyframes_one_step():
    a, b = JointConfig((0, 0, 0), (0.0,)), JointConfig((1, 0, 0), (1.0,))
    assert interpolate_trajectory([a, b], 1).states == (a, b)


def test_linear_values():
    traj = interpolate_trajectory([JointConfig(joints=(0.0,)), JointConfig(joints=(1.0,))], 4)
    assert [s.joints[0] for s in traj] == pytest.approx([0, 0.25, 0.5, 0.75, 1.0])


def test_yaw_takes_short_way():
    a = JointConfig((0, 0, math.radians(170)), ())
    b = JointConfig((0, 0, math.radians(-170)), ())
    mid = interpolate_trajectory([a, b], 2).states[1].base[2]
    assert abs(abs(mid) - math.pi) < 1e-12


def test_interpolation_errors():
    with pytest.raises(KinematicsError):
        interpolate_trajectory([JointConfig(joints=(0.0,)), JointConfig(joints=(0.0, 1.0))], 2)
    with pytest.raises(KinematicsError):
        interpolate_trajectory([JointConfig()], 2)


def test_trajectory_from_dict_forms():
    t = trajectory_from_dict({"keyframes": [{"joints": [0]}, {"joints": [1]}], "steps_per_segment": 2})
    assert len(t) == 3
    t = trajectory_from_dict({"states": [{"base": [1, 2, 0], "joints": [0.5]}]})
    assert t.states[0].base == (1.0, 2.0, 0.0)


def test_chain_errors():
    with pytest.raises(KinematicsError):
        chain_from_dict({"links": [{"name": "a"}, {"name": "a"}]})
    with pytest.raises(KinematicsError):
        chain_from_dict({"links": [{"name": "a", "joint": {"type": "ball"}}]})
    with pytest.raises(KinematicsError):
        chain_from_dict({"links": [{"name": "a", "joint": {"type": "revolute", "limits": [1, -1]}}]})
    with pytest.raises(KinematicsError, match="links\\[0\\]"):
        chain_from_dict({"links": [{"xyz": [0, 0, 0]}]})
