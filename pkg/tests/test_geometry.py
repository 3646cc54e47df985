import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rslf.errors import DepthDegenerate, ReductionUndefined, ValidationError
from rslf.geometry import (
    CameraPose,
    LightFieldIntrinsics,
    MotionState,
    Viewpoint,
    axis_angle_matrix,
    delta_rotation,
    delta_translation,
    displace,
    gs_projection,
    intrinsic_tensor,
    left_jacobian,
    micro_lens_matrix,
    pinhole_reduction,
    project,
    project_point,
    rotation_from_vector,
    skew,
    thin_lens_matrix,
    vector_from_rotation,
    view_plane_matrix,
)
from rslf.simulate import default_rig, scenario, scenario_to_motion

from conftest import random_intrinsics
from oracles import product_oracle

unit_vectors = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1)


def rodrigues_oracle(a, theta):
    a = np.asarray(a, float) / np.linalg.norm(a)
    ax = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.outer(a, a) * (1 - math.cos(theta)) + np.eye(3) * math.cos(theta) + ax * math.sin(theta)


def homogeneous(R, T):
    M = np.eye(4)
    M[:3, :3], M[:3, 3] = R, T
    return M


def stepwise_projection(p_w, pose, motion, intr, vp):
    """World point to micro-image, one 4x4 matrix at a time."""
    cMw = homogeneous(pose.rotation, pose.translation)
    theta = motion.angular_speed * intr.tau * vp.row
    dR = rodrigues_oracle(motion.axis, theta) if motion.angular_speed else np.eye(3)
    dT = motion.linear_velocity * intr.tau * vp.row
    g = motion.center
    to_g, from_g = homogeneous(np.eye(3), -g), homogeneous(np.eye(3), g)
    moved = from_g @ homogeneous(dR, dT) @ to_g @ cMw @ np.append(p_w, 1.0)
    Kc = np.eye(4)
    Kc[3, 2] = -1.0 / intr.F
    virtual = Kc @ moved
    D = np.eye(4)
    D[:3, 3] = (intr.Ox, intr.Oy, intr.d)
    on_plane = D @ virtual
    Ks = np.array([[intr.f, 0, 0, -intr.f * vp.s], [0, intr.f, 0, -intr.f * vp.t], [0, 0, 1, 0]])
    u, v, w = Ks @ on_plane
    return u / w, v / w


# intrinsic tensor


def test_tensor_on_axis_viewpoint():
    intr = LightFieldIntrinsics(F=0.05, f=0.001, d=0.06)
    K = intrinsic_tensor(intr, Viewpoint(0, 0, 0.0, 0.0))
    expected = np.array([[0.001, 0, 0, 0], [0, 0.001, 0, 0], [0, 0, -0.2, 0.06]])
    np.testing.assert_allclose(K, expected, rtol=1e-14, atol=1e-18)


def test_tensor_off_axis_viewpoint_against_product_oracle():
    intr = LightFieldIntrinsics(F=0.05, f=0.001, d=0.06)
    K = intrinsic_tensor(intr, Viewpoint(0, 0, 0.006, 0.0))
    np.testing.assert_allclose(K[0], [0.001, 0, 1.2e-4, -6e-6], rtol=1e-12, atol=1e-20)
    np.testing.assert_allclose(K, product_oracle(intr, 0.006, 0.0), rtol=1e-14, atol=1e-20)


def test_factor_matrices_compose_to_tensor(rng):
    for _ in range(20):
        intr = random_intrinsics(rng)
        for vp in intr.viewpoints():
            chain = micro_lens_matrix(intr, vp.s, vp.t) @ view_plane_matrix(intr) @ thin_lens_matrix(intr)
            K = intrinsic_tensor(intr, vp)
            np.testing.assert_allclose(K, chain, rtol=1e-14, atol=1e-14 * np.abs(chain).max())


# rotations


def test_delta_rotation_examples():
    zero = MotionState((0, 0, 1), 0.0)
    np.testing.assert_array_equal(delta_rotation(zero, 0.1, 5), np.eye(3))
    moving = MotionState((0, 0, 1), 2.0)
    np.testing.assert_array_equal(delta_rotation(moving, 0.1, 0), np.eye(3))
    quarter = MotionState((0, 0, 1), math.pi / 2)
    np.testing.assert_allclose(delta_rotation(quarter, 1.0, 1), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_delta_rotation_is_rotation_for_random_inputs(rng):
    for _ in range(1000):
        axis = rng.normal(size=3)
        m = MotionState(axis / np.linalg.norm(axis), rng.uniform(0, 10))
        R = delta_rotation(m, rng.uniform(0, 1), int(rng.integers(0, 600)))
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-10)
        assert abs(np.linalg.det(R) - 1) < 1e-10


@given(unit_vectors, st.floats(-3, 3), st.floats(-3, 3))
def test_coaxial_rotations_compose(axis, t1, t2):
    a = np.asarray(axis) / np.linalg.norm(axis)
    np.testing.assert_allclose(
        axis_angle_matrix(a, t1) @ axis_angle_matrix(a, t2), axis_angle_matrix(a, t1 + t2), atol=1e-10
    )


@given(unit_vectors, st.floats(-3, 3))
def test_axis_angle_matches_rodrigues_oracle(axis, theta):
    np.testing.assert_allclose(axis_angle_matrix(np.asarray(axis) / np.linalg.norm(axis), theta), rodrigues_oracle(axis, theta), atol=1e-12)


@given(unit_vectors, st.floats(0, math.pi - 1e-3))
def test_rotation_vector_round_trip(axis, theta):
    w = np.asarray(axis) / np.linalg.norm(axis) * theta
    np.testing.assert_allclose(vector_from_rotation(rotation_from_vector(w)), w, atol=1e-9)


def test_left_jacobian_matches_finite_differences(rng):
    # R(phi + dphi) ~= R(J_l(phi) dphi) R(phi)
    for scale in (1e-9, 1e-3, 0.5, 2.5):
        phi = rng.normal(size=3)
        phi *= scale / np.linalg.norm(phi)
        J = left_jacobian(phi)
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            dR = (rotation_from_vector(phi + e) - rotation_from_vector(phi - e)) / (2 * h)
            numeric = dR @ rotation_from_vector(phi).T
            np.testing.assert_allclose(numeric, skew(J[:, k]), atol=1e-8)


def test_delta_translation_examples():
    m = MotionState((0, 0, 1), 0.0, (0, -0.2, 0))
    np.testing.assert_allclose(delta_translation(m, 1 / 512, 256), [0, -0.1, 0], atol=1e-16)
    np.testing.assert_array_equal(delta_translation(MotionState.static(), 0.1, 3), [0, 0, 0])
    np.testing.assert_array_equal(delta_translation(m, 0.1, 0), [0, 0, 0])


# projection


def test_on_axis_point_maps_to_origin():
    intr = LightFieldIntrinsics(F=0.05, f=0.001, d=0.06)
    ip = project_point([0, 0, 5.0], CameraPose.identity(), MotionState.static(), intr, Viewpoint(0, 0, 0.0, 0.0))
    assert (ip.x, ip.y) == (0.0, 0.0)
    gs = gs_projection([0, 0, 5.0], CameraPose.identity(), intr, Viewpoint(0, 0, 0.0, 0.0))
    assert (gs.x, gs.y) == (0.0, 0.0)


def test_project_point_matches_stepwise_chain_scenario_1():
    intr = default_rig()
    motion = scenario_to_motion(scenario(1), intr.rows)
    pose = CameraPose.identity()
    p = np.array([0.1, 0.2, 5.0])
    for vp in intr.viewpoints():
        ip = project_point(p, pose, motion, intr, vp)
        x, y = stepwise_projection(p, pose, motion, intr, vp)
        assert abs(ip.x - x) <= 1e-12 * max(1.0, abs(x)) and abs(ip.y - y) <= 1e-12 * max(1.0, abs(y))


def test_project_point_matches_stepwise_chain_general(rng):
    for _ in range(200):
        intr = random_intrinsics(rng)
        axis = rng.normal(size=3)
        motion = MotionState(axis / np.linalg.norm(axis), rng.uniform(0, 2), rng.normal(size=3), rng.normal(size=3))
        pose = CameraPose(rotation_from_vector(rng.normal(size=3) * 0.3), rng.normal(size=3) * 0.1)
        p = rng.normal(size=3) + [0, 0, 7]
        vp = intr.viewpoint(int(rng.integers(intr.rows)), int(rng.integers(intr.cols)))
        ip = project_point(p, pose, motion, intr, vp)
        x, y = stepwise_projection(p, pose, motion, intr, vp)
        np.testing.assert_allclose([ip.x, ip.y], [x, y], rtol=1e-10, atol=1e-15)


def test_gs_reduction_zero_motion_and_zero_tau(rng):
    for _ in range(500):
        intr = random_intrinsics(rng)
        axis = rng.normal(size=3)
        motion = MotionState(axis / np.linalg.norm(axis), rng.uniform(0, 2), rng.normal(size=3), rng.normal(size=3))
        still = MotionState(motion.axis, 0.0, (0, 0, 0), motion.center)
        frozen = LightFieldIntrinsics(**{**intr.to_dict(), "tau": 0.0})
        p = rng.normal(size=3) + [0, 0, 7]
        vp = intr.viewpoint(int(rng.integers(intr.rows)), int(rng.integers(intr.cols)))
        gs = gs_projection(p, CameraPose.identity(), intr, vp)
        a = project_point(p, CameraPose.identity(), still, intr, vp)
        b = project_point(p, CameraPose.identity(), motion, frozen, vp)
        assert max(abs(a.x - gs.x), abs(a.y - gs.y), abs(b.x - gs.x), abs(b.y - gs.y)) <= 1e-12


def test_rows_share_one_displaced_point(rng):
    intr = default_rig()
    motion = scenario_to_motion(scenario(9), intr.rows, (0.2, 0.1, 7.0))
    p = np.array([0.3, -0.4, 6.5])
    for row in range(intr.rows):
        q = displace(p, motion, intr.tau, row)
        for col in range(intr.cols):
            vp = intr.viewpoint(row, col)
            rs = project_point(p, CameraPose.identity(), motion, intr, vp)
            gs = gs_projection(q, CameraPose.identity(), intr, vp)
            assert abs(rs.x - gs.x) <= 1e-12 and abs(rs.y - gs.y) <= 1e-12


def test_vectorised_projection_matches_scalar(rng):
    intr = default_rig()
    motion = scenario_to_motion(scenario(4), intr.rows, (0, 0, 7))
    pts = rng.normal(size=(30, 3)) + [0, 0, 7]
    rows = rng.integers(0, 9, 30)
    cols = rng.integers(0, 9, 30)
    x, y, _ = project(pts, intr, rows, cols, motion)
    for k in range(30):
        ip = project_point(pts[k], CameraPose.identity(), motion, intr, intr.viewpoint(rows[k], cols[k]))
        assert abs(ip.x - x[k]) < 1e-15 and abs(ip.y - y[k]) < 1e-15


def test_depth_degenerate():
    intr = default_rig()
    # w = (1 - d/F) z + d vanishes at z = d / (d/F - 1)
    z0 = intr.d / (intr.d / intr.F - 1)
    with pytest.raises(DepthDegenerate):
        project_point([0.1, 0, z0], CameraPose.identity(), MotionState.static(), intr, intr.viewpoint(4, 4))
    with pytest.raises(DepthDegenerate):
        gs_projection([0.1, 0, z0], CameraPose.identity(), intr, intr.viewpoint(4, 4))


# pinhole reduction


def test_pinhole_reduction_example():
    intr = LightFieldIntrinsics(F=0.05, f=0.001, d=0.06, Ox=0.002, Oy=0.003)
    Kp, Dp = pinhole_reduction(intr)
    K0 = intrinsic_tensor(intr, Viewpoint(0, 0, 0.0, 0.0))
    np.testing.assert_allclose(Kp @ Dp, K0, rtol=1e-12, atol=1e-12 * np.abs(K0).max())
    scale = (0.06 / 0.05 - 1) * (0.001 / 0.05)
    np.testing.assert_allclose(Kp[:2, 2], [scale * 0.002, scale * 0.003], rtol=1e-14)


def test_pinhole_reduction_principal_point_vanishes_at_focal_plane():
    intr = LightFieldIntrinsics(F=0.05, f=0.001, d=0.05, Ox=0.002, Oy=0.003)
    Kp, _ = pinhole_reduction(intr)
    assert Kp[0, 2] == 0.0 and Kp[1, 2] == 0.0


@pytest.mark.parametrize("offset", [(0.0, 0.0), (0.0, 0.002), (0.002, 0.0)])
def test_pinhole_reduction_undefined_without_offset(offset):
    intr = LightFieldIntrinsics(F=0.05, f=0.001, d=0.06, Ox=offset[0], Oy=offset[1])
    with pytest.raises(ReductionUndefined):
        pinhole_reduction(intr)


# types


def test_intrinsics_json_round_trip_and_keys(rig):
    data = json.loads(rig.to_json())
    assert sorted(data) == sorted(["F", "f", "Ox", "Oy", "d", "tau", "rows", "cols", "pitch", "origin_s", "origin_t"])
    assert LightFieldIntrinsics.from_json(rig.to_json()) == rig


@pytest.mark.parametrize(
    "field,value",
    [("F", 0.0), ("f", -1.0), ("d", 0.0), ("pitch", 0.0), ("tau", -0.1), ("rows", 0), ("Ox", float("nan"))],
)
def test_intrinsics_validation(rig, field, value):
    with pytest.raises(ValidationError):
        LightFieldIntrinsics(**{**rig.to_dict(), field: value})


def test_intrinsics_rejects_unknown_or_missing_keys(rig):
    with pytest.raises(ValidationError):
        LightFieldIntrinsics.from_dict({**rig.to_dict(), "extra": 1})
    data = rig.to_dict()
    del data["tau"]
    with pytest.raises(ValidationError):
        LightFieldIntrinsics.from_dict(data)


def test_viewpoint_metric_is_injective(rig):
    coords = {(vp.s, vp.t) for vp in rig.viewpoints()}
    assert len(coords) == rig.rows * rig.cols
    with pytest.raises(ValidationError):
        rig.viewpoint(9, 0)


def test_camera_pose_validation():
    with pytest.raises(ValidationError):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        CameraPose(np.eye(3) * 1.001, np.zeros(3))


def test_motion_state_axis_normalised_and_static_convention():
    m = MotionState.from_rotation_vector((0, 0, 0))
    np.testing.assert_array_equal(m.axis, [0, 0, 1])
    assert m.is_static()
    m = MotionState.from_rotation_vector((0.3, 0.0, 0.4), (1, 2, 3), (0, 0, 7))
    assert abs(np.linalg.norm(m.axis) - 1) < 1e-12 and abs(m.angular_speed - 0.5) < 1e-15
    assert MotionState.from_dict(m.to_dict()).to_dict() == m.to_dict()
