"""SE(3) maps, camera model, and reprojection Jacobians."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackvo.geometry import (
    CheiralityViolation,
    Intrinsics,
    Pose,
    backproject,
    compose,
    inverse,
    nearest_rotation,
    project,
    reproject,
    reproject_jacobians,
    se3_exp,
    se3_log,
    so3_exp,
    transfer,
)

RNG = np.random.default_rng(12345)


def random_pose(rng, max_angle=3.0):
    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * rng.uniform(0, max_angle)
    return Pose(so3_exp(w), rng.normal(size=3))


# -- exp / log ---------------------------------------------------------------


def test_exp_zero_twist_is_identity():
    pose = se3_exp(np.zeros(6))
    np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(pose.translation, np.zeros(3), atol=1e-15)


def test_exp_quarter_turn_about_z():
    pose = se3_exp([0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0])
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(pose.rotation, expected, atol=1e-12)
    np.testing.assert_allclose(pose.translation, np.zeros(3), atol=1e-15)


def test_log_identity_is_zero():
    np.testing.assert_allclose(se3_log(Pose.identity()), np.zeros(6), atol=1e-15)


def test_log_quarter_turn_about_z():
    r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    xi = se3_log(Pose(r, np.zeros(3)))
    np.testing.assert_allclose(xi[:3], [0.0, 0.0, np.pi / 2], atol=1e-12)


def test_exp_log_round_trip_100_random_twists():
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = rng.normal(size=3)
        w = w / np.linalg.norm(w) * rng.uniform(0, 3.0)
        xi = np.concatenate([w, rng.normal(size=3) * 2.0])
        np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)


def test_log_exp_round_trip_random_poses():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pose = random_pose(rng)
        back = se3_exp(se3_log(pose))
        np.testing.assert_allclose(back.rotation, pose.rotation, atol=1e-9)
        np.testing.assert_allclose(back.translation, pose.translation, atol=1e-9)


def test_log_handles_half_turn():
    # rotation by exactly pi, where the antisymmetric part vanishes
    for axis in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]),
                 np.array([1.0, 1.0, 0]) / np.sqrt(2)):
        r = so3_exp(np.pi * axis)
        w = se3_log(Pose(r, np.zeros(3)))[:3]
        np.testing.assert_allclose(so3_exp(w), r, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6))
def test_exp_always_produces_valid_pose(xi):
    pose = se3_exp(xi)
    np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(pose.rotation) - 1.0) < 1e-9


def test_small_angle_series_matches_closed_form():
    xi = np.array([1e-9, -2e-9, 1e-9, 0.5, -0.2, 0.1])
    np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-15)


# -- group ops ---------------------------------------------------------------


def test_compose_with_identity():
    pose = random_pose(np.random.default_rng(2))
    out = compose(Pose.identity(), pose)
    np.testing.assert_allclose(out.matrix(), pose.matrix(), atol=1e-15)


def test_double_inverse_is_identity_map():
    pose = random_pose(np.random.default_rng(3))
    np.testing.assert_allclose(inverse(inverse(pose)).matrix(), pose.matrix(), atol=1e-12)


def test_compose_matches_homogeneous_matrix_product():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(
            compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-12
        )


def test_compose_inverse_is_identity():
    pose = random_pose(np.random.default_rng(5))
    out = compose(pose, inverse(pose))
    np.testing.assert_allclose(out.matrix(), np.eye(4), atol=1e-12)


def test_nearest_rotation_projects_noisy_matrix():
    rng = np.random.default_rng(6)
    r = random_pose(rng).rotation
    noisy = r + rng.normal(size=(3, 3)) * 1e-4
    fixed = nearest_rotation(noisy)
    np.testing.assert_allclose(fixed.T @ fixed, np.eye(3), atol=1e-12)
    assert np.abs(fixed - r).max() < 1e-3


# -- validation --------------------------------------------------------------


def test_pose_rejects_non_orthonormal_rotation():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.1, np.zeros(3))


def test_pose_rejects_reflection():
    m = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Pose(m, np.zeros(3))


def test_intrinsics_rejects_nonpositive_focal():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 100.0, 50.0, 50.0)


def test_intrinsics_file_round_trip(tmp_path):
    k = Intrinsics(240.0, 241.5, 160.0, 120.25)
    path = tmp_path / "intrinsics.txt"
    k.save(path)
    back = Intrinsics.load(path)
    assert (back.fx, back.fy, back.cx, back.cy) == (240.0, 241.5, 160.0, 120.25)


def test_intrinsics_load_rejects_wrong_field_count(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError):
        Intrinsics.load(path)


# -- projection --------------------------------------------------------------

K = Intrinsics(100.0, 100.0, 50.0, 50.0)


def test_project_backproject_round_trip():
    xy = np.array([37.5, 61.25])
    p = backproject(K, xy, 4.2)
    np.testing.assert_allclose(project(K, p), xy, atol=1e-12)


def test_project_rejects_point_behind_camera():
    with pytest.raises(CheiralityViolation):
        project(K, np.array([0.0, 0.0, -1.0]))


def test_reproject_identity_pose_is_identity_map():
    pose = random_pose(np.random.default_rng(7))
    for depth in (0.5, 2.0, 100.0):
        out = reproject(pose, pose, K, np.array([31.0, 72.0]), depth)
        np.testing.assert_allclose(out, [31.0, 72.0], atol=1e-9)


def test_reproject_translated_camera_hand_case():
    # principal-ray point at depth 2; camera j moved +0.1 m along camera X,
    # so the point appears shifted by -fx * 0.1 / 2 = -5 px
    t_i = Pose.identity()
    t_j = Pose(np.eye(3), np.array([0.1, 0.0, 0.0]))
    out = reproject(t_i, t_j, K, np.array([50.0, 50.0]), 2.0)
    np.testing.assert_allclose(out, [45.0, 50.0], atol=1e-12)


def test_reproject_round_trip_through_second_frame():
    rng = np.random.default_rng(8)
    for _ in range(20):
        t_i, t_j = random_pose(rng), random_pose(rng)
        x_i = rng.uniform(20, 80, size=2)
        d_i = rng.uniform(2.0, 10.0)
        p_j, z_j = transfer(t_i, t_j, K, x_i, d_i)
        if z_j <= 1e-3:
            continue
        x_j = project(K, p_j)
        back = reproject(t_j, t_i, K, x_j, z_j)
        np.testing.assert_allclose(back, x_i, atol=1e-9)


def test_reproject_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        reproject(Pose.identity(), Pose.identity(), K, np.array([50.0, 50.0]), 0.0)


def test_reproject_flags_cheirality_violation():
    t_j = Pose(np.eye(3), np.array([0.0, 0.0, 5.0]))  # camera j past the point
    with pytest.raises(CheiralityViolation):
        reproject(Pose.identity(), t_j, K, np.array([50.0, 50.0]), 2.0)


# -- jacobians ---------------------------------------------------------------


def test_reprojection_jacobians_match_finite_differences():
    rng = np.random.default_rng(9)
    eps = 1e-6
    for _ in range(20):
        t_i = random_pose(rng, max_angle=0.5)
        t_j = random_pose(rng, max_angle=0.5)
        x_i = rng.uniform(30, 70, size=2)
        d_i = rng.uniform(3.0, 8.0)
        try:
            j_i, j_j, j_d = reproject_jacobians(t_i, t_j, K, x_i, d_i)
            base = reproject(t_i, t_j, K, x_i, d_i)
        except CheiralityViolation:
            continue

        for axis in range(6):
            delta = np.zeros(6)
            delta[axis] = eps
            plus = reproject(compose(se3_exp(delta), t_i), t_j, K, x_i, d_i)
            minus = reproject(compose(se3_exp(-delta), t_i), t_j, K, x_i, d_i)
            fd = (plus - minus) / (2 * eps)
            np.testing.assert_allclose(j_i[:, axis], fd, rtol=1e-4, atol=1e-4)

            plus = reproject(t_i, compose(se3_exp(delta), t_j), K, x_i, d_i)
            minus = reproject(t_i, compose(se3_exp(-delta), t_j), K, x_i, d_i)
            fd = (plus - minus) / (2 * eps)
            np.testing.assert_allclose(j_j[:, axis], fd, rtol=1e-4, atol=1e-4)

        fd = (
            reproject(t_i, t_j, K, x_i, d_i + eps)
            - reproject(t_i, t_j, K, x_i, d_i - eps)
        ) / (2 * eps)
        np.testing.assert_allclose(j_d, fd, rtol=1e-4, atol=1e-4)
        assert np.isfinite(base).all()
