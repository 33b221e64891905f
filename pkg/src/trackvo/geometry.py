"""SE(3) poses, pinhole camera model, and frame-to-frame reprojection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8
MIN_DEPTH = 1e-6


class CheiralityViolation(Exception):
    """Reprojected point lies behind the target camera."""


def skew(w):
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def load(cls, path):
        """Read `fx fy cx cy` from a single-line text file."""
        values = [float(tok) for tok in open(path).read().split()]
        if len(values) != 4:
            raise ValueError(f"expected 4 intrinsics values, got {len(values)}")
        return cls(*values)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"{self.fx} {self.fy} {self.cx} {self.cy}\n")


@dataclass(frozen=True)
class Pose:
    """Rigid transform, stored camera-to-world."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-8:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise ValueError("rotation must have det +1")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        return cls(np.array(m[:3, :3]), np.array(m[:3, 3]))

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform points (..., 3) by this pose."""
        return np.asarray(points) @ self.rotation.T + self.translation


def nearest_rotation(r):
    """Closest orthonormal matrix (Frobenius) with det +1."""
    u, _, vt = np.linalg.svd(r)
    sgn = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sgn[2, 2] = -1.0
    return u @ sgn @ vt


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: Pose) -> Pose:
    rt = t.rotation.T
    return Pose(rt, -rt @ t.translation)


def so3_exp(w):
    theta = np.linalg.norm(w)
    k = skew(w)
    if theta < SMALL_ANGLE:
        # 2nd-order Taylor, exact at this scale in double precision
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (np.sin(theta) / theta) * k + ((1 - np.cos(theta)) / theta**2) * (k @ k)


def so3_log(r):
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < SMALL_ANGLE:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        i = int(np.argmax(axis))
        axis = m[:, i] / max(axis[i], 1e-12)
        axis /= np.linalg.norm(axis)
        # fix the sign using the antisymmetric part (zero exactly at pi)
        w_asym = np.array(
            [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
        )
        if np.dot(axis, w_asym) < 0:
            axis = -axis
        return theta * axis
    return (theta / (2.0 * np.sin(theta))) * np.array(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )


def _left_jacobian(w):
    theta = np.linalg.norm(w)
    k = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    return (
        np.eye(3)
        + ((1 - np.cos(theta)) / theta**2) * k
        + ((theta - np.sin(theta)) / theta**3) * (k @ k)
    )


def _left_jacobian_inv(w):
    theta = np.linalg.norm(w)
    k = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    half = theta / 2.0
    return (
        np.eye(3)
        - 0.5 * k
        + (1.0 / theta**2 - np.cos(half) / (2.0 * theta * np.sin(half))) * (k @ k)
    )


def se3_exp(xi) -> Pose:
    """Exponential map; xi = [omega (rad), v (m)]."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    return Pose(so3_exp(w), _left_jacobian(w) @ v)


def se3_log(t: Pose):
    """Inverse of se3_exp; returns [omega, v]."""
    w = so3_log(t.rotation)
    v = _left_jacobian_inv(w) @ t.translation
    return np.concatenate([w, v])


def backproject(k: Intrinsics, x, d):
    """Pixel + depth to a 3D point in the camera frame."""
    u, v = x
    return np.array([(u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d])


def project(k: Intrinsics, p):
    """Camera-frame 3D point to pixel; raises behind the camera."""
    if p[2] <= MIN_DEPTH:
        raise CheiralityViolation(f"depth {p[2]:.3g} behind camera")
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])


def transfer(t_i: Pose, t_j: Pose, k: Intrinsics, x_i, d_i):
    """Map a pixel+depth in frame i into camera j; returns (point_j, depth_j)."""
    p_world = t_i.apply(backproject(k, x_i, d_i))
    p_j = t_j.rotation.T @ (p_world - t_j.translation)
    return p_j, p_j[2]


def reproject(t_i: Pose, t_j: Pose, k: Intrinsics, x_i, d_i):
    """Reproject a pixel observed in frame i (with depth d_i) into frame j."""
    if d_i <= 0:
        raise ValueError("depth must be positive")
    p_j, z_j = transfer(t_i, t_j, k, x_i, d_i)
    if z_j <= MIN_DEPTH:
        raise CheiralityViolation(f"transferred depth {z_j:.3g} behind camera j")
    return project(k, p_j)


def reproject_jacobians(t_i: Pose, t_j: Pose, k: Intrinsics, x_i, d_i):
    """Jacobians of reproject w.r.t. left-multiplied twists on T_i, T_j and depth.

    Returns (j_pose_i (2,6), j_pose_j (2,6), j_depth (2,)) with twist
    ordering [omega, v].
    """
    direction = backproject(k, x_i, 1.0)
    p_world = t_i.apply(direction * d_i)
    rj_t = t_j.rotation.T
    p_j = rj_t @ (p_world - t_j.translation)
    z = p_j[2]
    if z <= MIN_DEPTH:
        raise CheiralityViolation("cannot linearize behind camera j")
    # projection jacobian
    a = np.array(
        [
            [k.fx / z, 0.0, -k.fx * p_j[0] / z**2],
            [0.0, k.fy / z, -k.fy * p_j[1] / z**2],
        ]
    )
    dp_dxi_i = np.hstack([-rj_t @ skew(p_world), rj_t])  # (3,6)
    j_pose_i = a @ dp_dxi_i
    j_pose_j = -j_pose_i
    j_depth = a @ (rj_t @ (t_i.rotation @ direction))
    return j_pose_i, j_pose_j, j_depth
