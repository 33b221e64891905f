"""Trajectory metrics (ATE, RPE) and TUM-format trajectory files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .geometry import Pose, compose, inverse

ASSOC_TOLERANCE = 0.02


class ParseError(Exception):
    pass


class PathTooShort(Exception):
    pass


class DegenerateAlignment(Exception):
    pass


class AssociationError(Exception):
    pass


@dataclass
class Trajectory:
    timestamps: np.ndarray  # (N,) strictly increasing seconds
    poses: list  # N Pose

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamp/pose count mismatch")
        if len(self.timestamps) >= 2 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self):
        return np.array([p.translation for p in self.poses])

    def transformed(self, scale, rotation, translation):
        """Apply a similarity to every pose (rotations composed, positions mapped)."""
        poses = [
            Pose(rotation @ p.rotation, scale * (rotation @ p.translation) + translation)
            for p in self.poses
        ]
        return Trajectory(self.timestamps.copy(), poses)


def umeyama_align(est: Trajectory, gt: Trajectory, with_scale=True):
    """Least-squares similarity (s, R, t) mapping est positions onto gt."""
    if len(est) != len(gt):
        raise ValueError("trajectories must have equal length")
    x = est.positions
    y = gt.positions
    n = len(x)
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    cov = yc.T @ xc / n
    rank = np.linalg.matrix_rank(cov, tol=1e-12)
    if n < 3 or rank < 2:
        # translation-only fallback
        return 1.0, np.eye(3), my - mx
    u, d, vt = np.linalg.svd(cov)
    sgn = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sgn[2, 2] = -1.0
    r = u @ sgn @ vt
    var_x = (xc**2).sum() / n
    s = float(np.trace(np.diag(d) @ sgn) / var_x) if with_scale else 1.0
    t = my - s * r @ mx
    return s, r, t


def ate_rmse(est: Trajectory, gt: Trajectory, with_scale=True):
    """RMSE of position residuals after similarity alignment."""
    s, r, t = umeyama_align(est, gt, with_scale=with_scale)
    resid = gt.positions - (s * est.positions @ r.T + t)
    return float(np.sqrt((resid**2).sum(axis=1).mean()))


def _interpolate(traj: Trajectory, idx_float):
    i0 = int(np.floor(idx_float))
    i0 = min(i0, len(traj) - 2)
    alpha = idx_float - i0
    p0, p1 = traj.poses[i0], traj.poses[i0 + 1]
    t = (1 - alpha) * p0.translation + alpha * p1.translation
    rots = Rotation.from_matrix([p0.rotation, p1.rotation])
    r = Slerp([0.0, 1.0], rots)(alpha).as_matrix()
    return Pose(r, t)


def rpe(est: Trajectory, gt: Trajectory, delta=1.0):
    """Relative pose error per meter of ground-truth arc length.

    Returns (translation m/m, rotation deg/m), averaged over all poses whose
    delta-meter endpoint lies inside the trajectory.
    """
    if len(est) != len(gt):
        raise ValueError("trajectories must have equal length")
    pos = gt.positions
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] < delta:
        raise PathTooShort(f"gt path {arc[-1]:.3f} m shorter than delta {delta} m")
    t_errs = []
    r_errs = []
    for i in range(len(gt)):
        target_arc = arc[i] + delta
        if target_arc > arc[-1]:
            break
        j = int(np.searchsorted(arc, target_arc))
        j = max(j, i + 1)
        span = arc[j] - arc[j - 1]
        alpha = 0.0 if span < 1e-12 else (target_arc - arc[j - 1]) / span
        idx = (j - 1) + alpha
        gt_i, gt_j = gt.poses[i], _interpolate(gt, idx)
        est_i, est_j = est.poses[i], _interpolate(est, idx)
        rel_gt = compose(inverse(gt_i), gt_j)
        rel_est = compose(inverse(est_i), est_j)
        err = compose(inverse(rel_gt), rel_est)
        t_errs.append(np.linalg.norm(err.translation))
        angle = np.arccos(np.clip((np.trace(err.rotation) - 1) / 2, -1.0, 1.0))
        r_errs.append(np.degrees(angle))
    if not t_errs:
        raise PathTooShort("no pose has a full delta of path ahead")
    return float(np.mean(t_errs) / delta), float(np.mean(r_errs) / delta)


def write_tum(traj: Trajectory, path):
    """Write `timestamp tx ty tz qx qy qz qw` lines."""
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, pose in zip(traj.timestamps, traj.poses):
            q = Rotation.from_matrix(pose.rotation).as_quat()  # x y z w
            t = pose.translation
            fh.write(
                f"{ts:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n"
            )


def read_tum(path) -> Trajectory:
    timestamps = []
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from e
            q = np.array(vals[4:8])
            norm = np.linalg.norm(q)
            if norm < 1e-12:
                raise ParseError(f"{path}:{lineno}: zero quaternion")
            q = q / norm
            timestamps.append(vals[0])
            poses.append(Pose(Rotation.from_quat(q).as_matrix(), np.array(vals[1:4])))
    return Trajectory(np.array(timestamps), poses)


def associate(est: Trajectory, gt: Trajectory, tolerance=ASSOC_TOLERANCE):
    """Match poses by nearest timestamp; error when any gap exceeds tolerance."""
    est_idx = []
    gt_idx = []
    for i, ts in enumerate(est.timestamps):
        j = int(np.argmin(np.abs(gt.timestamps - ts)))
        if abs(gt.timestamps[j] - ts) > tolerance:
            raise AssociationError(
                f"no ground-truth timestamp within {tolerance}s of {ts}"
            )
        est_idx.append(i)
        gt_idx.append(j)
    sub = lambda tr, idx: Trajectory(
        tr.timestamps[idx], [tr.poses[i] for i in idx]
    )
    return sub(est, est_idx), sub(gt, gt_idx)
