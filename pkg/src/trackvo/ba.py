"""Sliding-window bundle adjustment: Huber-robustified reprojection cost,
Gauss-Newton with mild damping, and Schur elimination of the depths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import Intrinsics, Pose, se3_exp, compose

DEPTH_MIN = 1e-3
DEPTH_MAX = 1e6
CHEIRALITY_EPS = 1e-6
DAMPING_CEIL = 1e8


class SingularSystem(Exception):
    pass


@dataclass
class BAConfig:
    s_ba: int = 15
    k_ba: int = 4
    huber_delta: float = 2.0  # px
    damping: float = 1e-4
    confidence_weighting: bool = False


@dataclass
class Landmark:
    host: int  # frame index within the window
    xy: np.ndarray  # pixel in the host frame
    depth: float


@dataclass
class Observation:
    host: int
    target: int
    landmark: int
    xy: np.ndarray  # measured pixel in the target frame
    weight: float = 1.0


@dataclass
class BAProblem:
    poses: list  # Pose, camera-to-world
    landmarks: list  # Landmark
    observations: list  # Observation
    intrinsics: Intrinsics
    fixed: set = field(default_factory=set)  # pose indices held constant
    fixed_depths: set = field(default_factory=set)  # landmark indices held constant
    fixed_coords: set = field(default_factory=set)  # (pose index, twist coord 0..5)

    def __post_init__(self):
        if not self.fixed:
            raise ValueError("at least one pose must be fixed (gauge)")


@dataclass
class NormalSystem:
    h_cc: np.ndarray  # (6F, 6F)
    h_cl: np.ndarray  # (6F, L)
    h_ll: np.ndarray  # (L,) diagonal
    b_c: np.ndarray  # (6F,)
    b_l: np.ndarray  # (L,)
    free: list  # pose index per 6-slot
    cost: float


def huber(r, delta):
    """Robust cost and IRLS weight for a residual norm."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = abs(float(r))
    if r <= delta:
        return 0.5 * r * r, 1.0
    return delta * (r - 0.5 * delta), delta / r


def _huber_vec(norms, delta):
    norms = np.abs(norms)
    small = norms <= delta
    cost = np.where(small, 0.5 * norms**2, delta * (norms - 0.5 * delta))
    weight = np.where(small, 1.0, delta / np.maximum(norms, 1e-12))
    return cost, weight


def _obs_arrays(problem: BAProblem):
    """Flat observation arrays plus the pair->index map, cached per problem
    (the observation set is immutable over an optimization)."""
    cache = getattr(problem, "_obs_cache", None)
    if cache is None:
        host = np.array([o.host for o in problem.observations], dtype=int)
        target = np.array([o.target for o in problem.observations], dtype=int)
        lm = np.array([o.landmark for o in problem.observations], dtype=int)
        meas = np.array([o.xy for o in problem.observations], dtype=float)
        w = np.array([o.weight for o in problem.observations], dtype=float)
        lm_xy = np.array([l.xy for l in problem.landmarks], dtype=float)
        pairs = {}
        for i, j in sorted({(int(a), int(b)) for a, b in zip(host, target)}):
            idx = np.where((host == i) & (target == j) & (w > 0))[0]
            if idx.size:
                pairs[(i, j)] = idx
        cache = (host, target, lm, meas, w, lm_xy, pairs)
        object.__setattr__(problem, "_obs_cache", cache)
    return cache


def _group_residuals(problem, poses, depths, i, j, idx, lm, meas, k, lm_xy):
    """Residuals + geometry for all observations of frame pair (i, j)."""
    lm_idx = lm[idx]
    xy_host = lm_xy[lm_idx]
    d = depths[lm_idx]
    dirs = np.column_stack(
        [(xy_host[:, 0] - k.cx) / k.fx, (xy_host[:, 1] - k.cy) / k.fy, np.ones(len(d))]
    )
    t_i, t_j = poses[i], poses[j]
    p_world = (dirs * d[:, None]) @ t_i.rotation.T + t_i.translation
    p_j = (p_world - t_j.translation) @ t_j.rotation
    z = p_j[:, 2]
    good = z > CHEIRALITY_EPS
    zs = np.where(good, z, 1.0)
    pix = np.column_stack([k.fx * p_j[:, 0] / zs + k.cx, k.fy * p_j[:, 1] / zs + k.cy])
    res = pix - meas[idx]
    return res, good, p_world, p_j, dirs, lm_idx


def evaluate_cost(problem: BAProblem, poses=None, depths=None, config: BAConfig | None = None):
    """Total robust reprojection cost; cheirality-violating terms are skipped."""
    config = config or BAConfig()
    poses = poses if poses is not None else problem.poses
    if depths is None:
        depths = np.array([l.depth for l in problem.landmarks])
    host, target, lm, meas, w, lm_xy, pairs = _obs_arrays(problem)
    k = problem.intrinsics
    cost = 0.0
    for (i, j), idx in pairs.items():
        res, good, *_ = _group_residuals(problem, poses, depths, i, j, idx, lm, meas, k, lm_xy)
        norms = np.linalg.norm(res, axis=1)
        hub_cost, _ = _huber_vec(norms, config.huber_delta)
        cost += float(np.sum(w[idx][good] * hub_cost[good]))
    return cost


def linearize(problem: BAProblem, poses=None, depths=None, config: BAConfig | None = None) -> NormalSystem:
    """Build the Gauss-Newton normal equations with Huber IRLS weights."""
    config = config or BAConfig()
    poses = poses if poses is not None else problem.poses
    if depths is None:
        depths = np.array([l.depth for l in problem.landmarks])
    free = [p for p in range(len(poses)) if p not in problem.fixed]
    slot = {p: s for s, p in enumerate(free)}
    n_c = 6 * len(free)
    n_l = len(problem.landmarks)
    h_cc = np.zeros((n_c, n_c))
    h_cl = np.zeros((n_c, n_l))
    h_ll = np.zeros(n_l)
    b_c = np.zeros(n_c)
    b_l = np.zeros(n_l)
    cost = 0.0

    host, target, lm, meas, w, lm_xy, pairs = _obs_arrays(problem)
    k = problem.intrinsics
    for (i, j), idx in pairs.items():
        res, good, p_world, p_j, dirs, lm_idx = _group_residuals(
            problem, poses, depths, i, j, idx, lm, meas, k, lm_xy
        )
        if not np.any(good):
            continue
        sel = good
        res, p_world, p_j = res[sel], p_world[sel], p_j[sel]
        dirs, lm_sel, w_sel = dirs[sel], lm_idx[sel], w[idx][sel]
        z = p_j[:, 2]
        n = len(res)
        norms = np.linalg.norm(res, axis=1)
        hub_cost, hub_w = _huber_vec(norms, config.huber_delta)
        cost += float(np.sum(w_sel * hub_cost))
        wt = w_sel * hub_w

        a = np.zeros((n, 2, 3))
        a[:, 0, 0] = k.fx / z
        a[:, 0, 2] = -k.fx * p_j[:, 0] / z**2
        a[:, 1, 1] = k.fy / z
        a[:, 1, 2] = -k.fy * p_j[:, 1] / z**2

        rj_t = poses[j].rotation.T
        skew_pw = np.zeros((n, 3, 3))
        skew_pw[:, 0, 1] = -p_world[:, 2]
        skew_pw[:, 0, 2] = p_world[:, 1]
        skew_pw[:, 1, 0] = p_world[:, 2]
        skew_pw[:, 1, 2] = -p_world[:, 0]
        skew_pw[:, 2, 0] = -p_world[:, 1]
        skew_pw[:, 2, 1] = p_world[:, 0]
        dp_dxi = np.concatenate(
            [-np.einsum("ab,nbc->nac", rj_t, skew_pw), np.broadcast_to(rj_t, (n, 3, 3))],
            axis=2,
        )  # (n, 3, 6)
        j_i = np.einsum("nab,nbc->nac", a, dp_dxi)  # (n, 2, 6), twist on T_i
        j_d = np.einsum("nab,nb->na", a, (dirs @ poses[i].rotation.T) @ poses[j].rotation)  # (n, 2)

        blocks = []  # (slot, jacobian, sign)
        if i in slot:
            blocks.append((slot[i], j_i))
        if j in slot:
            blocks.append((slot[j], -j_i))
        for si, ji in blocks:
            r0 = 6 * si
            h_cc[r0 : r0 + 6, r0 : r0 + 6] += np.einsum("nab,nac,n->bc", ji, ji, wt)
            b_c[r0 : r0 + 6] -= np.einsum("nab,na,n->b", ji, res, wt)
            cl = np.einsum("nab,na,n->nb", ji, j_d, wt)  # (n, 6)
            np.add.at(h_cl.T, (lm_sel, slice(r0, r0 + 6)), cl)
        if len(blocks) == 2:
            (si, ji), (sj, jj) = blocks
            r0, r1 = 6 * si, 6 * sj
            cross = np.einsum("nab,nac,n->bc", ji, jj, wt)
            h_cc[r0 : r0 + 6, r1 : r1 + 6] += cross
            h_cc[r1 : r1 + 6, r0 : r0 + 6] += cross.T
        np.add.at(h_ll, lm_sel, wt * np.einsum("na,na->n", j_d, j_d))
        np.add.at(b_l, lm_sel, -wt * np.einsum("na,na->n", j_d, res))

    if problem.fixed_depths:
        fd = sorted(problem.fixed_depths)
        h_cl[:, fd] = 0.0
        h_ll[fd] = np.maximum(h_ll[fd], 1.0)
        b_l[fd] = 0.0
    for p, c in problem.fixed_coords:
        if p not in slot:
            continue
        row = 6 * slot[p] + c
        h_cc[row, :] = 0.0
        h_cc[:, row] = 0.0
        h_cc[row, row] = 1.0
        h_cl[row, :] = 0.0
        b_c[row] = 0.0

    return NormalSystem(h_cc=h_cc, h_cl=h_cl, h_ll=h_ll, b_c=b_c, b_l=b_l, free=free, cost=cost)


def schur_solve(system: NormalSystem, damping=1e-4):
    """Eliminate depths, solve the reduced camera system, back-substitute.

    Escalates damping x10 up to the ceiling before giving up.
    """
    lam = max(damping, 0.0)
    while True:
        h_ll = system.h_ll + lam
        if np.any(h_ll <= 0):
            h_ll = np.maximum(h_ll, 1e-12)
        if system.h_cc.shape[0] == 0:
            return np.zeros(0), system.b_l / h_ll
        h_cc = system.h_cc + lam * np.eye(system.h_cc.shape[0])
        inv_ll = 1.0 / h_ll
        reduced = h_cc - (system.h_cl * inv_ll) @ system.h_cl.T
        rhs = system.b_c - system.h_cl @ (system.b_l * inv_ll)
        try:
            factor = cho_factor(reduced)
            dx_c = cho_solve(factor, rhs)
            dx_l = inv_ll * (system.b_l - system.h_cl.T @ dx_c)
            return dx_c, dx_l
        except np.linalg.LinAlgError:
            lam = max(lam, damping, 1e-8) * 10.0
            if lam > DAMPING_CEIL:
                raise SingularSystem("reduced camera system not factorizable")


def dense_solve(system: NormalSystem, damping=1e-4):
    """Reference solve of the full (poses + depths) normal equations."""
    n_c = system.h_cc.shape[0]
    n_l = len(system.h_ll)
    h = np.zeros((n_c + n_l, n_c + n_l))
    h[:n_c, :n_c] = system.h_cc
    h[:n_c, n_c:] = system.h_cl
    h[n_c:, :n_c] = system.h_cl.T
    h[n_c:, n_c:] = np.diag(system.h_ll)
    h += damping * np.eye(n_c + n_l)
    b = np.concatenate([system.b_c, system.b_l])
    dx = np.linalg.solve(h, b)
    return dx[:n_c], dx[n_c:]


def apply_increments(poses, free, dx_c, depths, dx_l):
    new_poses = list(poses)
    for s, p in enumerate(free):
        new_poses[p] = compose(se3_exp(dx_c[6 * s : 6 * s + 6]), poses[p])
    new_depths = np.clip(depths + dx_l, DEPTH_MIN, DEPTH_MAX)
    return new_poses, new_depths


def ba_optimize(problem: BAProblem, config: BAConfig | None = None):
    """Run K_BA damped Gauss-Newton iterations.  Steps that increase the
    robust cost are rolled back and retried from the same linearization
    point with escalated damping, so a rejected trial does not consume an
    iteration.

    Returns (poses, depths, info dict)."""
    config = config or BAConfig()
    poses = list(problem.poses)
    depths = np.array([l.depth for l in problem.landmarks], dtype=float)
    lam = config.damping
    costs = []
    for _ in range(config.k_ba):
        system = linearize(problem, poses, depths, config)
        costs.append(system.cost)
        while True:
            try:
                dx_c, dx_l = schur_solve(system, lam)
            except SingularSystem:
                return poses, depths, {"costs": costs, "failed": True}
            cand_poses, cand_depths = apply_increments(
                poses, system.free, dx_c, depths, dx_l
            )
            cand_cost = evaluate_cost(problem, cand_poses, cand_depths, config)
            if cand_cost <= system.cost + 1e-12:
                poses, depths = cand_poses, cand_depths
                lam = max(config.damping, lam / 10.0)
                break
            lam *= 10.0
            if lam > DAMPING_CEIL:
                # no productive step from here; keep the current state
                final = evaluate_cost(problem, poses, depths, config)
                costs.append(final)
                return poses, depths, {"costs": costs, "failed": False}
    final = evaluate_cost(problem, poses, depths, config)
    costs.append(final)
    return poses, depths, {"costs": costs, "failed": False}
