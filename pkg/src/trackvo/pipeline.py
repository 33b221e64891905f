"""Sliding-window VO orchestration: per-frame keypoint extraction, windowed
bidirectional tracking, track filtering, and local bundle adjustment."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ba as ba_mod
from .ba import BAConfig, BAProblem, Landmark, Observation, ba_optimize
from .dynfilter import (
    DegenerateConfiguration,
    FilterConfig,
    dynamic_score,
    filter_tracks,
    fit_dominant_motion,
)
from .evaluation import Trajectory
from .geometry import Intrinsics, Pose, compose, inverse, nearest_rotation
from .sampling import QuerySet, sample_keypoints
from .synth import SceneSpec, render_images, render_tracks
from .tracker import OracleNoise, TrackerConfig, chain_windows, oracle_track

BOOTSTRAP_MEDIAN_DEPTH = 5.0


class SourceEmpty(Exception):
    pass


class IntrinsicsMissing(Exception):
    pass


@dataclass
class PipelineConfig:
    n_queries: int = 256
    s: int = 8
    s_lp: int = 12
    s_ba: int = 15
    k: int = 4
    k_ba: int = 4
    tracker: str = "oracle"  # or "correlation"
    gamma_v: float = 0.9
    gamma_d: float = 0.9
    gamma_u: float = 0.8
    gamma_track: int = 3
    tau_d: float = 2.0
    sigma_d: float = 0.5
    n_anchors: int = 64
    huber_delta: float = 2.0
    damping: float = 1e-4
    confidence_weighting: bool = False
    seed: int = 0
    sigma_px: float = 0.0
    p_bad: float = 0.0
    sigma_bad: float = 5.0
    grid_k: int = 8
    pool: int = 2

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        return asdict(self)

    def filter_config(self):
        return FilterConfig(
            gamma_v=self.gamma_v,
            gamma_d=self.gamma_d,
            gamma_u=self.gamma_u,
            gamma_track=self.gamma_track,
            tau_d=self.tau_d,
            sigma_d=self.sigma_d,
        )

    def ba_config(self):
        return BAConfig(
            s_ba=self.s_ba,
            k_ba=self.k_ba,
            huber_delta=self.huber_delta,
            damping=self.damping,
            confidence_weighting=self.confidence_weighting,
        )

    def tracker_config(self):
        return TrackerConfig(s=self.s, s_lp=self.s_lp, k=self.k)

    def oracle_noise(self):
        return OracleNoise(
            sigma_px=self.sigma_px, p_bad=self.p_bad, sigma_bad=self.sigma_bad
        )


@dataclass
class TrackGroup:
    """All tracks hosted by one frame, re-tracked each ingest."""

    host: int  # global frame index
    query_xy: np.ndarray
    point_ids: np.ndarray | None
    depths: np.ndarray
    trackset: object = None
    mask: object = None


def _triangulate_depth(pose_a: Pose, pose_b: Pose, k: Intrinsics, xy_a, xy_b):
    """Two-view midpoint depths (in camera a) for matched pixels."""
    xy_a = np.atleast_2d(xy_a)
    xy_b = np.atleast_2d(xy_b)
    da = np.column_stack(
        [(xy_a[:, 0] - k.cx) / k.fx, (xy_a[:, 1] - k.cy) / k.fy, np.ones(len(xy_a))]
    ) @ pose_a.rotation.T
    db = np.column_stack(
        [(xy_b[:, 0] - k.cx) / k.fx, (xy_b[:, 1] - k.cy) / k.fy, np.ones(len(xy_b))]
    ) @ pose_b.rotation.T
    base = pose_b.translation - pose_a.translation
    depths = np.empty(len(xy_a))
    for i in range(len(xy_a)):
        m = np.column_stack([da[i], -db[i]])
        sol, *_ = np.linalg.lstsq(m, base, rcond=None)
        depths[i] = sol[0]
    return depths


def _decompose_essential(e, k: Intrinsics, xy_a, xy_b):
    """Relative pose (camera-a-to-camera-b, world-to-camera sense) from an
    essential matrix, disambiguated by cheirality voting."""
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    best = None
    for r in (u @ w @ vt, u @ w.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            pose_a = Pose.identity()
            pose_b = Pose(r.T, -r.T @ t)  # camera-to-world of camera b
            d_a = _triangulate_depth(pose_a, pose_b, k, xy_a, xy_b)
            p_cam_b = (
                np.column_stack(
                    [
                        (xy_a[:, 0] - k.cx) / k.fx * d_a,
                        (xy_a[:, 1] - k.cy) / k.fy * d_a,
                        d_a,
                    ]
                )
                - pose_b.translation
            ) @ pose_b.rotation
            votes = int(np.sum((d_a > 0) & (p_cam_b[:, 2] > 0)))
            if best is None or votes > best[0]:
                best = (votes, r, t)
    return best[1], best[2]


class Pipeline:
    """Sequential per-frame VO loop over a synthetic scene or image stream."""

    def __init__(self, config: PipelineConfig, intrinsics: Intrinsics, scene: SceneSpec | None = None):
        if config.tracker == "oracle" and scene is None:
            raise ValueError("oracle tracker requires a scene")
        self.config = config
        self.intrinsics = intrinsics
        self.scene = scene
        self.gt = render_tracks(scene) if scene is not None else None
        self.poses: list[Pose] = []
        self.groups: dict[int, TrackGroup] = {}
        self.images: dict[int, np.ndarray] = {}
        self.frame_count = 0
        self.diagnostics = []

    # -- keypoints ----------------------------------------------------------

    def _sample_queries(self, t, image):
        cfg = self.config
        if cfg.tracker == "oracle":
            visible = np.where(self.gt.vis[:, t] > 0.5)[0]
            rng = np.random.default_rng([cfg.seed, t, 17])
            n = min(cfg.n_queries, len(visible))
            ids = np.sort(rng.permutation(visible)[:n])
            return QuerySet(frame=t, xy=self.gt.xy[ids, t].copy()), ids
        if image is None:
            raise ValueError("correlation tracker requires images")
        qs = sample_keypoints(image, cfg.grid_k, cfg.n_queries, cfg.pool, frame=t)
        return qs, None

    # -- tracking -----------------------------------------------------------

    def _retrack_group(self, group: TrackGroup, window):
        cfg = self.config
        local_q = group.host - window[0]
        queries = QuerySet(frame=local_q, xy=group.query_xy)
        if cfg.tracker == "oracle":
            ts = oracle_track(
                self.scene,
                queries,
                noise=cfg.oracle_noise(),
                frames=window,
                seed=cfg.seed,
                point_ids=group.point_ids,
                gt=self.gt,
            )
        else:
            imgs = [self.images[g] for g in window]
            tracker_cfg = self.config.tracker_config()
            ts = chain_windows(imgs, queries, tracker_cfg)
            ts.frames = np.asarray(window)
        group.trackset = ts

    # -- bundle adjustment --------------------------------------------------

    def _build_problem(self, t):
        cfg = self.config
        b0 = max(0, t - cfg.s_ba + 1)
        poses = self.poses[b0 : t + 1]
        landmarks = []
        observations = []
        owners = []  # (group, track index) per landmark
        for h, group in sorted(self.groups.items()):
            ts, mask = group.trackset, group.mask
            if ts is None or mask is None or h < b0:
                continue
            for q in range(ts.n_tracks):
                if not mask.alive[q]:
                    continue
                obs_here = []
                weight = 1.0
                if cfg.confidence_weighting:
                    weight = 1.0 / (1.0 + float(np.mean(ts.phi[q])))
                for local_s, g in enumerate(ts.frames):
                    g = int(g)
                    if g == h or g < b0 or g > t:
                        continue
                    if mask.w[q, local_s]:
                        obs_here.append((g, ts.x[q, local_s], weight))
                if not obs_here:
                    continue
                lm_id = len(landmarks)
                landmarks.append(
                    Landmark(host=h - b0, xy=ts.query_xy[q].copy(), depth=float(group.depths[q]))
                )
                owners.append((group, q))
                for g, meas, wgt in obs_here:
                    observations.append(
                        Observation(host=h - b0, target=g - b0, landmark=lm_id, xy=meas, weight=wgt)
                    )
        if not landmarks:
            return None, None, None
        # Gauge: freeze the oldest pose touched by observations (6 dof) plus
        # one landmark depth (scale), exactly the 7-dof monocular ambiguity.
        # Freezing two full poses over-constrains it and permanently bakes in
        # the noise of whatever relative pose the pair happened to have.  The
        # pinned depth must agree with the current state: landmarks that were
        # long filtered out can carry stale depths at a different scale, and
        # pinning one of those forces a global rescale the optimizer cannot
        # reach.  So the scale anchor is the best-observed landmark among
        # those that currently reproject well.
        touched = sorted(
            {o.host for o in observations} | {o.target for o in observations}
        )
        anchor = touched[0]
        problem = BAProblem(
            poses=poses,
            landmarks=landmarks,
            observations=observations,
            intrinsics=self.intrinsics,
            fixed={anchor},
        )
        counts = np.zeros(len(landmarks))
        resid_sum = np.zeros(len(landmarks))
        host, target, lm, meas, w, lm_xy, pairs = ba_mod._obs_arrays(problem)
        depths = np.array([l.depth for l in landmarks])
        for (i, j), idx in pairs.items():
            res, good, *_ = ba_mod._group_residuals(
                problem, poses, depths, i, j, idx, lm, meas, self.intrinsics, lm_xy
            )
            lm_idx = lm[idx][good]
            np.add.at(counts, lm_idx, 1.0)
            np.add.at(resid_sum, lm_idx, np.linalg.norm(res[good], axis=1))
        seen = counts > 0
        mean_res = np.full(len(landmarks), np.inf)
        mean_res[seen] = resid_sum[seen] / counts[seen]
        consistent = seen & (mean_res <= max(1.0, np.median(mean_res[seen])))
        if np.any(consistent):
            scale_lm = int(np.argmax(np.where(consistent, counts, -1.0)))
        else:
            scale_lm = int(np.argmax(counts))
        problem.fixed_depths = {scale_lm}
        return problem, owners, b0

    def _triangulate_group(self, group):
        """Initialize a group's depths by triangulating each track against
        the earliest window frame where it is visible.

        Only tracks that survived filtering are triangulated, and only
        depths inside a plausible band around the current median are
        accepted: two-view depths from noisy pose estimates (or from tracks
        on independently moving structure) can be arbitrarily wrong, and a
        single such landmark destabilizes the whole window."""
        ts = group.trackset
        if ts is None:
            return
        local_h = int(np.where(ts.frames == group.host)[0][0])
        h_pose = self.poses[group.host]
        med = float(np.median(group.depths))
        lo, hi = med / 5.0, med * 5.0
        need = np.ones(ts.n_tracks, dtype=bool)
        if group.mask is not None:
            need &= group.mask.alive
        for local_s, g in enumerate(ts.frames):
            g = int(g)
            if g == group.host or not need.any():
                continue
            cand = need & (ts.v[:, local_h] >= 0.5) & (ts.v[:, local_s] >= 0.5)
            if not cand.any():
                continue
            d = _triangulate_depth(
                h_pose,
                self.poses[g],
                self.intrinsics,
                ts.x[cand, local_h],
                ts.x[cand, local_s],
            )
            ok = (d >= lo) & (d <= hi)
            idx = np.where(cand)[0][ok]
            group.depths[idx] = d[ok]
            need[idx] = False

    def _refine_new_pose(self, t):
        """Polish the constant-velocity guess for frame t against landmarks
        hosted at earlier frames, holding everything else fixed.

        The extrapolated pose can be tens of pixels off, and depths
        triangulated from it inherit the error; the full window solve then
        starts so far from the optimum that the iteration budget runs out.
        A cheap pose-only solve removes that transient."""
        w0 = max(0, t - self.config.s_lp + 1)
        poses = [self.poses[g] for g in range(w0, t + 1)]
        landmarks, observations = [], []
        for h, group in sorted(self.groups.items()):
            ts = group.trackset
            if h >= t or ts is None or group.mask is None:
                continue
            local_h = int(np.where(ts.frames == h)[0][0])
            local_t = int(np.where(ts.frames == t)[0][0])
            ok = (
                group.mask.alive
                & group.mask.w[:, local_t].astype(bool)
                & (ts.v[:, local_h] >= 0.5)
                & (ts.v[:, local_t] >= 0.5)
            )
            for q in np.where(ok)[0]:
                lm_id = len(landmarks)
                landmarks.append(
                    Landmark(host=h - w0, xy=ts.x[q, local_h], depth=float(group.depths[q]))
                )
                observations.append(
                    Observation(
                        host=h - w0,
                        target=t - w0,
                        landmark=lm_id,
                        xy=ts.x[q, local_t],
                        weight=float(group.mask.w[q, local_t]),
                    )
                )
        if len(observations) < 6:
            return
        problem = BAProblem(
            poses=poses,
            landmarks=landmarks,
            observations=observations,
            intrinsics=self.intrinsics,
            fixed=set(range(t - w0)),
            fixed_depths=set(range(len(landmarks))),
        )
        ba_cfg = self.config.ba_config()
        ba_cfg.k_ba = 10
        new_poses, _, info = ba_optimize(problem, ba_cfg)
        if not info["failed"]:
            self.poses[t] = new_poses[t - w0]

    def _bootstrap(self):
        """Relative pose of frame 1 from the epipolar geometry of frame 0's
        tracks; fixes the monocular scale via the median triangulated depth."""
        group = self.groups[0]
        ts = group.trackset
        ok = (ts.v[:, 0] >= 0.5) & (ts.v[:, 1] >= 0.5)
        # the two-view fit anchors the gauge for the rest of the run, so gate
        # high-uncertainty tracks out the same way the window filter does
        phi = np.array([np.mean(d.phi) for d in ts.dists])
        if ok.sum() >= 16:
            ok &= phi <= np.quantile(phi[ok], self.config.gamma_u)
        if ok.sum() < 8:
            return False
        x0, x1 = ts.x[ok, 0], ts.x[ok, 1]
        try:
            f = fit_dominant_motion(x0, x1)
        except DegenerateConfiguration:
            return False
        k_mat = self.intrinsics.matrix()
        e = k_mat.T @ f @ k_mat
        r, t_unit = _decompose_essential(e, self.intrinsics, x0, x1)
        pose1 = Pose(r.T, -r.T @ t_unit)
        depths = _triangulate_depth(Pose.identity(), pose1, self.intrinsics, x0, x1)
        med = np.median(depths[depths > 0]) if np.any(depths > 0) else 1.0
        scale = BOOTSTRAP_MEDIAN_DEPTH / max(med, 1e-6)
        pose1 = Pose(pose1.rotation, pose1.translation * scale)
        self.poses[1] = pose1
        # triangulated depth init for the boot window
        for h in (0, 1):
            if h not in self.groups or self.groups[h].trackset is None:
                continue
            g = self.groups[h]
            gts = g.trackset
            other = 1 - h
            local_h = int(np.where(gts.frames == h)[0][0])
            local_o = int(np.where(gts.frames == other)[0][0])
            pa = self.poses[h]
            pb = self.poses[other]
            d = _triangulate_depth(pa, pb, self.intrinsics, gts.x[:, local_h], gts.x[:, local_o])
            good = d > ba_mod.DEPTH_MIN
            g.depths[good] = d[good]
        return True

    # -- main loop ----------------------------------------------------------

    def ingest_frame(self, image=None):
        cfg = self.config
        t = self.frame_count
        started = time.perf_counter()
        if image is not None:
            self.images[t] = image

        # pose initialization: constant velocity after the first two frames
        if t == 0:
            self.poses.append(Pose.identity())
        elif t == 1:
            self.poses.append(self.poses[0])
        else:
            step = compose(self.poses[t - 1], inverse(self.poses[t - 2]))
            guess = compose(step, self.poses[t - 1])
            # repeated extrapolation compounds rotation round-off; re-project
            self.poses.append(
                Pose(nearest_rotation(guess.rotation), guess.translation)
            )

        # new keypoints hosted at t
        queries, point_ids = self._sample_queries(t, image)
        depth_init = 1.0
        active_depths = [g.depths for g in self.groups.values() if g.depths is not None and len(g.depths)]
        if active_depths:
            depth_init = float(np.median(np.concatenate(active_depths)))
        self.groups[t] = TrackGroup(
            host=t,
            query_xy=queries.xy.copy(),
            point_ids=point_ids,
            depths=np.full(len(queries.xy), depth_init),
        )

        # window retracking; tracks die when their host leaves the buffer
        w0 = max(0, t - cfg.s_lp + 1)
        window = np.arange(w0, t + 1)
        for h in [h for h in self.groups if h < w0]:
            del self.groups[h]
        for group in self.groups.values():
            self._retrack_group(group, window)

        # dynamic scoring and filtering (keypoints double as anchors)
        fcfg = cfg.filter_config()
        kept = dropped = 0
        for group in self.groups.values():
            ts = group.trackset
            scores, degenerate = dynamic_score(ts, ts, fcfg)
            ts.dyn = scores
            ts.degenerate = degenerate
            group.mask = filter_tracks(ts, fcfg)
            kept += int(group.mask.w.sum())
            dropped += int((~group.mask.alive).sum())

        # triangulated depth init for the group hosted at t; the global
        # median fallback is only good to a scale and leaves BA a transient
        # that frames exiting the window never recover from
        if t >= 2:
            self._refine_new_pose(t)
            self._triangulate_group(self.groups[t])

        ba_failed = False
        ba_cost = float("nan")
        if t == 1:
            self._bootstrap()
        if t >= 1:
            problem, owners, b0 = self._build_problem(t)
            if problem is not None:
                poses, depths, info = ba_optimize(problem, cfg.ba_config())
                ba_failed = info["failed"]
                ba_cost = info["costs"][-1]
                if not ba_failed:
                    for local, pose in enumerate(poses):
                        self.poses[b0 + local] = pose
                    for (group, q), d in zip(owners, depths):
                        group.depths[q] = d

        self.frame_count += 1
        self.diagnostics.append(
            {
                "frame": t,
                "n_tracks": sum(g.trackset.n_tracks for g in self.groups.values()),
                "kept_points": kept,
                "dropped_tracks": dropped,
                "ba_cost": ba_cost,
                "ba_failed": ba_failed,
                "time_s": time.perf_counter() - started,
            }
        )

    def trajectory(self):
        return Trajectory(np.arange(self.frame_count, dtype=float), list(self.poses))

    def track_report(self):
        """Per-track rows: host, index, dynamic score, mean phi, alive."""
        rows = []
        for h, group in sorted(self.groups.items()):
            ts = group.trackset
            if ts is None:
                continue
            phi = ts.phi
            for q in range(ts.n_tracks):
                rows.append(
                    {
                        "host": h,
                        "track": q,
                        "dyn": float(ts.dyn[q]),
                        "mean_phi": float(np.mean(phi[q])),
                        "kept": bool(group.mask.alive[q]) if group.mask is not None else False,
                    }
                )
        return rows


def run_sequence(source, config: PipelineConfig, intrinsics: Intrinsics | None = None):
    """Run the full VO loop over a scene or an image list.

    Returns (Trajectory, diagnostics, pipeline)."""
    if isinstance(source, SceneSpec):
        scene = source
        if scene.n_frames < 2:
            raise SourceEmpty("need at least 2 frames")
        intr = scene.intrinsics
        pipe = Pipeline(config, intr, scene=scene)
        images = render_images(scene) if config.tracker == "correlation" else None
        for t in range(scene.n_frames):
            pipe.ingest_frame(images[t] if images is not None else None)
    else:
        images = list(source)
        if len(images) < 2:
            raise SourceEmpty("need at least 2 frames")
        if intrinsics is None:
            raise IntrinsicsMissing("image input requires intrinsics")
        if config.tracker == "oracle":
            raise ValueError("oracle tracker requires a scene source")
        pipe = Pipeline(config, intrinsics)
        for img in images:
            pipe.ingest_frame(img)
    return pipe.trajectory(), pipe.diagnostics, pipe
