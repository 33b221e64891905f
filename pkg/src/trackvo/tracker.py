"""Point-track front-ends: a ground-truth oracle over synthetic scenes and a
training-free correlation tracker (multi-scale NCC cost volumes with
soft-argmax iterative refinement), plus window chaining for long tracks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .probmodel import TrackDistribution, build_scale_matrix
from .sampling import QuerySet, to_grayscale
from .synth import SceneSpec, render_tracks


class WindowMismatch(Exception):
    pass


class QueryUnmatched(Exception):
    pass


class ImageTooSmall(Exception):
    pass


@dataclass
class TrackerConfig:
    s: int = 8  # model window
    s_lp: int = 12  # tracking (chaining) window
    k: int = 4  # refinement iterations
    radius: int = 4
    levels: int = 3
    patch: int = 7
    beta: float = 20.0
    sigma_floor: float = 1e-3
    vis_midpoint: float = 0.5
    vis_width: float = 0.1
    feature_dim: int = 8
    feature_seed: int = 7


@dataclass
class OracleNoise:
    sigma_px: float = 0.0
    p_bad: float = 0.0
    sigma_bad: float = 5.0
    respect_occlusion: bool = True


@dataclass
class TrackSet:
    """Trajectories, visibility, features, and distributions for Q queries
    over a frame window."""

    x: np.ndarray  # (Q, S, 2)
    v: np.ndarray  # (Q, S)
    f: np.ndarray  # (Q, S, D)
    dists: list  # Q TrackDistribution
    dyn: np.ndarray  # (Q,)
    query_frame: np.ndarray  # (Q,) local frame index
    query_xy: np.ndarray  # (Q, 2)
    frames: np.ndarray  # (S,) global frame indices
    gt_dynamic: np.ndarray | None = None
    point_ids: np.ndarray | None = None  # oracle scene point indices
    degenerate: bool = False

    @property
    def n_tracks(self):
        return self.x.shape[0]

    @property
    def n_frames(self):
        return self.x.shape[1]

    @property
    def phi(self):
        return np.array([d.phi for d in self.dists])


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# oracle tracker


def match_queries_to_scene(scene: SceneSpec, queries: QuerySet, frame: int, tol=1.0, gt=None):
    """Nearest projected scene point for each query (within tol px)."""
    gt = gt if gt is not None else render_tracks(scene)
    proj = gt.xy[:, frame]
    ids = []
    for xy in queries.xy:
        d = np.linalg.norm(proj - xy, axis=1)
        d[gt.vis[:, frame] < 0.5] = np.inf
        j = int(np.argmin(d))
        if d[j] > tol:
            raise QueryUnmatched(f"no scene point within {tol} px of {xy}")
        ids.append(j)
    return np.array(ids, dtype=int)


def oracle_track(
    scene: SceneSpec,
    queries: QuerySet,
    noise: OracleNoise | None = None,
    frames=None,
    seed=0,
    point_ids=None,
    config: TrackerConfig | None = None,
    gt=None,
) -> TrackSet:
    """Ground-truth-driven tracker: exact projections plus calibrated noise.

    A fraction p_bad of tracks is contaminated with sigma_bad noise; the
    per-frame uncertainty of every track reflects its injected noise level,
    so contaminated tracks are separable by phi. Noise is deterministic per
    (seed, scene point, global frame), so re-tracking a point over a shifted
    window reproduces identical positions on shared frames.
    """
    noise = noise or OracleNoise()
    config = config or TrackerConfig()
    if frames is None:
        frames = np.arange(scene.n_frames)
    frames = np.asarray(frames, dtype=int)
    gt = gt if gt is not None else render_tracks(scene)
    if point_ids is None:
        point_ids = match_queries_to_scene(
            scene, queries, int(frames[int(queries.frame)]), gt=gt
        )
    point_ids = np.asarray(point_ids, dtype=int)

    n_q = len(point_ids)
    s_count = len(frames)
    local_q = int(queries.frame)  # local index of the query frame in `frames`

    # contamination: exactly ceil(p_bad * Q) tracks, chosen by seeded RNG
    n_bad = int(np.ceil(noise.p_bad * n_q)) if noise.p_bad > 0 else 0
    pick_rng = np.random.default_rng([seed, 9173])
    bad = np.zeros(n_q, dtype=bool)
    if n_bad:
        bad[pick_rng.permutation(n_q)[:n_bad]] = True

    x = np.zeros((n_q, s_count, 2))
    v = np.zeros((n_q, s_count))
    dists = []
    for qi, pid in enumerate(point_ids):
        sig = noise.sigma_bad if bad[qi] else noise.sigma_px
        rng = np.random.default_rng([seed, int(pid)])
        all_noise = rng.normal(size=(scene.n_frames, 2)) * sig
        x[qi] = gt.xy[pid][frames] + all_noise[frames]
        x[qi, local_q] = queries.xy[qi]
        if noise.respect_occlusion:
            v[qi] = gt.vis[pid][frames]
        else:
            in_img = (
                (gt.xy[pid][frames, 0] >= 0)
                & (gt.xy[pid][frames, 0] < scene.image_size[0])
                & (gt.xy[pid][frames, 1] >= 0)
                & (gt.xy[pid][frames, 1] < scene.image_size[1])
                & (gt.depth[pid][frames] > 0)
            )
            v[qi] = in_img.astype(float)
        scale = sig**2 + config.sigma_floor
        sigma = scale * np.eye(s_count)
        dists.append(
            TrackDistribution(
                mu_a=x[qi, :, 0].copy(),
                mu_b=x[qi, :, 1].copy(),
                sigma_a=sigma,
                sigma_b=sigma.copy(),
            )
        )
    return TrackSet(
        x=x,
        v=v,
        f=np.zeros((n_q, s_count, config.feature_dim)),
        dists=dists,
        dyn=np.zeros(n_q),
        query_frame=np.full(n_q, local_q, dtype=int),
        query_xy=queries.xy.copy(),
        frames=frames,
        gt_dynamic=gt.dynamic_label[point_ids].copy(),
        point_ids=point_ids,
    )


# ---------------------------------------------------------------------------
# correlation tracker


@dataclass
class FeaturePyramid:
    levels: list  # images, full resolution first, each half the previous
    patch: int


def _downscale(img):
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def build_feature_pyramid(image, levels=3, patch=7) -> FeaturePyramid:
    img = to_grayscale(image)
    if img.shape[0] < 32 or img.shape[1] < 32:
        raise ImageTooSmall(f"need at least 32x32, got {img.shape}")
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(_downscale(pyr[-1]))
    return FeaturePyramid(levels=pyr, patch=patch)


def _patch_offsets(patch):
    half = patch // 2
    d = np.arange(-half, half + 1, dtype=float)
    ox, oy = np.meshgrid(d, d)
    return ox.ravel(), oy.ravel()


def sample_descriptors(img, centers, patch):
    """Mean-normalized, unit-norm patch descriptors at continuous centers.

    Returns (desc (n, patch^2), valid (n,)); invalid rows are zero.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    h, w = img.shape
    half = patch // 2
    ox, oy = _patch_offsets(patch)
    xs = centers[:, 0:1] + ox[None, :]
    ys = centers[:, 1:2] + oy[None, :]
    valid = (
        (centers[:, 0] >= half)
        & (centers[:, 0] <= w - 1 - half - 1e-9)
        & (centers[:, 1] >= half)
        & (centers[:, 1] <= h - 1 - half - 1e-9)
    )
    xs = np.clip(xs, 0, w - 1 - 1e-9)
    ys = np.clip(ys, 0, h - 1 - 1e-9)
    x0 = xs.astype(int)
    y0 = ys.astype(int)
    fx = xs - x0
    fy = ys - y0
    vals = (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, np.minimum(x0 + 1, w - 1)] * (1 - fy) * fx
        + img[np.minimum(y0 + 1, h - 1), x0] * fy * (1 - fx)
        + img[np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)] * fy * fx
    )
    vals = vals - vals.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(vals, axis=1, keepdims=True)
    vals = vals / np.maximum(norms, 1e-12)
    vals[~valid] = 0.0
    return vals, valid


def _to_level(xy, lvl):
    """Full-resolution coordinates to level-l pixel coordinates.

    2x2 average pooling centers level pixel i at full-res i*2^l + (2^l-1)/2,
    so the mapping is not a plain division.
    """
    return (np.asarray(xy, dtype=float) - (2**lvl - 1) / 2.0) / 2**lvl


def query_descriptor(pyramid: FeaturePyramid, xy):
    """Per-level descriptor stack (L, patch^2) at a full-resolution position."""
    descs = []
    for lvl, img in enumerate(pyramid.levels):
        d, _ = sample_descriptors(img, _to_level(xy, lvl)[None], pyramid.patch)
        descs.append(d[0])
    return np.array(descs)


def build_cost_volume(pyramid: FeaturePyramid, f_q, x, r=4):
    """NCC of the per-level templates against the (2r+1)^2 offsets around x.

    Offsets are in level pixels (level-l offsets cover 2^l full-res pixels).
    Out-of-bounds offsets score -1. Returns (L, 2r+1, 2r+1).
    """
    side = 2 * r + 1
    d = np.arange(-r, r + 1, dtype=float)
    ox, oy = np.meshgrid(d, d)
    grid = np.stack([ox.ravel(), oy.ravel()], axis=1)  # (side^2, 2)
    volume = np.full((len(pyramid.levels), side, side), -1.0)
    for lvl, img in enumerate(pyramid.levels):
        centers = _to_level(x, lvl)[None] + grid
        descs, valid = sample_descriptors(img, centers, pyramid.patch)
        scores = descs @ f_q[lvl]
        scores[~valid] = -1.0
        volume[lvl] = scores.reshape(side, side)
    return volume


LEVEL_GATE = 0.75  # minimum peak NCC for a coarse level's vote to count


def _level_offset(volume, lvl, beta=20.0):
    """Soft-argmax displacement of one pyramid level, in full-res pixels.

    The softmax is restricted to the 3x3 neighborhood of the argmax so
    far-field correlation mass cannot drag the centroid off a localized
    peak.  Coarse-level votes are snapped to integers: their job is to
    re-center the search, and any fractional part they contribute is pure
    pooling bias that the fine level cannot undo once its peak is sharp.
    """
    side = volume.shape[1]
    r = side // 2
    c = volume[lvl]
    iy, ix = np.unravel_index(int(np.argmax(c)), c.shape)
    y0, y1 = max(0, iy - 1), min(side, iy + 2)
    x0, x1 = max(0, ix - 1), min(side, ix + 2)
    sub = c[y0:y1, x0:x1]
    w = np.exp(beta * (sub - sub.max()))
    w /= w.sum()
    oy, ox = np.mgrid[y0:y1, x0:x1]
    delta = 2**lvl * np.array([(w * (ox - r)).sum(), (w * (oy - r)).sum()])
    return np.round(delta) if lvl > 0 else delta


def refine_offset(volume, beta=20.0):
    """Soft-argmax displacement: per-level 3x3-local softmax centroid,
    scaled by 2^l and averaged over levels."""
    n_levels = volume.shape[0]
    delta = np.zeros(2)
    for lvl in range(n_levels):
        c = volume[lvl]
        side = volume.shape[1]
        r = side // 2
        iy, ix = np.unravel_index(int(np.argmax(c)), c.shape)
        y0, y1 = max(0, iy - 1), min(side, iy + 2)
        x0, x1 = max(0, ix - 1), min(side, ix + 2)
        sub = c[y0:y1, x0:x1]
        w = np.exp(beta * (sub - sub.max()))
        w /= w.sum()
        oy, ox = np.mgrid[y0:y1, x0:x1]
        delta += 2**lvl * np.array([(w * (ox - r)).sum(), (w * (oy - r)).sum()])
    return delta / n_levels


def _ncc_at(pyramid, f_template, pts):
    descs, valid = sample_descriptors(pyramid.levels[0], np.atleast_2d(pts), pyramid.patch)
    s = descs @ f_template[0]
    s[~valid] = -1.0
    return s


def _refine_subpixel(pyramid, f_template, x, rounds=2, h=0.5):
    """Per-axis parabolic NCC maximization at continuous positions.

    A peak NCC of 1 is a perfect match, so refinement is skipped there —
    which also keeps exact-integer displacements exact."""
    x = x.copy()
    for _ in range(rounds):
        c0 = _ncc_at(pyramid, f_template, x[None])[0]
        if c0 >= 1.0 - 1e-9:
            break
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = h
            cm, cp = _ncc_at(pyramid, f_template, np.array([x - e, x + e]))
            denom = cm - 2 * c0 + cp
            if denom < -1e-12:
                x[axis] += np.clip(0.5 * h * (cm - cp) / denom, -h, h)
                c0 = _ncc_at(pyramid, f_template, x[None])[0]
    return x


def _track_one_frame(pyramid, x_init, f_template, config):
    """K refinement iterations of one track on one frame.

    The position update is additive (x <- x + dx); the matching template
    stays fixed across iterations so the cost volume keeps pointing at the
    query appearance rather than degenerating into an autocorrelation.
    Iterations run coarse-to-fine, each coarse level used only while its
    peak is confident, and finish with a continuous parabolic subpixel
    stage on the finest level.  The returned feature is the descriptor
    re-sampled at the converged position.
    """
    x = np.asarray(x_init, dtype=float).copy()
    for k in range(config.k):
        vol = build_cost_volume(pyramid, f_template, x, config.radius)
        if vol[0][config.radius, config.radius] >= 1.0 - 1e-9:
            break  # already a perfect match
        lvl = max(0, config.levels - 1 - k)
        while lvl > 0 and vol[lvl].max() < LEVEL_GATE:
            lvl -= 1
        x = x + _level_offset(vol, lvl, config.beta)
    x = _refine_subpixel(pyramid, f_template, x)
    # the soft-argmax centroid carries a small bias near sharp peaks; when
    # the nearest integer position matches at least as well, prefer it, so
    # exact integer displacements stay exact
    xr = np.round(x)
    if not np.array_equal(xr, x):
        c_r, c_x = _ncc_at(pyramid, f_template, np.array([xr, x]))
        if c_r >= c_x:
            x = xr
    final_vol = build_cost_volume(pyramid, f_template, x, config.radius)
    peak = float(final_vol[0].max())
    f = query_descriptor(pyramid, x)
    return x, f, peak, final_vol


def _cost_stats(volume):
    """Per-frame matching-quality statistics; larger means worse."""
    c0 = volume[0].ravel()
    order = np.sort(c0)[::-1]
    peak = order[0]
    second = order[1] if len(order) > 1 else -1.0
    spread = float(np.mean(c0 > 0.5 * max(peak, 1e-6)))
    return np.array([1.0 - peak, np.clip(second / max(peak, 1e-6), 0.0, 1.0), spread])


_STAT_DIM = 3


def _feature_projections(config: TrackerConfig):
    rng = np.random.default_rng(config.feature_seed)
    pa = rng.normal(size=(_STAT_DIM, config.feature_dim)) / np.sqrt(config.feature_dim)
    pb = rng.normal(size=(_STAT_DIM, config.feature_dim)) / np.sqrt(config.feature_dim)
    return pa, pb


def correlation_track(
    images, queries: QuerySet, config: TrackerConfig | None = None, frames=None
) -> TrackSet:
    """Training-free tracker over a window of images.

    Tracks run bidirectionally outward from the query frame, each frame
    initialized from its converged neighbor and refined for K soft-argmax
    iterations. Visibility is a logistic of the peak NCC; per-track scale
    matrices come from cost-volume statistics through fixed seeded
    projections.
    """
    config = config or TrackerConfig()
    s_count = len(images)
    if frames is None:
        frames = np.arange(s_count)
    frames = np.asarray(frames, dtype=int)
    if len(frames) != s_count:
        raise WindowMismatch("frame index count != image count")
    s_q = int(queries.frame)
    if not 0 <= s_q < s_count:
        raise WindowMismatch(f"query frame {s_q} outside window of {s_count}")

    pyramids = [build_feature_pyramid(img, config.levels, config.patch) for img in images]
    pa, pb = _feature_projections(config)

    n_q = len(queries.xy)
    x = np.zeros((n_q, s_count, 2))
    v = np.zeros((n_q, s_count))
    stats = np.zeros((n_q, s_count, _STAT_DIM))
    feats = np.zeros((n_q, s_count, config.levels * config.patch**2))

    for qi, xy in enumerate(queries.xy):
        f0 = query_descriptor(pyramids[s_q], xy)
        x[qi, s_q] = xy
        vol0 = build_cost_volume(pyramids[s_q], f0, xy, config.radius)
        v[qi, s_q] = _logistic((vol0[0].max() - config.vis_midpoint) / config.vis_width)
        stats[qi, s_q] = _cost_stats(vol0)
        feats[qi, s_q] = f0.ravel()
        for direction in (1, -1):
            x_prev = xy.copy()
            s = s_q + direction
            while 0 <= s < s_count:
                xs, fs, peak, vol = _track_one_frame(pyramids[s], x_prev, f0, config)
                x[qi, s] = xs
                v[qi, s] = _logistic((peak - config.vis_midpoint) / config.vis_width)
                stats[qi, s] = _cost_stats(vol)
                feats[qi, s] = fs.ravel()
                x_prev = xs
                s += direction

    dists = []
    for qi in range(n_q):
        fa = stats[qi] @ pa
        fb = stats[qi] @ pb
        dists.append(
            TrackDistribution(
                mu_a=x[qi, :, 0].copy(),
                mu_b=x[qi, :, 1].copy(),
                sigma_a=build_scale_matrix(fa, config.sigma_floor),
                sigma_b=build_scale_matrix(fb, config.sigma_floor),
            )
        )
    return TrackSet(
        x=x,
        v=v,
        f=feats,
        dists=dists,
        dyn=np.zeros(n_q),
        query_frame=np.full(n_q, s_q, dtype=int),
        query_xy=queries.xy.copy(),
        frames=frames,
    )


# ---------------------------------------------------------------------------
# chaining and the front-end contract


def chain_windows(images, queries: QuerySet, config: TrackerConfig | None = None, window_tracker=None):
    """Track over S_LP >= S frames by chaining overlapping S-frame windows
    (stride S-1), re-querying each next window at the last predicted position.

    Per-frame values come from the window where the frame first appears,
    walking outward from the query's own window.
    """
    config = config or TrackerConfig()
    n_frames = len(images)
    s = config.s
    if n_frames <= s:
        if window_tracker is not None:
            return window_tracker(np.arange(n_frames), queries)
        return correlation_track(images, queries, config)

    if window_tracker is None:
        window_tracker = lambda idx, q: correlation_track(
            [images[i] for i in idx], q, config, frames=np.asarray(idx)
        )

    s_q = int(queries.frame)
    starts = list(range(0, n_frames - s + 1, s - 1))
    if starts[-1] + s < n_frames:
        starts.append(n_frames - s)
    # window containing the query frame
    home = max(i for i, st in enumerate(starts) if st <= s_q and s_q < st + s)

    n_q = len(queries.xy)
    x = np.zeros((n_q, n_frames, 2))
    v = np.zeros((n_q, n_frames))
    phi = np.zeros((n_q, n_frames))
    f = None
    filled = np.zeros(n_frames, dtype=bool)
    gt_dyn = None
    pids = None

    def absorb(ts: TrackSet, idx):
        nonlocal f, gt_dyn, pids
        if f is None:
            f = np.zeros((n_q, n_frames, ts.f.shape[2]))
        ts_phi = ts.phi
        for local, g in enumerate(idx):
            if filled[g]:
                continue
            x[:, g] = ts.x[:, local]
            v[:, g] = ts.v[:, local]
            phi[:, g] = ts_phi[:, local]
            f[:, g] = ts.f[:, local]
            filled[g] = True
        if ts.gt_dynamic is not None:
            gt_dyn = ts.gt_dynamic
        if ts.point_ids is not None:
            pids = ts.point_ids

    idx0 = np.arange(starts[home], starts[home] + s)
    ts0 = window_tracker(idx0, QuerySet(frame=s_q - starts[home], xy=queries.xy))
    absorb(ts0, idx0)

    for wi in range(home + 1, len(starts)):  # forward chain
        st = starts[wi]
        seed_xy = x[:, st].copy()  # frame `st` was filled by the previous window
        idx = np.arange(st, st + s)
        ts = window_tracker(idx, QuerySet(frame=0, xy=seed_xy))
        absorb(ts, idx)
    for wi in range(home - 1, -1, -1):  # backward chain
        st = starts[wi]
        last = st + s - 1
        seed_xy = x[:, last].copy()
        idx = np.arange(st, st + s)
        ts = window_tracker(idx, QuerySet(frame=s - 1, xy=seed_xy))
        absorb(ts, idx)

    dists = [
        TrackDistribution(
            mu_a=x[qi, :, 0].copy(),
            mu_b=x[qi, :, 1].copy(),
            sigma_a=np.diag(np.maximum(phi[qi] / 2.0, config.sigma_floor)),
            sigma_b=np.diag(np.maximum(phi[qi] / 2.0, config.sigma_floor)),
        )
        for qi in range(n_q)
    ]
    return TrackSet(
        x=x,
        v=v,
        f=f if f is not None else np.zeros((n_q, n_frames, 1)),
        dists=dists,
        dyn=np.zeros(n_q),
        query_frame=np.full(n_q, s_q, dtype=int),
        query_xy=queries.xy.copy(),
        frames=np.arange(n_frames),
        gt_dynamic=gt_dyn,
        point_ids=pids,
    )


def track(images, queries: QuerySet, config: TrackerConfig | None = None) -> TrackSet:
    """Front-end contract: full TrackSet over the window, bidirectional,
    chaining when the window exceeds the model size."""
    config = config or TrackerConfig()
    if len(images) <= config.s:
        return correlation_track(images, queries, config)
    return chain_windows(images, queries, config)
