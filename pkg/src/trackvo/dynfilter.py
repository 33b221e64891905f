"""Anchor-based dynamic track scoring via epipolar motion consistency, plus
the visibility / dynamics / uncertainty / length track filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IRLS_ROUNDS = 5
CAUCHY_SCALE = 1.0  # px
INLIER_BAND = 1.0  # px, membership band for consensus refits
SCORE_TRUNCATION = 0.25  # px, truncation of the model-selection cost
N_HYPOTHESES = 60


class DegenerateConfiguration(Exception):
    pass


class InsufficientAnchors(Exception):
    pass


@dataclass
class FilterConfig:
    gamma_v: float = 0.9
    gamma_d: float = 0.9
    gamma_u: float = 0.8
    gamma_track: int = 3
    tau_d: float = 2.0  # px, logistic midpoint of the dynamic score
    sigma_d: float = 0.5  # px, logistic width

    def __post_init__(self):
        if self.gamma_track < 0:
            raise ValueError("gamma_track must be non-negative")


@dataclass
class ValidityMask:
    w: np.ndarray  # (Q, S) in {0, 1}
    alive: np.ndarray  # (Q,) bool


def _normalize_points(pts):
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.mean(np.linalg.norm(centered, axis=1))
    scale = np.sqrt(2.0) / max(mean_dist, 1e-12)
    t = np.array(
        [[scale, 0, -scale * centroid[0]], [0, scale, -scale * centroid[1]], [0, 0, 1]]
    )
    return centered * scale, t


def _solve_f(x1, x2, weights=None):
    a = np.column_stack(
        [
            x2[:, 0] * x1[:, 0],
            x2[:, 0] * x1[:, 1],
            x2[:, 0],
            x2[:, 1] * x1[:, 0],
            x2[:, 1] * x1[:, 1],
            x2[:, 1],
            x1[:, 0],
            x1[:, 1],
            np.ones(len(x1)),
        ]
    )
    if weights is not None:
        a = a * np.sqrt(weights)[:, None]
    if np.linalg.matrix_rank(a, tol=1e-9) < 8:
        raise DegenerateConfiguration("design matrix rank-deficient")
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, d, vt2 = np.linalg.svd(f)
    d[2] = 0.0
    return u @ np.diag(d) @ vt2


def fit_dominant_motion(x1, x2):
    """Fundamental matrix of the dominant motion between two frames.

    Normalized 8-point solution refined by IRLS with Cauchy weights, so a
    minority of independently moving correspondences is down-weighted.
    When the unweighted initial fit is itself corrupted by gross outliers
    the IRLS rounds cannot recover, so a deterministic random-hypothesis
    stage with iterated consensus refits supplies the starting point; the
    returned model is the candidate with the lowest truncated-quadratic
    cost, which (unlike the Cauchy cost) is immune to the residual pull of
    the down-weighted outliers.
    Satisfies x2^T F x1 = 0 for motion-consistent pairs; ||F||_F = 1.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if len(x1) < 8 or len(x1) != len(x2):
        raise DegenerateConfiguration("need at least 8 correspondences")
    n = len(x1)
    n1, t1 = _normalize_points(x1)
    n2, t2 = _normalize_points(x2)

    def solve(idx=None, w=None):
        if idx is None:
            f_norm = _solve_f(n1, n2, weights=w)
        else:
            f_norm = _solve_f(n1[idx], n2[idx])
        f = t2.T @ f_norm @ t1
        return f / np.linalg.norm(f)

    def cost(f):
        r = sampson_distance(f, x1, x2)
        return float(np.sum(np.minimum(r * r, SCORE_TRUNCATION**2)))

    def local_opt(f):
        # refit on the band of near-consistent correspondences until the
        # membership stabilizes; minimal 8-point fits are exact on their own
        # sample but unreliable elsewhere, so this step is what turns a good
        # hypothesis into a good model
        prev = None
        for _ in range(10):
            inl = sampson_distance(f, x1, x2) < INLIER_BAND
            if inl.sum() < 8 or (prev is not None and np.array_equal(inl, prev)):
                break
            prev = inl
            try:
                f2 = solve(np.where(inl)[0])
            except (DegenerateConfiguration, np.linalg.LinAlgError):
                break
            if cost(f2) > cost(f) + 1e-12:
                break
            f = f2
        return f

    f = local_opt(solve())
    # hypothesis search only when the direct fit leaves most points outside
    # the inlier band, i.e. the data is visibly contaminated
    if np.median(sampson_distance(f, x1, x2)) >= INLIER_BAND:
        best, best_c = f, cost(f)
        rng = np.random.default_rng(0)
        for _ in range(N_HYPOTHESES):
            idx = rng.choice(n, 8, replace=False)
            try:
                fh = local_opt(solve(idx))
            except (DegenerateConfiguration, np.linalg.LinAlgError):
                continue
            c = cost(fh)
            if c < best_c:
                best, best_c = fh, c
        f = best
        # polish on progressively tighter bands to shed outliers that fall
        # close to, but not on, the dominant epipolar geometry
        for band in (1.0, 0.3, 0.1):
            inl = sampson_distance(f, x1, x2) < band
            if inl.sum() >= 8:
                try:
                    f2 = solve(np.where(inl)[0])
                except (DegenerateConfiguration, np.linalg.LinAlgError):
                    continue
                if cost(f2) <= cost(f) + 1e-12:
                    f = f2
    best_f, best_c = f, cost(f)
    for _ in range(IRLS_ROUNDS):
        r = sampson_distance(f, x1, x2)
        w = 1.0 / (1.0 + (r / CAUCHY_SCALE) ** 2)
        try:
            f = solve(w=w)
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            break
        c = cost(f)
        if c < best_c:
            best_f, best_c = f, c
    return best_f


def sampson_distance(f, x1, x2):
    """First-order distance to the epipolar constraint, in pixels."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    fx1 = h1 @ f.T  # (N, 3) = (F x1)^T rows
    ftx2 = h2 @ f  # (N, 3) = (F^T x2)^T rows
    num = np.abs(np.sum(h2 * fx1, axis=1))
    denom = np.sqrt(
        np.maximum(fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2, 1e-12)
    )
    d = num / denom
    return d if d.size > 1 else float(d[0])


def dynamic_score(trackset, anchors, config: FilterConfig | None = None):
    """Per-track motion-inconsistency score in [0, 1].

    For each frame pair (query frame, other frame) the dominant motion is
    fitted on the union of anchor and query correspondences; each query's
    Sampson distances are averaged over its visible frames and squashed
    through a logistic. Returns (scores, degenerate_flag); when no frame
    pair has enough visible correspondences all scores are 0.5 and the
    flag is set.
    """
    config = config or FilterConfig()
    q_xy = trackset.x  # (Q, S, 2)
    q_vis = trackset.v
    n_q, s_count = q_vis.shape
    s_q = int(trackset.query_frame[0]) if n_q else 0
    if anchors is trackset:
        union_xy, union_vis = q_xy, q_vis
    else:
        union_xy = np.concatenate([anchors.x, q_xy], axis=0)
        union_vis = np.concatenate([anchors.v, q_vis], axis=0)

    dist_sum = np.zeros(n_q)
    dist_cnt = np.zeros(n_q)
    any_fit = False
    for s in range(s_count):
        if s == s_q:
            continue
        both = (union_vis[:, s_q] >= config.gamma_v) & (union_vis[:, s] >= config.gamma_v)
        if both.sum() < 8:
            continue
        try:
            f = fit_dominant_motion(union_xy[both, s_q], union_xy[both, s])
        except DegenerateConfiguration:
            continue
        any_fit = True
        q_both = (q_vis[:, s_q] >= config.gamma_v) & (q_vis[:, s] >= config.gamma_v)
        if not np.any(q_both):
            continue
        d = sampson_distance(f, q_xy[q_both, s_q], q_xy[q_both, s])
        dist_sum[q_both] += np.atleast_1d(d)
        dist_cnt[q_both] += 1.0

    if not any_fit:
        return np.full(n_q, 0.5), True
    scores = np.full(n_q, 0.5)
    seen = dist_cnt > 0
    mean_d = dist_sum[seen] / dist_cnt[seen]
    scores[seen] = 1.0 / (1.0 + np.exp(-(mean_d - config.tau_d) / config.sigma_d))
    return scores, False


def filter_tracks(trackset, config: FilterConfig | None = None):
    """Four-criterion validity mask: visibility, static label, uncertainty
    quantile, and minimum track length."""
    config = config or FilterConfig()
    vis = trackset.v
    dyn = trackset.dyn
    phi = trackset.phi  # (Q, S)
    keep = (vis >= config.gamma_v) & (dyn[:, None] < config.gamma_d)
    if np.any(keep):
        cutoff = np.quantile(phi[keep], min(config.gamma_u, 1.0))
        keep = keep & (phi <= cutoff)
    w = keep.astype(np.uint8)
    alive = w.sum(axis=1) >= config.gamma_track
    w[~alive] = 0
    return ValidityMask(w=w, alive=alive)
