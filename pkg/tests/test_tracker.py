"""Oracle and correlation tracking front-ends, cost volumes, refinement, and
window chaining."""

import numpy as np
import pytest

from trackvo.sampling import QuerySet
from trackvo.synth import SceneConfig, generate_scene, render_tracks, shift_image, value_noise_image
from trackvo.tracker import (
    ImageTooSmall,
    OracleNoise,
    QueryUnmatched,
    TrackerConfig,
    WindowMismatch,
    build_cost_volume,
    build_feature_pyramid,
    chain_windows,
    correlation_track,
    match_queries_to_scene,
    oracle_track,
    query_descriptor,
    refine_offset,
    sample_descriptors,
    track,
    _to_level,
)


# -- oracle tracker ----------------------------------------------------------


def scene_with_queries(seed=0, n_frames=8, n_queries=12):
    scene = generate_scene(SceneConfig(n_frames=n_frames, n_static=60), seed=seed)
    gt = render_tracks(scene)
    visible = np.where(gt.vis[:, 0] > 0.5)[0][:n_queries]
    queries = QuerySet(frame=0, xy=gt.xy[visible, 0].copy())
    return scene, gt, queries, visible


def test_oracle_noise_free_positions_are_exact():
    scene, gt, queries, ids = scene_with_queries()
    ts = oracle_track(scene, queries, point_ids=ids, gt=gt)
    np.testing.assert_array_equal(ts.x, gt.xy[ids])
    np.testing.assert_array_equal(ts.v, gt.vis[ids])


def test_oracle_pins_query_row_despite_noise():
    scene, gt, queries, ids = scene_with_queries()
    ts = oracle_track(
        scene, queries, noise=OracleNoise(sigma_px=1.0), point_ids=ids, gt=gt
    )
    np.testing.assert_array_equal(ts.x[:, 0], queries.xy)


def test_oracle_noise_consistent_across_shifted_windows():
    # re-tracking the same points over overlapping windows must reproduce
    # identical noisy positions on the shared frames
    scene, gt, queries, ids = scene_with_queries(n_frames=12)
    noise = OracleNoise(sigma_px=0.5)
    a = oracle_track(scene, queries, noise=noise, frames=np.arange(0, 8), seed=3, point_ids=ids, gt=gt)
    q2 = QuerySet(frame=0, xy=gt.xy[ids, 4].copy())
    b = oracle_track(scene, q2, noise=noise, frames=np.arange(4, 12), seed=3, point_ids=ids, gt=gt)
    # frames 5..7 are shared and on neither query row
    np.testing.assert_array_equal(a.x[:, 5:8], b.x[:, 1:4])


def test_oracle_contamination_count_and_uncertainty_separation():
    scene, gt, queries, ids = scene_with_queries(n_queries=10)
    noise = OracleNoise(sigma_px=0.1, p_bad=0.25, sigma_bad=5.0)
    ts = oracle_track(scene, queries, noise=noise, point_ids=ids, gt=gt)
    phi_mean = ts.phi.mean(axis=1)
    n_bad = int(np.sum(phi_mean > np.median(phi_mean) * 10))
    assert n_bad == int(np.ceil(0.25 * 10))
    # contaminated tracks are separable by phi alone
    order = np.sort(phi_mean)
    assert order[-n_bad] / order[-n_bad - 1] > 10


def test_oracle_carries_dynamic_labels():
    scene = generate_scene(SceneConfig(n_frames=6, n_static=40, n_dynamic=8), seed=1)
    gt = render_tracks(scene)
    ids = np.arange(36, 48)  # last statics + all dynamics
    queries = QuerySet(frame=0, xy=gt.xy[ids, 0].copy())
    ts = oracle_track(scene, queries, point_ids=ids, gt=gt)
    np.testing.assert_array_equal(ts.gt_dynamic, gt.dynamic_label[ids])


def test_match_queries_finds_projected_points():
    scene, gt, queries, ids = scene_with_queries()
    got = match_queries_to_scene(scene, queries, 0, gt=gt)
    np.testing.assert_array_equal(got, ids)


def test_match_queries_rejects_far_query():
    scene, gt, _, _ = scene_with_queries()
    bad = QuerySet(frame=0, xy=np.array([[-500.0, -500.0]]))
    with pytest.raises(QueryUnmatched):
        match_queries_to_scene(scene, bad, 0, gt=gt)


# -- pyramids and descriptors ------------------------------------------------


def test_pyramid_levels_halve():
    img = value_noise_image((64, 96), seed=0)
    pyr = build_feature_pyramid(img, levels=3)
    assert [l.shape for l in pyr.levels] == [(64, 96), (32, 48), (16, 24)]


def test_pyramid_rejects_small_images():
    with pytest.raises(ImageTooSmall):
        build_feature_pyramid(np.zeros((16, 16)))


def test_level_zero_coordinates_unchanged():
    np.testing.assert_array_equal(_to_level([10.0, 20.0], 0), [10.0, 20.0])


def test_level_mapping_inverts_pool_centers():
    # level-l pixel 0 sits at full-res (2^l - 1) / 2
    for lvl in (1, 2):
        c = (2**lvl - 1) / 2.0
        np.testing.assert_allclose(_to_level([c, c], lvl), [0.0, 0.0], atol=1e-12)


def test_descriptors_are_unit_norm_and_mean_free():
    img = value_noise_image((64, 64), seed=1)
    descs, valid = sample_descriptors(img, [[20.0, 30.0], [40.5, 25.25]], 7)
    assert valid.all()
    np.testing.assert_allclose(np.linalg.norm(descs, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(descs.sum(axis=1), 0.0, atol=1e-10)


def test_descriptors_flag_border_positions():
    img = value_noise_image((64, 64), seed=2)
    descs, valid = sample_descriptors(img, [[1.0, 30.0], [62.5, 30.0]], 7)
    assert not valid.any()
    np.testing.assert_array_equal(descs, 0.0)


# -- cost volume -------------------------------------------------------------


def brute_force_ncc(img, template_patch, cx, cy, patch=7):
    """NCC of the mean-free unit template against the integer-centered patch."""
    half = patch // 2
    win = img[cy - half : cy + half + 1, cx - half : cx + half + 1].astype(float)
    win = win.ravel() - win.mean()
    n = np.linalg.norm(win)
    if n < 1e-12:
        return 0.0
    return float(win / n @ template_patch)


def test_cost_volume_matches_brute_force_ncc():
    img = value_noise_image((64, 64), seed=3)
    pyr = build_feature_pyramid(img, levels=1)
    x = np.array([30.0, 28.0])
    f_q = query_descriptor(pyr, x)
    vol = build_cost_volume(pyr, f_q, x, r=3)
    for dy in range(-3, 4):
        for dx in range(-3, 4):
            expected = brute_force_ncc(img, f_q[0], 30 + dx, 28 + dy)
            assert vol[0, dy + 3, dx + 3] == pytest.approx(expected, abs=1e-10)


def test_cost_volume_peak_at_true_displacement():
    img = value_noise_image((64, 64), seed=4)
    shifted = shift_image(img, 2.0, -1.0)
    pyr = build_feature_pyramid(shifted, levels=1)
    x = np.array([30.0, 30.0])
    f_q = query_descriptor(build_feature_pyramid(img, levels=1), x)
    vol = build_cost_volume(pyr, f_q, x, r=4)
    iy, ix = np.unravel_index(np.argmax(vol[0]), vol[0].shape)
    assert (ix - 4, iy - 4) == (2, -1)


def test_cost_volume_out_of_bounds_scores_minus_one():
    img = value_noise_image((64, 64), seed=5)
    pyr = build_feature_pyramid(img, levels=1)
    x = np.array([4.0, 30.0])
    f_q = query_descriptor(pyr, x)
    vol = build_cost_volume(pyr, f_q, x, r=4)
    assert (vol[0][:, 0] == -1.0).all()  # offsets reaching past the left edge


def test_refine_offset_recovers_one_hot_peak():
    vol = np.full((1, 9, 9), 0.0)
    vol[0, 4 + 2, 4 + 1] = 1.0
    delta = refine_offset(vol, beta=20.0)
    np.testing.assert_allclose(delta, [1.0, 2.0], atol=1e-6)


def test_refine_offset_centered_peak_is_zero():
    vol = np.zeros((1, 9, 9))
    vol[0, 4, 4] = 1.0
    np.testing.assert_allclose(refine_offset(vol), [0.0, 0.0], atol=1e-9)


# -- correlation tracking ----------------------------------------------------


def test_integer_translation_is_exact():
    img0 = value_noise_image((96, 128), seed=6)
    img1 = shift_image(img0, 3.0, 2.0)
    xy = np.array([[40.0, 40.0], [60.0, 50.0], [80.0, 30.0]])
    ts = correlation_track([img0, img1], QuerySet(frame=0, xy=xy))
    np.testing.assert_array_equal(ts.x[:, 1], xy + [3.0, 2.0])
    assert (ts.v > 0.9).all()


def test_subpixel_translation_within_half_pixel():
    img0 = value_noise_image((96, 128), seed=7)
    img1 = shift_image(img0, 0.3, 0.6)
    xy = np.array([[40.0, 40.0], [64.0, 56.0], [90.0, 44.0]])
    ts = correlation_track([img0, img1], QuerySet(frame=0, xy=xy))
    err = np.abs(ts.x[:, 1] - (xy + [0.3, 0.6]))
    assert err.max() < 0.5


def test_tracking_is_bidirectional():
    img1 = value_noise_image((96, 128), seed=8)
    img0 = shift_image(img1, -2.0, 0.0)
    xy = np.array([[50.0, 50.0]])
    ts = correlation_track([img0, img1], QuerySet(frame=1, xy=xy))
    np.testing.assert_allclose(ts.x[0, 0], [48.0, 50.0], atol=1e-9)


def test_window_mismatch_errors():
    imgs = [value_noise_image((64, 64), seed=9)] * 3
    with pytest.raises(WindowMismatch):
        correlation_track(imgs, QuerySet(frame=5, xy=np.zeros((1, 2))))
    with pytest.raises(WindowMismatch):
        correlation_track(imgs, QuerySet(frame=0, xy=np.zeros((1, 2))), frames=[0, 1])


# -- chaining ----------------------------------------------------------------


def drifting_sequence(n_frames, step=3.0, seed=10):
    base = value_noise_image((96, 160), seed=seed)
    return [shift_image(base, step * i, 0.0) for i in range(n_frames)]


def test_chaining_tracks_constant_slope_without_jumps():
    cfg = TrackerConfig(s=8, s_lp=12)
    imgs = drifting_sequence(12)
    xy = np.array([[30.0, 48.0], [40.0, 60.0]])
    ts = chain_windows(imgs, QuerySet(frame=0, xy=xy), cfg)
    expected = xy[:, None, :] + np.stack(
        [3.0 * np.arange(12), np.zeros(12)], axis=-1
    )
    err = np.linalg.norm(ts.x - expected, axis=2)
    assert err.max() < 0.5
    # chaining must not introduce discontinuities at window seams
    jumps = np.linalg.norm(np.diff(ts.x - expected, axis=1), axis=2)
    assert jumps.max() < 0.5


def test_chain_matches_single_window_when_short():
    imgs = drifting_sequence(5, step=2.0, seed=11)
    xy = np.array([[40.0, 40.0]])
    q = QuerySet(frame=0, xy=xy)
    cfg = TrackerConfig(s=8)
    a = chain_windows(imgs, q, cfg)
    b = correlation_track(imgs, q, cfg)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.v, b.v)


def test_track_front_end_dispatches_by_window_size():
    cfg = TrackerConfig(s=4)
    imgs = drifting_sequence(6, step=1.0, seed=12)
    xy = np.array([[40.0, 40.0]])
    ts = track(imgs, QuerySet(frame=0, xy=xy), cfg)
    assert ts.n_frames == 6
    expected = xy[0, 0] + np.arange(6)
    np.testing.assert_allclose(ts.x[0, :, 0], expected, atol=0.5)


def test_trackset_shapes_and_phi():
    img0 = value_noise_image((64, 64), seed=13)
    ts = correlation_track(
        [img0, shift_image(img0, 1.0, 0.0)],
        QuerySet(frame=0, xy=np.array([[32.0, 32.0]])),
    )
    assert ts.n_tracks == 1 and ts.n_frames == 2
    assert ts.phi.shape == (1, 2)
    assert (ts.phi > 0).all()
