"""Command-line entry points: run the VO pipeline, evaluate trajectories,
and generate synthetic fixtures."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .evaluation import (
    AssociationError,
    ParseError,
    Trajectory,
    associate,
    ate_rmse,
    read_tum,
    rpe,
    write_tum,
)
from .geometry import Intrinsics
from .pipeline import IntrinsicsMissing, PipelineConfig, SourceEmpty, run_sequence
from .synth import SceneConfig, SceneSpec, generate_scene, render_images, render_tracks

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(code)


def _add_config_flags(parser):
    defaults = PipelineConfig()
    for name in (
        "n_queries",
        "s",
        "s_lp",
        "s_ba",
        "k",
        "k_ba",
        "gamma_track",
        "grid_k",
        "pool",
        "n_anchors",
        "seed",
    ):
        parser.add_argument(
            f"--{name.replace('_', '-')}",
            type=int,
            default=getattr(defaults, name),
            help=f"default {getattr(defaults, name)}",
        )
    for name in (
        "gamma_v",
        "gamma_d",
        "gamma_u",
        "tau_d",
        "sigma_d",
        "huber_delta",
        "damping",
        "sigma_px",
        "p_bad",
        "sigma_bad",
    ):
        parser.add_argument(
            f"--{name.replace('_', '-')}",
            type=float,
            default=getattr(defaults, name),
            help=f"default {getattr(defaults, name)}",
        )
    parser.add_argument(
        "--tracker", choices=["oracle", "correlation"], default=defaults.tracker
    )


def _config_from_args(args):
    d = {k: v for k, v in vars(args).items() if k in PipelineConfig.__dataclass_fields__}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text())
        d.update({k: v for k, v in file_cfg.items() if k in PipelineConfig.__dataclass_fields__})
    return PipelineConfig.from_dict(d)


def _load_images(directory):
    from PIL import Image

    paths = sorted(
        p for p in Path(directory).iterdir() if p.suffix.lower() in (".png", ".jpg", ".pgm")
    )
    if not paths:
        raise SourceEmpty(f"no images in {directory}")
    return [np.asarray(Image.open(p).convert("L"), dtype=float) / 255.0 for p in paths]


def cmd_run(args):
    config = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = None
    if args.scene:
        scene = SceneSpec.from_json(Path(args.scene).read_text())
        source = scene
        intrinsics = None
    else:
        if not args.images:
            _fail(EXIT_CONFIG, "either --scene or --images is required")
        if config.tracker == "oracle":
            _fail(EXIT_CONFIG, "--tracker oracle requires --scene")
        if not args.intrinsics:
            _fail(EXIT_CONFIG, "--images requires --intrinsics")
        try:
            intrinsics = Intrinsics.load(args.intrinsics)
            source = _load_images(args.images)
        except (OSError, ValueError, SourceEmpty) as e:
            _fail(EXIT_CONFIG, str(e))
    try:
        traj, diagnostics, pipe = run_sequence(source, config, intrinsics=intrinsics)
    except (SourceEmpty, IntrinsicsMissing, ValueError) as e:
        _fail(EXIT_CONFIG, str(e))
    except Exception as e:  # noqa: BLE001 - surfaced as runtime failure
        _fail(EXIT_RUNTIME, f"pipeline failed: {e}")

    write_tum(traj, out / "trajectory.txt")
    with open(out / "tracks.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["host", "track", "dyn", "mean_phi", "kept"])
        writer.writeheader()
        for row in pipe.track_report():
            writer.writerow(row)
    with open(out / "timing.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["frame", "n_tracks", "kept_points", "dropped_tracks", "ba_cost", "ba_failed", "time_s"],
        )
        writer.writeheader()
        for row in diagnostics:
            writer.writerow(row)
    if scene is not None:
        gt = Trajectory(np.arange(scene.n_frames, dtype=float), list(scene.poses))
        write_tum(gt, out / "gt_trajectory.txt")
    print(f"wrote {out / 'trajectory.txt'} ({len(traj)} poses)")
    return 0


def cmd_eval(args):
    try:
        est = read_tum(args.est)
        gt = read_tum(args.gt)
        est, gt = associate(est, gt)
    except (ParseError, AssociationError, OSError, ValueError) as e:
        _fail(EXIT_CONFIG, str(e))
    rows = [("ate_rmse_m", ate_rmse(est, gt))]
    try:
        tr, rot = rpe(est, gt, delta=args.delta)
        rows += [("rpe_trans_m_per_m", tr), ("rpe_rot_deg_per_m", rot)]
    except Exception as e:  # PathTooShort and friends
        print(f"rpe skipped: {e}", file=sys.stderr)
    for name, value in rows:
        print(f"{name:>22s}  {value:.9f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerows(rows)
    return 0


def cmd_synth(args):
    try:
        overrides = json.loads(Path(args.config).read_text()) if args.config else {}
        scene_cfg = SceneConfig.from_dict(overrides)
        scene = generate_scene(scene_cfg, seed=args.seed)
    except Exception as e:  # noqa: BLE001
        _fail(EXIT_CONFIG, f"invalid scene config: {e}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.json").write_text(scene.to_json())
    gt = Trajectory(np.arange(scene.n_frames, dtype=float), list(scene.poses))
    write_tum(gt, out / "gt_trajectory.txt")
    tracks = render_tracks(scene)
    np.savez(
        out / "gt_tracks.npz",
        xy=tracks.xy,
        vis=tracks.vis,
        dynamic_label=tracks.dynamic_label,
        depth=tracks.depth,
    )
    if args.render:
        from PIL import Image

        for s, img in enumerate(render_images(scene)):
            Image.fromarray((img * 255).astype(np.uint8)).save(out / f"frame_{s:04d}.png")
    print(f"wrote scene fixture to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trackvo",
        description="Visual odometry from long-term point tracks over synthetic or real image sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the VO pipeline")
    run.add_argument("--scene", help="scene JSON fixture (oracle or correlation mode)")
    run.add_argument("--images", help="directory of image frames")
    run.add_argument("--intrinsics", help="text file with `fx fy cx cy`")
    run.add_argument("--config", help="JSON file of config overrides")
    run.add_argument("--out", default="out", help="output directory")
    _add_config_flags(run)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="compare two TUM trajectory files")
    ev.add_argument("est")
    ev.add_argument("gt")
    ev.add_argument("--delta", type=float, default=1.0, help="RPE distance in meters")
    ev.add_argument("--out", help="write metric,value CSV here")
    ev.set_defaults(func=cmd_eval)

    sy = sub.add_parser("synth", help="generate a synthetic scene fixture")
    sy.add_argument("--config", help="JSON file of scene config overrides")
    sy.add_argument("--out", default="fixture", help="output directory")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--render", action="store_true", help="also write PNG frames")
    sy.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
