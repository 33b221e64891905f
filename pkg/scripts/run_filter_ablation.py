#!/usr/bin/env python3
"""Ablate the two track filters and report the median-ATE reduction each
one buys.

"dynamic": scenes with independently moving points, filter on
(gamma_d=0.9) vs off.  "uncertainty": scenes with contaminated tracks
(p_bad), filter on (gamma_u=0.8) vs off.
"""

import argparse

import numpy as np

from trackvo.evaluation import Trajectory, ate_rmse
from trackvo.pipeline import PipelineConfig, run_sequence
from trackvo.synth import SceneConfig, generate_scene


def run_ate(scene, **kw):
    traj, _, _ = run_sequence(scene, PipelineConfig(**kw))
    gt = Trajectory(np.arange(scene.n_frames, dtype=float), list(scene.poses))
    return ate_rmse(traj, gt)


def ablate(name, seeds, make_scene, on_kw, off_kw):
    on, off = [], []
    for seed in range(seeds):
        scene = make_scene(seed)
        on.append(run_ate(scene, **on_kw))
        off.append(run_ate(scene, **off_kw))
        print(f"{name} seed {seed}: on {on[-1]:.4f}  off {off[-1]:.4f}")
    reduction = 1.0 - np.median(on) / np.median(off)
    print(
        f"{name}: median ATE on {np.median(on):.4f}, off {np.median(off):.4f}, "
        f"reduction {reduction:.0%}\n"
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument(
        "--which", choices=["dynamic", "uncertainty", "both"], default="both"
    )
    args = ap.parse_args()

    if args.which in ("dynamic", "both"):
        ablate(
            "dynamic",
            args.seeds,
            lambda s: generate_scene(
                SceneConfig(n_dynamic=52, dynamic_speed=0.15), seed=s
            ),
            dict(sigma_px=0.25),
            dict(sigma_px=0.25, gamma_d=2.0),  # threshold > 1 disables the filter
        )
    if args.which in ("uncertainty", "both"):
        ablate(
            "uncertainty",
            args.seeds,
            lambda s: generate_scene(SceneConfig(n_frames=20), seed=s),
            dict(n_queries=96, sigma_px=0.25, p_bad=0.2),
            dict(n_queries=96, sigma_px=0.25, p_bad=0.2, gamma_u=1.0),
        )


if __name__ == "__main__":
    main()
