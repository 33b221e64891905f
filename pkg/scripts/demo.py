#!/usr/bin/env python3
"""End-to-end demo: synthesize a scene, run the odometry pipeline on it,
and evaluate the estimate against ground truth — all through the CLI."""

import argparse
import tempfile
from pathlib import Path

from trackvo.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = args.out or Path(tempfile.mkdtemp(prefix="trackvo_demo_"))
    fixture = out / "scene"
    run_dir = out / "run"

    print(f"== synthesizing scene into {fixture}")
    cli(["synth", "--out", str(fixture), "--seed", str(args.seed)])

    print(f"\n== running odometry into {run_dir}")
    cli(
        [
            "run",
            "--scene",
            str(fixture / "scene.json"),
            "--out",
            str(run_dir),
            "--sigma-px",
            "0.25",
        ]
    )

    print("\n== evaluating against ground truth")
    cli(
        [
            "eval",
            str(run_dir / "trajectory.txt"),
            str(run_dir / "gt_trajectory.txt"),
            "--out",
            str(run_dir / "metrics.csv"),
        ]
    )
    print(f"\nartifacts in {out}")


if __name__ == "__main__":
    main()
