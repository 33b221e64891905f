"""Command-line interface: run, eval, and synth subcommands."""

import json

import numpy as np
import pytest

from trackvo.cli import EXIT_CONFIG, main
from trackvo.evaluation import read_tum


def make_fixture(tmp_path, n_frames=8, seed=0, extra=None):
    cfg = {"n_frames": n_frames, "n_static": 60}
    cfg.update(extra or {})
    cfg_path = tmp_path / "scene_cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "fixture"
    assert (
        main(["synth", "--config", str(cfg_path), "--out", str(out), "--seed", str(seed)])
        == 0
    )
    return out


# -- synth -------------------------------------------------------------------


def test_synth_writes_fixture_files(tmp_path):
    out = make_fixture(tmp_path)
    assert (out / "scene.json").exists()
    assert (out / "gt_trajectory.txt").exists()
    tracks = np.load(out / "gt_tracks.npz")
    assert tracks["xy"].shape[1] == 8


def test_synth_is_deterministic(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = make_fixture(tmp_path / "a", seed=5)
    b = make_fixture(tmp_path / "b", seed=5)
    assert (a / "scene.json").read_text() == (b / "scene.json").read_text()


def test_synth_rejects_invalid_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_frames": 1}))
    with pytest.raises(SystemExit) as e:
        main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert e.value.code == EXIT_CONFIG


# -- run ---------------------------------------------------------------------


def test_run_writes_outputs_and_matches_ground_truth(tmp_path, capsys):
    fixture = make_fixture(tmp_path)
    out = tmp_path / "run"
    code = main(
        [
            "run",
            "--scene",
            str(fixture / "scene.json"),
            "--out",
            str(out),
            "--n-queries",
            "96",
        ]
    )
    assert code == 0
    traj = read_tum(out / "trajectory.txt")
    assert len(traj) == 8
    assert (out / "tracks.csv").exists()
    assert (out / "timing.csv").exists()
    assert (out / "gt_trajectory.txt").exists()
    assert "trajectory.txt" in capsys.readouterr().out


def test_run_is_deterministic(tmp_path):
    fixture = make_fixture(tmp_path)
    args = ["run", "--scene", str(fixture / "scene.json"), "--n-queries", "64"]
    main(args + ["--out", str(tmp_path / "r1")])
    main(args + ["--out", str(tmp_path / "r2")])
    assert (tmp_path / "r1" / "trajectory.txt").read_text() == (
        tmp_path / "r2" / "trajectory.txt"
    ).read_text()


def test_run_requires_a_source(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["run", "--out", str(tmp_path / "x")])
    assert e.value.code == EXIT_CONFIG


def test_run_oracle_rejects_image_input(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["run", "--images", str(tmp_path), "--out", str(tmp_path / "x")])
    assert e.value.code == EXIT_CONFIG


# -- eval --------------------------------------------------------------------


def test_eval_reports_near_zero_error_for_oracle_run(tmp_path, capsys):
    fixture = make_fixture(tmp_path, n_frames=10)
    out = tmp_path / "run"
    main(["run", "--scene", str(fixture / "scene.json"), "--out", str(out), "--n-queries", "96"])
    metrics = tmp_path / "metrics.csv"
    code = main(
        [
            "eval",
            str(out / "trajectory.txt"),
            str(out / "gt_trajectory.txt"),
            "--out",
            str(metrics),
        ]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "ate_rmse_m" in printed
    rows = dict(
        line.split(",") for line in metrics.read_text().splitlines()[1:]
    )
    assert float(rows["ate_rmse_m"]) < 1e-4


def test_eval_rejects_missing_file(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["eval", str(tmp_path / "nope.txt"), str(tmp_path / "nope2.txt")])
    assert e.value.code == EXIT_CONFIG


def test_eval_rejects_malformed_trajectory(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0.0 1 2 3\n")
    ok = tmp_path / "ok.txt"
    ok.write_text("0.0 0 0 0 0 0 0 1\n")
    with pytest.raises(SystemExit) as e:
        main(["eval", str(bad), str(ok)])
    assert e.value.code == EXIT_CONFIG
