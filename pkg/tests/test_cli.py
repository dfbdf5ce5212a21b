import json

import numpy as np
import pytest

import slam_main
from ratslam.cli import exports
from ratslam.cli.commands import cmd_eval, cmd_run, cmd_synth, evaluate_run
from ratslam.data.synth_world import ScenarioSpec, dump_scenario, generate
from ratslam.errors import MissingDataError


SMALL_RUN = [
    "image_crop_x_min=0",
    "image_crop_x_max=32",
    "image_crop_y_min=0",
    "image_crop_y_max=24",
    "template_x_size=16",
    "template_y_size=8",
    "vt_shift_match=4",
    "vt_step_match=2",
    "vt_patch_normalise=1",
]

RUN_FILES = [
    "config.txt",
    "experience_map.txt",
    "templates.txt",
    "step_log.csv",
    "trajectory.csv",
    "dead_reckoning.csv",
    "estimate_track.csv",
    "overlay.svg",
    "events.jsonl",
    "summary.json",
]


def _spec(**kw):
    base = dict(waypoints="0:0;10:0;10:10;0:10;0:0", n_scenes=8, image_width=32, image_height=24)
    base.update(kw)
    return ScenarioSpec(**base)


@pytest.fixture
def dataset(tmp_path):
    return generate(_spec(), tmp_path / "dataset")


def test_run_writes_fixed_outputs(dataset, tmp_path):
    out = tmp_path / "run"
    assert cmd_run(dataset, None, out, overrides=SMALL_RUN) == 0
    for name in RUN_FILES:
        assert (out / name).is_file(), name

    lines = (out / "step_log.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 + 81
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["steps"] == 81
    assert summary["experiences"] >= 1
    assert '<g id="ground_truth">' in (out / "overlay.svg").read_text(encoding="utf-8")
    assert (out / "config.txt").read_text(encoding="utf-8").count("template_x_size = 16") == 1


def test_run_is_deterministic(dataset, tmp_path):
    assert cmd_run(dataset, None, tmp_path / "a", overrides=SMALL_RUN) == 0
    assert cmd_run(dataset, None, tmp_path / "b", overrides=SMALL_RUN) == 0
    for name in RUN_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_run_without_ground_truth_omits_polyline(dataset, tmp_path):
    manifest = dataset / "dataset.toml"
    text = manifest.read_text(encoding="utf-8").replace("groundtruth = groundtruth.csv", "groundtruth = ")
    manifest.write_text(text, encoding="utf-8")
    out = tmp_path / "run"
    assert cmd_run(dataset, None, out, overrides=SMALL_RUN) == 0
    svg = (out / "overlay.svg").read_text(encoding="utf-8")
    assert "ground_truth" not in svg
    assert '<g id="estimate">' in svg
    assert cmd_eval(out, dataset) == 3


def test_run_snapshots_and_volumes(dataset, tmp_path):
    out = tmp_path / "run"
    assert cmd_run(dataset, None, out, overrides=SMALL_RUN, dump_volumes=True, snapshot_every=40) == 0
    assert sorted(p.name for p in (out / "snapshots").iterdir()) == ["trajectory_000039.csv", "trajectory_000079.csv"]
    volumes = sorted((out / "volumes").iterdir())
    assert len(volumes) == 81
    P = exports.read_volume(volumes[-1])
    assert P.shape == (18, 18, 36)
    assert P.sum() == pytest.approx(1.0)


def test_run_bad_input_exit_codes(dataset, tmp_path):
    assert cmd_run(tmp_path / "nowhere", None, tmp_path / "run") == 2
    assert cmd_run(dataset, None, tmp_path / "run", overrides=["exp_correction=3"]) == 2
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("pc_w_e_dim = 4\n", encoding="utf-8")
    assert cmd_run(dataset, bad_cfg, tmp_path / "run") == 2
    # the default crop does not fit 32x24 frames
    assert cmd_run(dataset, None, tmp_path / "run") == 2


def test_synth_command(tmp_path):
    spec = tmp_path / "square.txt"
    spec.write_text(dump_scenario(_spec(laps=1)), encoding="utf-8")
    assert cmd_synth(spec, tmp_path / "a", seed=3) == 0
    assert cmd_synth(spec, tmp_path / "b", seed=4) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "groundtruth.csv").read_bytes() == (b / "groundtruth.csv").read_bytes()
    assert (a / "odometry.csv").read_bytes() != (b / "odometry.csv").read_bytes()
    assert "seed = 3" in (a / "scenario.txt").read_text(encoding="utf-8")

    bad = tmp_path / "bad.txt"
    bad.write_text("laps = 0\n", encoding="utf-8")
    assert cmd_synth(bad, tmp_path / "c") == 2
    assert cmd_synth(tmp_path / "missing.txt", tmp_path / "c") == 2


def test_eval_of_perfect_estimate_is_zero(dataset, tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    gt = np.loadtxt(dataset / "groundtruth.csv", delimiter=",", skiprows=1)
    lines = ["step,timestamp,x,y"] + [f"{k},{float(t)!r},{float(x)!r},{float(y)!r}" for k, (t, x, y) in enumerate(gt)]
    (run / "estimate_track.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    report = evaluate_run(run, dataset, use_alignment=True)
    assert report.d_hausdorff_raw == 0.0
    assert report.d_hausdorff == pytest.approx(0.0, abs=1e-9)
    assert report.n_pairs == report.n_est == report.n_gt == 81
    assert report.dead_reckoning == {}
    assert json.loads((run / "eval_report.json").read_text(encoding="utf-8"))["d_hausdorff_raw"] == 0.0
    assert (run / "eval_report.txt").read_text(encoding="utf-8").startswith("# trajectory evaluation")


def test_eval_without_overlapping_timestamps(dataset, tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    lines = ["step,timestamp,x,y"] + [f"{k},{1000.0 + k!r},0.0,0.0" for k in range(3)]
    (run / "estimate_track.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(MissingDataError):
        evaluate_run(run, dataset)
    assert cmd_eval(run, dataset) == 3
    assert not (run / "eval_report.json").exists()


def test_eval_after_run(dataset, tmp_path):
    out = tmp_path / "run"
    assert cmd_run(dataset, None, out, overrides=SMALL_RUN) == 0
    assert cmd_eval(out, dataset, align=True) == 0
    data = json.loads((out / "eval_report.json").read_text(encoding="utf-8"))
    assert data["aligned"] is True
    assert data["n_est"] == 81
    assert "dead_reckoning_d_hausdorff_aligned" in data


def test_volume_round_trip(tmp_path):
    P = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4) / 10
    path = exports.write_volume(tmp_path / "v.bin", P)
    raw = path.read_bytes()
    assert len(raw) == 12 + 8 * P.size
    assert np.frombuffer(raw[:12], dtype="<u4").tolist() == [2, 3, 4]
    np.testing.assert_array_equal(exports.read_volume(path), P)


def test_svg_layers():
    est = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    with_gt = exports.render_svg(est, est[:2], est + 0.1)
    assert with_gt.startswith("<svg")
    assert with_gt.count("<polyline") == 2
    assert with_gt.count("<circle") == 2
    without = exports.render_svg(est)
    assert without.count("<polyline") == 1
    assert "ground_truth" not in without


def test_main_entry_point(tmp_path):
    spec = tmp_path / "square.txt"
    spec.write_text(dump_scenario(_spec(laps=1)), encoding="utf-8")
    assert slam_main.main(["synth", str(spec), "--out", str(tmp_path / "ds"), "--set", "n_scenes=4"]) == 0
    assert "n_scenes = 4" in (tmp_path / "ds" / "scenario.txt").read_text(encoding="utf-8")
    with pytest.raises(SystemExit):
        slam_main.main(["fly"])
