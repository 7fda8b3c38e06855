import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from v2xnoise.cfas import densify_depth_max, depth_gradients, render_sparse_depth
from v2xnoise.cli import ledger_stats, main, parse_frames
from v2xnoise.config import RunConfig
from v2xnoise.cfas import yaw_perturbed
from v2xnoise.dataset_io import (
    CalibrationRecord,
    encode_raster,
    read_calibration,
    read_manifest,
    read_point_cloud,
    tree_digest,
    write_calibration,
    write_point_cloud,
)
from v2xnoise.geometry import PointCloud, RigidTransform
from v2xnoise.pipeline import LEDGER_NAME
from v2xnoise.synthetic import LIDAR_TO_CAMERA_R, synthetic_camera


def test_parse_frames():
    assert parse_frames("all", 4) == [0, 1, 2, 3]
    assert parse_frames("0,3,5-7", 10) == [0, 3, 5, 6, 7]
    assert parse_frames("2-20", 5) == [2, 3, 4]
    for bad in ("x", "3-1", "-2"):
        with pytest.raises(ValueError):
            parse_frames(bad, 5)


def test_corrupt_verify_stats_cycle(small_scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["corrupt", str(small_scenario), "--output", str(out), "--seed", "4"]) == 0
    assert (out / LEDGER_NAME).is_file()
    assert main(["verify", str(out)]) == 0
    assert main(["--seed", "5", "verify", str(out)]) == 1
    assert "DIVERGENCE" in capsys.readouterr().out
    assert main(["stats", str(out / LEDGER_NAME)]) == 0
    text = capsys.readouterr().out
    assert "bounds: ok" in text and "misalignment overall" in text
    assert main(["stats", str(out / LEDGER_NAME), "--json", "--output", str(tmp_path / "s.json")]) == 0
    stats = json.loads((tmp_path / "s.json").read_text())
    calib = [p for p in stats["params"] if p["noise_kind"] == "calibration" and p["param"].startswith("d_r")]
    assert calib and all(-0.5 <= p["min"] and p["max"] <= 0.5 for p in calib)


def test_global_flags_either_side(small_scenario, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "7", "--output", str(a), "corrupt", str(small_scenario)]) == 0
    assert main(["corrupt", str(small_scenario), "--seed", "7", "--output", str(b), "--workers", "2"]) == 0
    assert tree_digest(a) == tree_digest(b)


def test_config_file(small_scenario, tmp_path):
    cfg = RunConfig.disabled(seed=2)
    cfg.dump(tmp_path / "c.json")
    out = tmp_path / "o"
    assert main(["--config", str(tmp_path / "c.json"), "corrupt", str(small_scenario), "--output", str(out)]) == 0
    assert tree_digest(out, exclude={LEDGER_NAME}) == tree_digest(small_scenario.parent)


def test_invalid_input_exit_2(small_scenario, tmp_path):
    assert main(["corrupt", str(tmp_path / "nope.json"), "--output", str(tmp_path / "o")]) == 2
    assert main(["corrupt", str(small_scenario)]) == 2
    (tmp_path / "bad.json").write_text('{"version": 1, "bogus": true}')
    assert main(["--config", str(tmp_path / "bad.json"), "corrupt", str(small_scenario),
                 "--output", str(tmp_path / "o")]) == 2
    assert main(["nonsense"]) == 2
    assert main(["corrupt", str(small_scenario), "--output", str(tmp_path / "o"), "--workers", "0"]) == 2


def test_partial_failure_exit_1(small_scenario, tmp_path, capsys):
    src = tmp_path / "in"
    shutil.copytree(small_scenario.parent, src)
    (src / "cav2" / "lidar" / "000001.pcd").write_bytes(b"garbage\n")
    assert main(["corrupt", str(src / "manifest.json"), "--output", str(tmp_path / "o")]) == 1
    assert "cav2/lidar/000001.pcd" in capsys.readouterr().err


def _single_point_scenario(root, points):
    cam = synthetic_camera(32, 24)
    T = RigidTransform(np.eye(3), np.zeros(3), "lidar", "camera")
    write_point_cloud(PointCloud(points), root / "l.pcd")
    write_calibration(CalibrationRecord("camera", T, "lidar_to_camera", cam), root / "cam.txt")
    (root / "cam.png").write_bytes(b"")
    doc = {"schema": "v2xnoise/manifest", "version": 1, "scenario_id": "one", "agents": [
        {"agent_id": "a", "kind": "vehicle", "sensors": [
            {"sensor_id": "lidar", "kind": "lidar", "frames": [{"timestamp": 0, "path": "l.pcd"}]},
            {"sensor_id": "camera", "kind": "camera", "calibration": "cam.txt",
             "frames": [{"timestamp": 0, "path": "cam.png"}]}]}]}
    (root / "m.json").write_text(json.dumps(doc))
    return root / "m.json"


def test_project_single_point(tmp_path):
    from v2xnoise.dataset_io import read_raster

    m = _single_point_scenario(tmp_path, [[0.0, 0.0, 10.0]])
    assert main(["project", str(m), "--output", str(tmp_path / "r")]) == 0
    _, sparse = read_raster(tmp_path / "r/a/camera/000000.sparse.v2xr")
    dense_d, dense = read_raster(tmp_path / "r/a/camera/000000.dense.v2xr")
    assert sparse.sum() == 1 and dense.sum() == 49
    assert np.all(dense_d[dense] == 10.0)


def test_project_empty_cloud(tmp_path):
    from v2xnoise.dataset_io import read_raster

    m = _single_point_scenario(tmp_path, np.zeros((0, 3)))
    assert main(["project", str(m), "--output", str(tmp_path / "r"), "--preview"]) == 0
    for tag in ("sparse", "dense"):
        _, valid = read_raster(tmp_path / f"r/a/camera/000000.{tag}.v2xr")
        assert not valid.any()
        assert (tmp_path / f"r/a/camera/000000.{tag}.png").is_file()


def test_project_and_depthvar_match_library(small_scenario, tmp_path):
    out = tmp_path / "r"
    assert main(["project", str(small_scenario), "--output", str(out), "--frames", "1,4"]) == 0
    assert main(["depthvar", str(small_scenario), "--output", str(out), "--frames", "1,4"]) == 0
    manifest = read_manifest(small_scenario)
    root = small_scenario.parent
    for agent in manifest.agents:
        calib = read_calibration(root / f"{agent.agent_id}/calib/camera.txt")
        T = calib.extrinsic.with_frames(None, None)
        for k in (1, 4):
            cloud = read_point_cloud(root / f"{agent.agent_id}/lidar/{k:06d}.pcd")
            sparse = render_sparse_depth(cloud, calib.intrinsics, T)
            dense = densify_depth_max(sparse)
            var = depth_gradients(dense)
            stem = out / agent.agent_id / "camera" / f"{k:06d}"
            assert (stem.parent / f"{stem.name}.sparse.v2xr").read_bytes() == encode_raster(sparse.depth, sparse.valid)
            assert (stem.parent / f"{stem.name}.dense.v2xr").read_bytes() == encode_raster(dense.depth, dense.valid)
            assert (stem.parent / f"{stem.name}.depthvar.v2xr").read_bytes() == encode_raster(var.data, var.valid)
        assert not (out / agent.agent_id / "camera" / "000000.sparse.v2xr").exists()


def test_project_missing_calibration_names_sensor(small_scenario, tmp_path, capsys):
    src = tmp_path / "in"
    shutil.copytree(small_scenario.parent, src)
    doc = json.loads((src / "manifest.json").read_text())
    del doc["agents"][2]["sensors"][1]["calibration"]
    (src / "manifest.json").write_text(json.dumps(doc))
    assert main(["project", str(src / "manifest.json"), "--output", str(tmp_path / "r")]) == 2
    assert "cav2/camera" in capsys.readouterr().err


def _ledger_with_calibrations(pairs):
    cam = synthetic_camera(320, 240)
    intr = {k: getattr(cam, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    def flat(T):
        return T.rotation.reshape(-1).tolist() + T.translation.tolist()

    return {"config": RunConfig().to_document(), "records": [],
            "calibrations": [{"agent": f"a{i}", "sensor": "camera", "clean": flat(c), "noisy": flat(n),
                              "intrinsics": intr} for i, (c, n) in enumerate(pairs)]}


def test_stats_zero_noise_degenerate(small_scenario, tmp_path):
    T = RigidTransform(LIDAR_TO_CAMERA_R, [0, 0.3, -0.2])
    stats = ledger_stats(_ledger_with_calibrations([(T, T)]))
    assert stats["misalignment"][0]["mean"] == 0 and stats["violations"] == []
    cfg = RunConfig(seed=1)
    cfg.calibration = type(cfg.calibration)(0.0, 0.0)
    cfg.enabled = {"vehicle": {"lidar": [], "camera": ["calibration"]},
                   "infrastructure": {"lidar": [], "camera": ["calibration"]}}
    cfg.dump(tmp_path / "c.json")
    out = tmp_path / "o"
    assert main(["--config", str(tmp_path / "c.json"), "corrupt", str(small_scenario), "--output", str(out)]) == 0
    from v2xnoise.ledger import read_ledger

    stats = ledger_stats(read_ledger(out / LEDGER_NAME))
    for p in stats["params"]:
        assert p["min"] == p["max"] == 0.0 and sum(p["histogram"]) == p["count"]
    assert all(m["mean"] == 0 for m in stats["misalignment"])


def test_stats_yaw_sweep_monotone():
    T = RigidTransform(LIDAR_TO_CAMERA_R, [0, 0.3, -0.2])
    stats = ledger_stats(_ledger_with_calibrations([(T, yaw_perturbed(T, d)) for d in (0.1, 0.25, 0.5)]))
    means = [m["mean"] for m in stats["misalignment"]]
    assert means[0] < means[1] < means[2]


def test_stats_flags_out_of_bounds():
    doc = _ledger_with_calibrations([])
    doc["records"] = [{"agent": "a", "sensor": "s", "frame": "static", "noise_kind": "calibration",
                       "stream": None, "params": {"d_yaw": {"value": 0.7, "unit": "deg"}}}]
    assert ledger_stats(doc)["violations"] == ["calibration.d_yaw"]


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "v2xnoise.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for word in ("corrupt", "project", "depthvar", "verify", "stats", "--config", "--seed", "--workers",
                 "--output", "exit codes"):
        assert word in out.stdout
