import json
import math

import numpy as np
import pytest

from v2xnoise.cfas import DepthMap, densify_depth_max, depth_gradients
from v2xnoise.dataset_io import (
    CalibrationRecord,
    file_digest,
    read_calibration,
    read_depth_variation,
    read_image,
    read_manifest,
    read_point_cloud,
    read_raster,
    tree_digest,
    write_calibration,
    write_image,
    write_manifest,
    write_point_cloud,
    write_raster,
)
from v2xnoise.errors import ParseError
from v2xnoise.geometry import CameraModel, PointCloud, RigidTransform, RotationRPY, rotation_from_rpy
from v2xnoise.noise import ImageBuffer


def cloud(n=50, seed=0, extras=True):
    rng = np.random.default_rng(seed)
    return PointCloud(
        rng.uniform(-80, 80, (n, 3)),
        rng.uniform(0, 1, n),
        rng.uniform(0, 2 * math.pi, n) if extras else None,
        rng.uniform(0, 0.1, n) if extras else None,
    )


# --- point clouds ------------------------------------------------------------------

def test_empty_cloud_round_trip(tmp_path):
    for enc in ("binary", "ascii"):
        p = tmp_path / f"e_{enc}.pcd"
        write_point_cloud(PointCloud(np.zeros((0, 3))), p, enc)
        assert b"POINTS 0" in p.read_bytes()
        assert len(read_point_cloud(p)) == 0


def test_binary_round_trip_bitwise(tmp_path):
    c = cloud(1000)
    p = tmp_path / "c.pcd"
    write_point_cloud(c, p)
    back = read_point_cloud(p)
    assert back.equals(c)


def test_large_binary_round_trip_digest(tmp_path):
    c = cloud(100_000, seed=1, extras=False)
    a, b = tmp_path / "a.pcd", tmp_path / "b.pcd"
    write_point_cloud(c, a)
    write_point_cloud(read_point_cloud(a), b)
    assert file_digest(a) == file_digest(b)


def test_ascii_vs_binary(tmp_path):
    c = cloud(300)
    write_point_cloud(c, tmp_path / "a.pcd", "ascii")
    write_point_cloud(c, tmp_path / "b.pcd", "binary")
    a, b = read_point_cloud(tmp_path / "a.pcd"), read_point_cloud(tmp_path / "b.pcd")
    assert np.max(np.abs(a.xyz - b.xyz)) <= 1e-6
    assert np.max(np.abs(a.azimuth - b.azimuth)) <= 1e-6


def test_write_deterministic(tmp_path):
    c = cloud(10)
    for enc in ("ascii", "binary"):
        write_point_cloud(c, tmp_path / "1.pcd", enc)
        write_point_cloud(c, tmp_path / "2.pcd", enc)
        assert file_digest(tmp_path / "1.pcd") == file_digest(tmp_path / "2.pcd")


def _pcd(fields="x y z intensity", size="4 4 4 4", typ="F F F F", points=1, data="ascii", body="1 2 3 0.5\n"):
    n = len(fields.split())
    return (f"VERSION 0.7\nFIELDS {fields}\nSIZE {size}\nTYPE {typ}\nCOUNT {' '.join(['1'] * n)}\n"
            f"WIDTH {points}\nHEIGHT 1\nPOINTS {points}\nDATA {data}\n{body}").encode()


def test_float32_file_accepted(tmp_path):
    p = tmp_path / "f.pcd"
    p.write_bytes(_pcd())
    c = read_point_cloud(p)
    assert c.xyz.tolist() == [[1, 2, 3]] and c.intensity.tolist() == [0.5]
    assert c.azimuth is None


@pytest.mark.parametrize("blob,field", [
    (_pcd(fields="x y z rgb"), "rgb"),
    (_pcd(fields="x y z", size="4 4 4", typ="F F F", body="1 2 3\n"), "intensity"),
    (_pcd(typ="F F F U"), "intensity"),
    (_pcd(data="binary_compressed"), "DATA"),
    (_pcd(points=2), None),
    (_pcd(body="1 2 nan 0\n"), "xyz"),
    (_pcd(body="1 2 x 0\n"), None),
    (b"VERSION 0.7\nFIELDS x y z intensity\n", None),
])
def test_malformed_pcd(tmp_path, blob, field):
    p = tmp_path / "bad.pcd"
    p.write_bytes(blob)
    with pytest.raises(ParseError) as exc:
        read_point_cloud(p)
    if field is not None:
        assert exc.value.field == field


def test_truncated_binary_reports_offset(tmp_path):
    p = tmp_path / "t.pcd"
    write_point_cloud(cloud(20), p)
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(ParseError) as exc:
        read_point_cloud(p)
    assert exc.value.location == f"byte {len(data) - 5}"


def test_nan_in_binary_reports_row_offset(tmp_path):
    p = tmp_path / "n.pcd"
    c = cloud(5, extras=False)
    write_point_cloud(c, p)
    raw = bytearray(p.read_bytes())
    start = len(raw) - 5 * 32
    raw[start + 2 * 32 + 8:start + 2 * 32 + 16] = np.array([np.nan]).tobytes()
    p.write_bytes(bytes(raw))
    with pytest.raises(ParseError) as exc:
        read_point_cloud(p)
    assert exc.value.location == f"byte {start + 64}"


# --- images ----------------------------------------------------------------------

def test_image_round_trips(tmp_path):
    black = ImageBuffer(np.zeros((1, 1, 3), np.uint8))
    write_image(black, tmp_path / "b.png")
    assert read_image(tmp_path / "b.png").equals(black)
    yy, xx = np.mgrid[0:37, 0:53]
    grad = ImageBuffer(np.stack([xx * 4, yy * 6, xx + yy], -1).astype(np.uint8))
    write_image(grad, tmp_path / "g.png")
    again = read_image(tmp_path / "g.png")
    assert again.equals(grad)
    write_image(again, tmp_path / "g2.png")
    assert file_digest(tmp_path / "g.png") == file_digest(tmp_path / "g2.png")


def test_truncated_image_is_parse_error(tmp_path):
    yy, xx = np.mgrid[0:40, 0:40]
    write_image(ImageBuffer(np.stack([xx, yy, xx * yy % 256], -1).astype(np.uint8)), tmp_path / "x.png")
    data = (tmp_path / "x.png").read_bytes()
    (tmp_path / "x.png").write_bytes(data[: len(data) // 2])
    with pytest.raises(ParseError):
        read_image(tmp_path / "x.png")


def test_non_rgb_rejected(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "g.png")
    Image.fromarray(np.zeros((4, 4, 4), np.uint8), "RGBA").save(tmp_path / "a.png")
    for name in ("g.png", "a.png"):
        with pytest.raises(ParseError):
            read_image(tmp_path / name)


# --- calibration ------------------------------------------------------------------

def _calib(tmp_path, text):
    p = tmp_path / "c.txt"
    p.write_text(text)
    return p


def test_identity_calibration(tmp_path):
    rec = read_calibration(_calib(tmp_path, "sensor_id: cam\nrotation: 1 0 0 0 1 0 0 0 1\ntranslation: 0 0 0\n"))
    assert rec.extrinsic.allclose(RigidTransform.identity(), 0) and rec.intrinsics is None


def test_rpy_calibration_matches_matrix(tmp_path):
    rec = read_calibration(_calib(tmp_path, "sensor_id: cam\nrpy_deg: 0 0 90\ntranslation: 1 2 3\n"))
    assert np.array_equal(rec.extrinsic.rotation, rotation_from_rpy(RotationRPY.from_degrees(0, 0, 90)))


def test_reflection_rejected(tmp_path):
    with pytest.raises(ParseError) as exc:
        read_calibration(_calib(tmp_path, "sensor_id: c\nrotation: 1 0 0 0 1 0 0 0 -1\ntranslation: 0 0 0\n"))
    assert exc.value.field == "rotation"


def test_non_orthonormal_needs_flag(tmp_path):
    p = _calib(tmp_path, "sensor_id: c\nrotation: 1.001 0 0 0 1 0 0 0 1\ntranslation: 0 0 0\n")
    with pytest.raises(ParseError):
        read_calibration(p)
    rec = read_calibration(p, reorthonormalize=True)
    assert np.allclose(rec.extrinsic.rotation, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("text,field", [
    ("rotation: 1 0 0 0 1 0 0 0 1\ntranslation: 0 0 0\n", "sensor_id"),
    ("sensor_id: c\nrotation: 1 0 0 0 1 0 0 0 1\n", "translation"),
    ("sensor_id: c\ntranslation: 0 0 0\n", "rotation"),
    ("sensor_id: c\nrotation: 1 0 0 0 1 0 0 0 1\ntranslation: 0 0\n", "translation"),
    ("sensor_id: c\nrpy_deg: 0 0 0\ntranslation: 0 0 0\nfocal: 3\n", "focal"),
    ("sensor_id: c\nrpy_deg: 0 0 0\ntranslation: 0 0 0\nfx: 10\n", "fy"),
    ("sensor_id: c\nrpy_deg: 0 0 0\ntranslation: 0 0 0\ntag: body\n", "tag"),
])
def test_calibration_errors_name_field(tmp_path, text, field):
    with pytest.raises(ParseError) as exc:
        read_calibration(_calib(tmp_path, text))
    assert exc.value.field == field


def test_calibration_round_trip(tmp_path):
    T = RigidTransform(rotation_from_rpy(RotationRPY(0.3, -1.2, 2.9)), [0.1, -2.5, 1e-7], "lidar", "camera")
    cam = CameraModel(812.5, 811.0, 640.25, 360.5, 1280, 720)
    rec = CalibrationRecord("camera", T, "lidar_to_camera", cam)
    write_calibration(rec, tmp_path / "c.txt")
    back = read_calibration(tmp_path / "c.txt")
    assert back.extrinsic.matrix.tobytes() == T.matrix.tobytes()
    assert (back.extrinsic.frame_from, back.extrinsic.frame_to) == ("lidar", "camera")
    assert back.intrinsics == cam and back.tag == "lidar_to_camera"


# --- manifests ---------------------------------------------------------------------

def test_manifest_round_trip(small_scenario, tmp_path):
    m = read_manifest(small_scenario)
    out = tmp_path / "manifest.json"
    write_manifest(m, out)
    again = read_manifest(out, check_files=False)
    assert again.to_document() == m.to_document()
    assert json.loads(out.read_text()) == json.loads(small_scenario.read_text())


def _write_doc(tmp_path, doc):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(doc))
    return p


def _doc(frames):
    return {"schema": "v2xnoise/manifest", "version": 1, "scenario_id": "s",
            "agents": [{"agent_id": "a", "kind": "vehicle",
                        "sensors": [{"sensor_id": "l", "kind": "lidar", "frames": frames}]}]}


def test_manifest_errors(tmp_path):
    (tmp_path / "f.pcd").write_bytes(b"")
    with pytest.raises(ParseError) as exc:
        read_manifest(_write_doc(tmp_path, _doc([{"timestamp": 1, "path": "f.pcd"},
                                                 {"timestamp": 1, "path": "f.pcd"}])))
    assert exc.value.field == "timestamp"
    with pytest.raises(ParseError) as exc:
        read_manifest(_write_doc(tmp_path, _doc([{"timestamp": 1, "path": "missing.pcd"}])))
    assert exc.value.field == "path"
    doc = _doc([])
    doc["agents"][0]["colour"] = "red"
    with pytest.raises(ParseError):
        read_manifest(_write_doc(tmp_path, doc))
    doc = _doc([])
    doc["agents"][0]["kind"] = "drone"
    with pytest.raises(ParseError):
        read_manifest(_write_doc(tmp_path, doc))
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ParseError):
        read_manifest(tmp_path / "bad.json")


# --- rasters ---------------------------------------------------------------------

def test_raster_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    valid = rng.random((13, 17)) < 0.3
    d = DepthMap(np.where(valid, rng.uniform(1, 50, valid.shape), 0.0), valid)
    g = depth_gradients(densify_depth_max(d, 3))
    write_raster(g, tmp_path / "g.v2xr")
    back = read_depth_variation(tmp_path / "g.v2xr")
    assert np.array_equal(back.valid, g.valid)
    assert np.array_equal(back.data, g.data.astype(np.float32).astype(np.float64))
    raw = (tmp_path / "g.v2xr").read_bytes()
    assert raw[:4] == b"V2XR" and int.from_bytes(raw[4:8], "little") == 17
    (tmp_path / "t.v2xr").write_bytes(raw[:-1])
    with pytest.raises(ParseError):
        read_raster(tmp_path / "t.v2xr")


def test_tree_digest_excludes(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "x").write_bytes(b"1")
    d1 = tree_digest(tmp_path)
    (tmp_path / "ledger.json").write_text("{}")
    assert tree_digest(tmp_path, exclude={"ledger.json"}) == d1 != tree_digest(tmp_path)
