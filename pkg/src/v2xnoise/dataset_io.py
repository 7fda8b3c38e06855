"""Readers and writers for everything on disk.

Formats
-------
Point clouds
    PCD v0.7 with fields ``x y z intensity`` and optionally ``azimuth`` and
    ``timestamp``, each a little-endian float (``F 4`` or ``F 8``), ``DATA``
    ``ascii`` or ``binary``. Written clouds always use ``F 8``.
Images
    8-bit RGB PNG.
Calibration
    ``key: value`` text, one key per line, ``#`` comments. See
    :func:`read_calibration`.
Manifest
    JSON document validated against ``schemas/manifest.schema.json``.
Rasters
    ``V2XR`` magic, then little-endian uint32 width, height and channel
    count, then ``C*H*W`` float32 values (channel-major, row-major), then the
    validity masks as ``C*H*W`` bits packed little-endian-bit-first.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import shutil
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
from PIL import Image

from .cfas import CHANNELS, DepthMap, DepthVariationMap
from .errors import InvalidArgumentError, ParseError
from .geometry import (
    CameraModel,
    PointCloud,
    RigidTransform,
    RotationRPY,
    check_rotation,
    orthonormalize,
    rotation_error,
    rotation_from_rpy,
)
from .noise import ImageBuffer

PCD_REQUIRED = ("x", "y", "z", "intensity")
PCD_OPTIONAL = ("azimuth", "timestamp")
RASTER_MAGIC = b"V2XR"
ROTATION_LOAD_TOL = 1e-6


# --- digests -----------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digests(root, exclude=()) -> dict:
    """``{relative posix path: sha256}`` for every file under ``root``."""
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            rel = p.relative_to(root).as_posix()
            if rel not in exclude:
                out[rel] = file_digest(p)
    return out


def tree_digest(root, exclude=()) -> str:
    h = hashlib.sha256()
    for rel, digest in tree_digests(root, exclude).items():
        h.update(f"{rel}\0{digest}\n".encode())
    return h.hexdigest()


# --- point clouds ------------------------------------------------------------------

@dataclass
class _PcdHeader:
    fields: list
    sizes: list
    types: list
    points: int
    encoding: str
    data_offset: int


def _parse_pcd_header(buf: bytes, path) -> _PcdHeader:
    entries = {}
    offset = 0
    lineno = 0
    while True:
        end = buf.find(b"\n", offset)
        if end < 0:
            raise ParseError("header ends before DATA line", path, f"byte {offset}")
        raw = buf[offset:end]
        lineno += 1
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ASCII header line", path, f"byte {offset}") from None
        line_offset, offset = offset, end + 1
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        entries[key] = (rest.split(), line_offset)
        if key == "DATA":
            break

    def get(key):
        if key not in entries:
            raise ParseError("missing header entry", path, field=key)
        return entries[key]

    fields, _ = get("FIELDS")
    n = len(fields)
    sizes_raw, sizes_at = get("SIZE")
    types, types_at = get("TYPE")
    count_raw, count_at = entries.get("COUNT", (["1"] * n, 0))
    width_raw, width_at = get("WIDTH")
    height_raw, _ = entries.get("HEIGHT", (["1"], 0))
    points_raw, points_at = entries.get("POINTS", (None, 0))
    data_raw, data_at = get("DATA")
    if len(sizes_raw) != n or len(types) != n or len(count_raw) != n:
        raise ParseError("FIELDS/SIZE/TYPE/COUNT lengths differ", path, f"byte {sizes_at}")
    try:
        sizes = [int(s) for s in sizes_raw]
        counts = [int(c) for c in count_raw]
        width, height = int(width_raw[0]), int(height_raw[0])
        points = width * height if points_raw is None else int(points_raw[0])
    except (ValueError, IndexError):
        raise ParseError("non-integer header value", path, f"byte {width_at}") from None
    if points != width * height or points < 0:
        raise ParseError("POINTS does not equal WIDTH*HEIGHT", path, f"byte {points_at}", field="POINTS")
    for name, size, typ, count in zip(fields, sizes, types, counts):
        if name not in PCD_REQUIRED + PCD_OPTIONAL:
            raise ParseError("unsupported field", path, f"byte {types_at}", field=name)
        if typ != "F" or size not in (4, 8) or count != 1:
            raise ParseError(f"unsupported layout TYPE {typ} SIZE {size} COUNT {count}", path,
                             f"byte {types_at}", field=name)
    if len(set(fields)) != n:
        raise ParseError("duplicate field", path, f"byte {types_at}", field="FIELDS")
    for name in PCD_REQUIRED:
        if name not in fields:
            raise ParseError("required field missing", path, field=name)
    encoding = data_raw[0] if data_raw else ""
    if encoding not in ("ascii", "binary"):
        raise ParseError(f"unsupported DATA encoding {encoding!r}", path, f"byte {data_at}", field="DATA")
    return _PcdHeader(fields, sizes, types, points, encoding, offset)


def pcd_encoding(path) -> str:
    with open(path, "rb") as f:
        head = f.read(4096)
    return _parse_pcd_header(head if b"DATA" in head else Path(path).read_bytes(), path).encoding


def read_point_cloud(path, frame: Optional[str] = None) -> PointCloud:
    buf = Path(path).read_bytes()
    hdr = _parse_pcd_header(buf, path)
    dtype = np.dtype([(name, f"<f{size}") for name, size in zip(hdr.fields, hdr.sizes)])
    if hdr.encoding == "binary":
        need = hdr.points * dtype.itemsize
        have = len(buf) - hdr.data_offset
        if have < need:
            raise ParseError("truncated binary payload", path, f"byte {len(buf)}")
        if have > need:
            raise ParseError("trailing bytes after binary payload", path, f"byte {hdr.data_offset + need}")
        rec = np.frombuffer(buf, dtype=dtype, count=hdr.points, offset=hdr.data_offset)
        cols = {name: rec[name].astype(np.float64) for name in hdr.fields}

        def row_offset(i):
            return hdr.data_offset + i * dtype.itemsize
    else:
        rows, starts = [], []
        offset = hdr.data_offset
        for raw in buf[hdr.data_offset:].split(b"\n"):
            start, offset = offset, offset + len(raw) + 1
            if not raw.strip():
                continue
            parts = raw.split()
            if len(parts) != len(hdr.fields):
                raise ParseError(f"expected {len(hdr.fields)} values", path, f"byte {start}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError("malformed number", path, f"byte {start}") from None
            starts.append(start)
        if len(rows) != hdr.points:
            raise ParseError(f"expected {hdr.points} rows, found {len(rows)}", path, f"byte {len(buf)}")
        arr = np.array(rows, dtype=np.float64).reshape(hdr.points, len(hdr.fields))
        # values pass through the declared storage precision
        cols = {name: arr[:, k].astype(f"<f{size}").astype(np.float64)
                for k, (name, size) in enumerate(zip(hdr.fields, hdr.sizes))}

        def row_offset(i):
            return starts[i]

    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1) if hdr.points else np.zeros((0, 3))
    bad = np.flatnonzero(~np.all(np.isfinite(xyz), axis=1))
    if bad.size:
        raise ParseError("non-finite coordinate", path, f"byte {row_offset(int(bad[0]))}", field="xyz")
    return PointCloud(xyz, cols["intensity"], cols.get("azimuth"), cols.get("timestamp"), frame)


def write_point_cloud(cloud: PointCloud, path, encoding: str = "binary") -> None:
    if encoding not in ("ascii", "binary"):
        raise InvalidArgumentError("encoding must be 'ascii' or 'binary'")
    names = list(PCD_REQUIRED)
    cols = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2], cloud.intensity]
    for name in PCD_OPTIONAL:
        col = getattr(cloud, name)
        if col is not None:
            names.append(name)
            cols.append(col)
    n = len(cloud)
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        f"FIELDS {' '.join(names)}\n"
        f"SIZE {' '.join('8' for _ in names)}\n"
        f"TYPE {' '.join('F' for _ in names)}\n"
        f"COUNT {' '.join('1' for _ in names)}\n"
        f"WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA {encoding}\n"
    ).encode("ascii")
    if encoding == "binary":
        rec = np.empty(n, dtype=np.dtype([(name, "<f8") for name in names]))
        for name, col in zip(names, cols):
            rec[name] = col
        payload = rec.tobytes()
    else:
        table = np.column_stack(cols) if n else np.zeros((0, len(names)))
        payload = "".join(" ".join(f"{v:.6f}" for v in row) + "\n" for row in table).encode("ascii")
    _write_bytes(path, header + payload)


def _write_bytes(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# --- images ----------------------------------------------------------------------------

def read_image(path) -> ImageBuffer:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode != "RGB":
                raise ParseError(f"unsupported image mode {mode!r}; need 8-bit RGB", path)
            data = np.asarray(im, dtype=np.uint8).copy()
    except ParseError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ParseError(f"cannot decode image: {exc}", path) from None
    return ImageBuffer(data)


def encode_png(img: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img.data), mode="RGB").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def write_image(img: ImageBuffer, path) -> None:
    _write_bytes(path, encode_png(img))


def write_preview_png(raster16: np.ndarray, path) -> None:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(raster16, dtype=np.uint16)).save(buf, format="PNG")
    _write_bytes(path, buf.getvalue())


# --- calibration -----------------------------------------------------------------------

EXTRINSIC_TAGS = ("lidar_to_camera", "sensor_to_body")
_CAMERA_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


@dataclass(frozen=True)
class CalibrationRecord:
    sensor_id: str
    extrinsic: RigidTransform
    tag: str = "lidar_to_camera"
    intrinsics: Optional[CameraModel] = None


def _parse_keyvalue(text: str, path):
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        key = key.strip()
        if not sep or not key:
            raise ParseError("expected 'key: value'", path, f"line {lineno}")
        if key in out:
            raise ParseError("duplicate key", path, f"line {lineno}", field=key)
        out[key] = (value.strip(), lineno)
    return out


def _floats(kv, key, n, path):
    if key not in kv:
        raise ParseError("missing field", path, field=key)
    raw, lineno = kv[key]
    try:
        vals = [float(x) for x in raw.split()]
    except ValueError:
        raise ParseError("malformed number", path, f"line {lineno}", field=key) from None
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise ParseError(f"expected {n} finite numbers", path, f"line {lineno}", field=key)
    return vals


def read_calibration(path, reorthonormalize: bool = False) -> CalibrationRecord:
    """Parse a calibration file.

    Keys: ``sensor_id``, ``tag`` (``lidar_to_camera`` or ``sensor_to_body``),
    optional ``frame_from``/``frame_to``, ``translation`` (3 numbers, metres)
    and exactly one of ``rotation`` (9 numbers, row-major) or ``rpy_deg``
    (roll pitch yaw in degrees). Cameras add ``fx fy cx cy width height``.

    Rotations off by more than 1e-6 are rejected unless ``reorthonormalize``;
    reflections are always rejected. Smaller deviations (printing round-off)
    are projected back onto SO(3).
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ParseError("calibration file is not UTF-8 text", path) from None
    kv = _parse_keyvalue(text, path)
    known = {"version", "sensor_id", "tag", "frame_from", "frame_to", "rotation", "rpy_deg", "translation",
             *_CAMERA_KEYS}
    for key, (_, lineno) in kv.items():
        if key not in known:
            raise ParseError("unknown key", path, f"line {lineno}", field=key)
    if "version" in kv and kv["version"][0] != "1":
        raise ParseError("unsupported version", path, f"line {kv['version'][1]}", field="version")
    if "sensor_id" not in kv:
        raise ParseError("missing field", path, field="sensor_id")
    tag = kv.get("tag", ("lidar_to_camera", 0))[0]
    if tag not in EXTRINSIC_TAGS:
        raise ParseError(f"tag must be one of {EXTRINSIC_TAGS}", path, f"line {kv['tag'][1]}", field="tag")
    if ("rotation" in kv) == ("rpy_deg" in kv):
        raise ParseError("give exactly one of rotation / rpy_deg", path, field="rotation")
    if "rotation" in kv:
        R = np.array(_floats(kv, "rotation", 9, path)).reshape(3, 3)
        err = rotation_error(R)
        where = f"line {kv['rotation'][1]}"
        if np.linalg.det(R) <= 0:
            raise ParseError("rotation is not proper (det <= 0)", path, where, field="rotation")
        if err > ROTATION_LOAD_TOL and not reorthonormalize:
            raise ParseError(f"rotation not orthonormal (error {err:.3g})", path, where, field="rotation")
        if err > 1e-12:
            R = orthonormalize(R)
    else:
        R = rotation_from_rpy(RotationRPY.from_degrees(*_floats(kv, "rpy_deg", 3, path)))
    t = _floats(kv, "translation", 3, path)
    frame_from = kv.get("frame_from", (None, 0))[0]
    frame_to = kv.get("frame_to", (None, 0))[0]
    extrinsic = RigidTransform(R, t, frame_from, frame_to)
    intrinsics = None
    present = [k for k in _CAMERA_KEYS if k in kv]
    if present:
        missing = [k for k in _CAMERA_KEYS if k not in kv]
        if missing:
            raise ParseError("incomplete intrinsics", path, field=missing[0])
        vals = {k: _floats(kv, k, 1, path)[0] for k in _CAMERA_KEYS}
        try:
            intrinsics = CameraModel(**vals)
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), path, field="intrinsics") from None
    return CalibrationRecord(kv["sensor_id"][0], extrinsic, tag, intrinsics)


def format_calibration(rec: CalibrationRecord) -> str:
    T = rec.extrinsic
    lines = ["# v2xnoise calibration", "version: 1", f"sensor_id: {rec.sensor_id}", f"tag: {rec.tag}"]
    if T.frame_from is not None:
        lines.append(f"frame_from: {T.frame_from}")
    if T.frame_to is not None:
        lines.append(f"frame_to: {T.frame_to}")
    lines.append("rotation: " + " ".join(repr(float(v)) for v in T.rotation.reshape(-1)))
    lines.append("translation: " + " ".join(repr(float(v)) for v in T.translation))
    if rec.intrinsics is not None:
        cam = rec.intrinsics
        for key in _CAMERA_KEYS:
            value = getattr(cam, key)
            lines.append(f"{key}: {value if isinstance(value, int) else repr(float(value))}")
    return "\n".join(lines) + "\n"


def write_calibration(rec: CalibrationRecord, path) -> None:
    _write_bytes(path, format_calibration(rec).encode("utf-8"))


# --- manifests ----------------------------------------------------------------------------

def load_schema(name: str) -> dict:
    return json.loads(resources.files("v2xnoise").joinpath("schemas", f"{name}.schema.json").read_text())


def validate_document(doc, schema_name: str, path=None) -> None:
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(exc.message, path, location=where) from None


@dataclass(frozen=True)
class FrameEntry:
    index: int
    timestamp: float
    path: str
    pose: Optional[RigidTransform] = None


@dataclass(frozen=True)
class SensorEntry:
    sensor_id: str
    kind: str
    calibration: Optional[str]
    frames: tuple


@dataclass(frozen=True)
class AgentEntry:
    agent_id: str
    kind: str
    sensors: tuple


@dataclass(frozen=True)
class ScenarioManifest:
    scenario_id: str
    agents: tuple
    root: Path = field(default=Path("."), compare=False)
    source: Optional[Path] = field(default=None, compare=False)

    def sensors(self):
        for agent in self.agents:
            for sensor in agent.sensors:
                yield agent, sensor

    def to_document(self) -> dict:
        def pose_doc(T):
            return {"rotation": T.rotation.reshape(-1).tolist(), "translation": T.translation.tolist()}

        return {
            "schema": "v2xnoise/manifest",
            "version": 1,
            "scenario_id": self.scenario_id,
            "agents": [
                {
                    "agent_id": a.agent_id,
                    "kind": a.kind,
                    "sensors": [
                        {
                            "sensor_id": s.sensor_id,
                            "kind": s.kind,
                            **({"calibration": s.calibration} if s.calibration else {}),
                            "frames": [
                                {"timestamp": f.timestamp, "path": f.path,
                                 **({"pose": pose_doc(f.pose)} if f.pose is not None else {})}
                                for f in s.frames
                            ],
                        }
                        for s in a.sensors
                    ],
                }
                for a in self.agents
            ],
        }


def _pose(doc, path, where):
    try:
        if "rotation" in doc:
            R = np.array(doc["rotation"], dtype=np.float64).reshape(3, 3)
            if rotation_error(R) > ROTATION_LOAD_TOL or np.linalg.det(R) <= 0:
                raise ParseError("pose rotation is not a proper rotation", path, where, field="rotation")
            if rotation_error(R) > 1e-12:
                R = orthonormalize(R)
        else:
            R = rotation_from_rpy(RotationRPY.from_degrees(*doc["rpy_deg"]))
        return RigidTransform(R, doc["translation"])
    except InvalidArgumentError as exc:
        raise ParseError(str(exc), path, where, field="pose") from None


def parse_manifest(doc: dict, root, source=None, check_files: bool = True) -> ScenarioManifest:
    validate_document(doc, "manifest", source)
    root = Path(root)
    agents = []
    seen_agents = set()
    for ai, a in enumerate(doc["agents"]):
        if a["agent_id"] in seen_agents:
            raise ParseError("duplicate agent_id", source, f"agents/{ai}", field="agent_id")
        seen_agents.add(a["agent_id"])
        sensors = []
        seen = set()
        for si, s in enumerate(a["sensors"]):
            where = f"agents/{ai}/sensors/{si}"
            if s["sensor_id"] in seen:
                raise ParseError("duplicate sensor_id", source, where, field="sensor_id")
            seen.add(s["sensor_id"])
            frames = []
            prev = -math.inf
            for fi, f in enumerate(s["frames"]):
                fwhere = f"{where}/frames/{fi}"
                if not f["timestamp"] > prev:
                    raise ParseError("timestamps must be strictly increasing", source, fwhere, field="timestamp")
                prev = f["timestamp"]
                if check_files and not (root / f["path"]).is_file():
                    raise ParseError(f"missing file {f['path']}", source, fwhere, field="path")
                pose = _pose(f["pose"], source, fwhere) if "pose" in f else None
                frames.append(FrameEntry(fi, float(f["timestamp"]), f["path"], pose))
            calib = s.get("calibration")
            if calib is not None and check_files and not (root / calib).is_file():
                raise ParseError(f"missing file {calib}", source, where, field="calibration")
            sensors.append(SensorEntry(s["sensor_id"], s["kind"], calib, tuple(frames)))
        agents.append(AgentEntry(a["agent_id"], a["kind"], tuple(sensors)))
    return ScenarioManifest(doc["scenario_id"], tuple(agents), root, source)


def read_manifest(path, check_files: bool = True) -> ScenarioManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, f"line {exc.lineno}") from None
    return parse_manifest(doc, path.parent, path, check_files)


def write_manifest(manifest: ScenarioManifest, path) -> None:
    _write_bytes(path, (json.dumps(manifest.to_document(), indent=2) + "\n").encode("utf-8"))


# --- rasters ----------------------------------------------------------------------------

def encode_raster(data: np.ndarray, valid: np.ndarray) -> bytes:
    data = np.asarray(data)
    if data.ndim == 2:
        data, valid = data[None], np.asarray(valid)[None]
    C, H, W = data.shape
    head = RASTER_MAGIC + struct.pack("<III", W, H, C)
    body = np.ascontiguousarray(data, dtype="<f4").tobytes()
    bits = np.packbits(np.asarray(valid, dtype=bool).reshape(-1), bitorder="little").tobytes()
    return head + body + bits


def write_raster(obj, path) -> None:
    """Write a DepthMap or DepthVariationMap."""
    if isinstance(obj, DepthVariationMap):
        _write_bytes(path, encode_raster(obj.data, obj.valid))
    elif isinstance(obj, DepthMap):
        _write_bytes(path, encode_raster(obj.depth, obj.valid))
    else:
        raise InvalidArgumentError(f"cannot serialise {type(obj).__name__}")


def read_raster(path):
    """Return ``(data (C, H, W) float32, valid (C, H, W) bool)``."""
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != RASTER_MAGIC:
        raise ParseError("bad raster magic", path, "byte 0")
    W, H, C = struct.unpack("<III", buf[4:16])
    n = C * H * W
    nbits = (n + 7) // 8
    if len(buf) != 16 + 4 * n + nbits:
        raise ParseError(f"raster payload is {len(buf) - 16} bytes, expected {4 * n + nbits}", path, "byte 16")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=16).reshape(C, H, W)
    valid = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=16 + 4 * n), count=n, bitorder="little")
    return data, valid.astype(bool).reshape(C, H, W)


def read_depth_variation(path) -> DepthVariationMap:
    data, valid = read_raster(path)
    if data.shape[0] != len(CHANNELS):
        raise ParseError(f"expected {len(CHANNELS)} channels, got {data.shape[0]}", path, "byte 12")
    return DepthVariationMap(data.astype(np.float64), valid)


def copy_file(src, dst) -> None:
    dst = Path(dst)
    dst.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(src, dst)
