"""Whole-scenario corruption runs.

A run is split into work units, one per output file: a ``static`` unit per
sensor (calibration file plus the parameters drawn once per sensor) and one
unit per frame. Every unit re-creates the random streams it needs from
``(seed, scenario, frame, sensor, noise_kind)``, so results do not depend on
scheduling or on the number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .dataset_io import (
    CalibrationRecord,
    ScenarioManifest,
    copy_file,
    file_digest,
    pcd_encoding,
    read_calibration,
    read_image,
    read_manifest,
    read_point_cloud,
    write_calibration,
    write_image,
    write_point_cloud,
)
from .errors import InvalidArgumentError, V2XNoiseError
from .geometry import RigidTransform, compose, invert, so3_log, transform_points
from .noise import (
    desynchronize,
    motion_distort,
    param,
    perspective_homography,
    perturb_calibration,
    sample_vibration_phases,
    shift_image,
    systematic_offset,
    translation_homography,
    vibration_image_shift,
    vibration_transform,
    warp_image,
)
from .rng import RandomStream

LEDGER_NAME = "ledger.json"
STATIC = "static"


@dataclass(frozen=True)
class SensorContext:
    """Everything a unit needs to know about its sensor, in picklable form."""

    scenario: str
    agent: str
    agent_kind: str
    sensor: str
    sensor_kind: str
    kinds: tuple
    timestamps: tuple
    paths: tuple
    poses: tuple  # sensor-to-world RigidTransform per frame, or None entries
    calibration: Optional[str]
    image_size: Optional[tuple]
    reference_times: Optional[tuple] = None

    @property
    def key(self) -> str:
        return f"{self.agent}/{self.sensor}"

    def stream(self, seed, frame, noise_kind) -> RandomStream:
        return RandomStream(seed, (self.scenario, str(frame), self.key, noise_kind))

    def stream_path(self, frame, noise_kind):
        return [self.scenario, str(frame), self.key, noise_kind]

    def record(self, frame, noise_kind, params, stream=True, **extra):
        rec = {
            "agent": self.agent,
            "agent_kind": self.agent_kind,
            "sensor": self.sensor,
            "sensor_kind": self.sensor_kind,
            "frame": frame,
            "noise_kind": noise_kind,
            "stream": self.stream_path(frame, noise_kind) if stream else None,
            "params": params,
        }
        rec.update(extra)
        return rec


@dataclass(frozen=True)
class Unit:
    ctx: SensorContext
    frame: object  # int frame index or STATIC


@dataclass
class UnitResult:
    records: list = field(default_factory=list)
    files: list = field(default_factory=list)
    calibrations: list = field(default_factory=list)
    failure: Optional[dict] = None


# --- planning -----------------------------------------------------------------------

def _reference_lidar(agent, calib: Optional[CalibrationRecord]):
    lidars = [s for s in agent.sensors if s.kind == "lidar"]
    if calib is not None and calib.extrinsic.frame_from is not None:
        for s in lidars:
            if s.sensor_id == calib.extrinsic.frame_from:
                return s
    return lidars[0] if lidars else None


def plan(manifest: ScenarioManifest, config: RunConfig) -> list:
    """Units for every sensor with enabled noise, in deterministic order."""
    units = []
    for agent, sensor in manifest.sensors():
        kinds = config.kinds_for(agent.kind, sensor.kind)
        if not kinds or not sensor.frames:
            continue
        calib = None
        if sensor.calibration is not None:
            calib = read_calibration(manifest.root / sensor.calibration)
        if "calibration" in kinds and calib is None:
            raise InvalidArgumentError(f"sensor {agent.agent_id}/{sensor.sensor_id} has no calibration file")
        image_size = None
        if sensor.kind == "camera":
            if calib is not None and calib.intrinsics is not None:
                image_size = (calib.intrinsics.width, calib.intrinsics.height)
            else:
                img = read_image(manifest.root / sensor.frames[0].path)
                image_size = (img.width, img.height)
        poses = tuple(f.pose for f in sensor.frames)
        if "motion_distortion" in kinds and len(poses) > 1 and any(p is None for p in poses):
            raise InvalidArgumentError(
                f"motion distortion on {agent.agent_id}/{sensor.sensor_id} needs a pose for every frame")
        timestamps = tuple(f.timestamp for f in sensor.frames)
        reference = None
        if "time_sync" in kinds:
            ref = _reference_lidar(agent, calib)
            ref_ts = [f.timestamp for f in ref.frames] if ref is not None else []
            # camera frames without a LiDAR counterpart keep their own clock
            reference = tuple(ref_ts[k] if k < len(ref_ts) else timestamps[k] for k in range(len(timestamps)))
            if any(b <= a for a, b in zip(reference, reference[1:])):
                reference = timestamps
        ctx = SensorContext(
            manifest.scenario_id, agent.agent_id, agent.kind, sensor.sensor_id, sensor.kind, kinds,
            timestamps, tuple(f.path for f in sensor.frames), poses, sensor.calibration, image_size, reference,
        )
        units.append(Unit(ctx, STATIC))
        frame_kinds = set(kinds) - {"calibration"}
        if frame_kinds:
            units.extend(Unit(ctx, k) for k in range(len(sensor.frames)))
    return units


# --- per-unit work --------------------------------------------------------------

def _vibration_spec(ctx, config, seed):
    phases, image_phases = sample_vibration_phases(ctx.stream(seed, STATIC, "vibration_phase"))
    return config.vibration.with_phases(phases, image_phases), phases, image_phases


def _time_sync(ctx, config, seed):
    return desynchronize(ctx.reference_times, ctx.timestamps, config.time_sync, ctx.stream(seed, STATIC, "time_sync"))


def _systematic(ctx, config, seed):
    return systematic_offset(config.systematic, ctx.stream(seed, STATIC, "systematic"),
                             ctx.image_size if ctx.sensor_kind == "camera" else None)


def _motion(ctx, k) -> RigidTransform:
    """Frame-k to frame-(k+1) sensor transform; the last frame reuses the previous step."""
    poses = ctx.poses
    if len(poses) < 2:
        return RigidTransform.identity()
    a, b = (k, k + 1) if k + 1 < len(poses) else (k - 1, k)
    return compose(invert(poses[b]), poses[a])


def _rel(ctx, k):
    return ctx.paths[k]


def _run_static(unit, config, seed, root, out, dry):
    ctx = unit.ctx
    res = UnitResult()
    if "calibration" in ctx.kinds:
        rng = ctx.stream(seed, STATIC, "calibration")
        if dry:
            _, params = perturb_calibration(RigidTransform.identity(), config.calibration, rng)
        else:
            rec = read_calibration(root / ctx.calibration)
            noisy, params = perturb_calibration(rec.extrinsic, config.calibration, rng)
            dst = out / ctx.calibration
            write_calibration(CalibrationRecord(rec.sensor_id, noisy, rec.tag, rec.intrinsics), dst)
            res.files.append(_file_entry(root, out, ctx.calibration, ctx.calibration))
            cam = rec.intrinsics
            res.calibrations.append({
                "agent": ctx.agent,
                "sensor": ctx.sensor,
                "clean": _flat(rec.extrinsic),
                "noisy": _flat(noisy),
                "intrinsics": None if cam is None else {k: getattr(cam, k) for k in
                                                        ("fx", "fy", "cx", "cy", "width", "height")},
            })
        res.records.append(ctx.record(STATIC, "calibration", params))
    if "vibration" in ctx.kinds:
        _, phases, image_phases = _vibration_spec(ctx, config, seed)
        params = {f"phase_{n}": param(p, "rad") for n, p in zip(("roll", "pitch", "yaw"), phases)}
        params.update({f"phase_{n}": param(p, "rad") for n, p in zip(("u", "v"), image_phases)})
        res.records.append(ctx.record(STATIC, "vibration_phase", params))
    if "systematic" in ctx.kinds:
        _, _, params = _systematic(ctx, config, seed)
        res.records.append(ctx.record(STATIC, "systematic", params))
    if "time_sync" in ctx.kinds:
        pairing, delay = _time_sync(ctx, config, seed)
        res.records.append(ctx.record(STATIC, "time_sync", {"delay": param(delay, "s")},
                                      pairing=[int(j) for j in pairing]))
    if "perspective" in ctx.kinds:
        res.records.append(ctx.record(STATIC, "perspective", {"alpha": param(config.perspective.alpha, "1")},
                                      stream=False))
    return res


def _flat(T: RigidTransform):
    return [float(v) for v in np.concatenate([T.rotation.reshape(-1), T.translation])]


def _file_entry(root, out, rel_out, rel_src):
    return {
        "path": rel_out,
        "source": rel_src,
        "input_sha256": file_digest(root / rel_out),
        "output_sha256": file_digest(out / rel_out),
    }


def _run_lidar_frame(unit, config, seed, root, out, dry):
    ctx, k = unit.ctx, unit.frame
    res = UnitResult()
    ops = []
    if "motion_distortion" in ctx.kinds:
        T = _motion(ctx, k)
        rv = so3_log(T.rotation)
        ops.append(lambda c, T=T: motion_distort(c, T, config.motion_distortion))
        res.records.append(ctx.record(k, "motion_distortion", {
            "t_x": param(T.translation[0], "m"), "t_y": param(T.translation[1], "m"),
            "t_z": param(T.translation[2], "m"), "rotvec_x": param(rv[0], "rad"),
            "rotvec_y": param(rv[1], "rad"), "rotvec_z": param(rv[2], "rad"),
            "sectors": param(config.motion_distortion.sectors, "1"),
        }, stream=False))
    if "systematic" in ctx.kinds:
        T_off, _, _ = _systematic(ctx, config, seed)
        ops.append(lambda c, T=T_off: transform_points(T, c))
    if "vibration" in ctx.kinds:
        spec, _, _ = _vibration_spec(ctx, config, seed)
        t = ctx.timestamps[k] - ctx.timestamps[0]
        pose = ctx.poses[k]
        world_to_sensor = RigidTransform.identity() if pose is None else invert(pose)
        noisy, params = vibration_transform(world_to_sensor, t, spec, ctx.stream(seed, k, "vibration"))
        delta = compose(noisy, invert(world_to_sensor))
        ops.append(lambda c, T=delta: transform_points(T, c))
        params["t"] = param(t, "s")
        res.records.append(ctx.record(k, "vibration", params))
    if not dry:
        rel = _rel(ctx, k)
        src = root / rel
        if ops:
            cloud = read_point_cloud(src)
            for op in ops:
                cloud = op(cloud)
            write_point_cloud(cloud, out / rel, pcd_encoding(src))
        res.files.append(_file_entry(root, out, rel, rel))
    return res


def _run_camera_frame(unit, config, seed, root, out, dry):
    ctx, k = unit.ctx, unit.frame
    res = UnitResult()
    j = k
    if "time_sync" in ctx.kinds:
        pairing, _ = _time_sync(ctx, config, seed)
        j = int(pairing[k])
    H_mat = None
    du = dv = 0.0
    if "perspective" in ctx.kinds:
        H_mat = perspective_homography(ctx.image_size[0], ctx.image_size[1], config.perspective.alpha)
    if "systematic" in ctx.kinds:
        _, (su, sv), _ = _systematic(ctx, config, seed)
        du, dv = du + su, dv + sv
    if "vibration" in ctx.kinds:
        spec, _, _ = _vibration_spec(ctx, config, seed)
        t = ctx.timestamps[j] - ctx.timestamps[0]
        size = _Size(*ctx.image_size)
        vu, vv = vibration_image_shift(t, size, spec)
        du, dv = du + vu, dv + vv
        res.records.append(ctx.record(k, "vibration", {
            "du": param(vu, "px"), "dv": param(vv, "px"), "t": param(t, "s"),
        }, stream=False))
    if not dry:
        rel, src_rel = _rel(ctx, k), _rel(ctx, j)
        src = root / src_rel
        if H_mat is None and du == 0.0 and dv == 0.0:
            copy_file(src, out / rel)
        else:
            img = read_image(src)
            if H_mat is not None:
                img = warp_image(img, translation_homography(du, dv) @ H_mat)
            else:
                img = shift_image(img, du, dv)
            write_image(img, out / rel)
        res.files.append(_file_entry(root, out, rel, src_rel))
    return res


@dataclass(frozen=True)
class _Size:
    width: int
    height: int


def run_unit(unit: Unit, config: RunConfig, seed: int, root, out, dry: bool = False) -> UnitResult:
    root = Path(root)
    out = None if out is None else Path(out)
    try:
        if unit.frame == STATIC:
            return _run_static(unit, config, seed, root, out, dry)
        if unit.ctx.sensor_kind == "lidar":
            return _run_lidar_frame(unit, config, seed, root, out, dry)
        return _run_camera_frame(unit, config, seed, root, out, dry)
    except (V2XNoiseError, OSError, ValueError) as exc:
        what = unit.ctx.calibration if unit.frame == STATIC else unit.ctx.paths[unit.frame]
        return UnitResult(failure={"sensor": unit.ctx.key, "frame": unit.frame, "path": what,
                                   "error": f"{type(exc).__name__}: {exc}"})


def _run_batch(args):
    units, config, seed, root, out, dry = args
    return [run_unit(u, config, seed, root, out, dry) for u in units]


def execute(units, config, seed, root, out, dry=False, workers=1) -> list:
    """Run units, serially or on a process pool; results come back in unit order."""
    if workers <= 1 or len(units) < 2:
        return [run_unit(u, config, seed, root, out, dry) for u in units]
    n_batches = min(len(units), workers * 4)
    batches = [units[i::n_batches] for i in range(n_batches)]
    results = [None] * len(units)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for b, batch_results in enumerate(
            pool.map(_run_batch, [(batch, config, seed, root, out, dry) for batch in batches])
        ):
            for i, r in enumerate(batch_results):
                results[b + i * n_batches] = r
    return results


# --- whole runs ------------------------------------------------------------------

def record_key(rec):
    frame = rec["frame"]
    return (rec["agent"], rec["sensor"], -1 if frame == STATIC else frame, rec["noise_kind"])


@dataclass
class RunReport:
    ledger: dict
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def _mirror_tree(root: Path, out: Path):
    for p in sorted(root.rglob("*")):
        if p.is_file():
            copy_file(p, out / p.relative_to(root))


def corrupt(manifest_path, output_root, config: RunConfig, seed: Optional[int] = None,
            workers: Optional[int] = None) -> RunReport:
    """Corrupt one scenario into ``output_root`` and write its ledger there."""
    from .ledger import write_ledger

    manifest_path = Path(manifest_path).resolve()
    manifest = read_manifest(manifest_path)
    root = manifest.root
    out = Path(output_root).resolve()
    if out == root or root in out.parents:
        raise InvalidArgumentError("output root must not be inside the input tree")
    if out.exists() and any(out.iterdir()):
        raise InvalidArgumentError(f"output root {out} is not empty")
    seed = config.seed if seed is None else int(seed)
    workers = config.workers if workers is None else int(workers)
    units = plan(manifest, config)
    out.mkdir(parents=True, exist_ok=True)
    _mirror_tree(root, out)
    results = execute(units, config, seed, root, out, workers=workers)

    records, files, calibrations, failures = [], {}, [], []
    for r in results:
        records.extend(r.records)
        calibrations.extend(r.calibrations)
        for f in r.files:
            files[f["path"]] = f
        if r.failure:
            failures.append(r.failure)
    for rel, digest in _untouched(root, out, files):
        files[rel] = {"path": rel, "source": rel, "input_sha256": digest, "output_sha256": digest}
    ledger = {
        "schema": "v2xnoise/ledger",
        "version": 1,
        "tool_version": __version__,
        "root_seed": seed,
        "scenario_id": manifest.scenario_id,
        "manifest": manifest_path.relative_to(root).as_posix(),
        # worker count is scheduling only; keeping it out makes ledgers identical across pools
        "config": {**{k: v for k, v in config.to_document().items() if k != "workers"}, "seed": seed},
        "records": sorted(records, key=record_key),
        "files": [files[k] for k in sorted(files)],
        "calibrations": sorted(calibrations, key=lambda c: (c["agent"], c["sensor"])),
        "failures": sorted(failures, key=lambda f: (f["sensor"], str(f["frame"]))),
    }
    write_ledger(ledger, out / LEDGER_NAME)
    return RunReport(ledger, failures)


def _untouched(root, out, seen):
    for p in sorted(root.rglob("*")):
        if p.is_file():
            rel = p.relative_to(root).as_posix()
            if rel not in seen and rel != LEDGER_NAME:
                yield rel, file_digest(p)


def rederive_records(manifest: ScenarioManifest, config: RunConfig, seed: int, workers: int = 1) -> list:
    """Sampled parameters a run with this seed and config would record, without touching payloads."""
    units = plan(manifest, config)
    records = []
    for r in execute(units, config, seed, manifest.root, None, dry=True, workers=workers):
        if r.failure:
            raise InvalidArgumentError(f"cannot re-derive {r.failure['sensor']}: {r.failure['error']}")
        records.extend(r.records)
    return sorted(records, key=record_key)


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))

