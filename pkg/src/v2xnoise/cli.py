"""``v2xnoise`` command-line front end.

Exit codes: 0 success, 1 partial failure (some frames failed, verification
divergences, out-of-bound statistics), 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cfas import (
    densify_depth_max,
    depth_gradients,
    depth_to_uint16,
    misalignment_metric,
    probe_cloud,
    render_sparse_depth,
)
from .config import RunConfig
from .dataset_io import read_calibration, read_manifest, read_point_cloud, write_preview_png, write_raster
from .errors import EmptyOverlapError, InvalidArgumentError, ParseError, V2XNoiseError
from .geometry import CameraModel, RigidTransform
from .ledger import read_ledger, verify_ledger
from .pipeline import LEDGER_NAME, corrupt

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("v2xnoise")


# --- frame selection ---------------------------------------------------------------

def parse_frames(text: str, n_frames: int) -> list:
    """``"all"`` or a comma list of indices and inclusive ranges, e.g. ``0,3,5-9``."""
    if text.strip() == "all":
        return list(range(n_frames))
    picked = set()
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part:
                a, b = (int(x) for x in part.split("-", 1))
                if b < a:
                    raise ValueError
                picked.update(range(a, b + 1))
            else:
                picked.add(int(part))
        except ValueError:
            raise InvalidArgumentError(f"bad frame selector {part!r}") from None
    if any(k < 0 for k in picked):
        raise InvalidArgumentError("frame indices must be non-negative")
    return sorted(k for k in picked if k < n_frames)


# --- depth rasters ------------------------------------------------------------------

def _camera_pairs(manifest, agent_filter=None):
    """(agent, lidar sensor, camera sensor, calibration) for every camera."""
    for agent in manifest.agents:
        if agent_filter and agent.agent_id not in agent_filter:
            continue
        lidars = [s for s in agent.sensors if s.kind == "lidar"]
        for cam in (s for s in agent.sensors if s.kind == "camera"):
            name = f"{agent.agent_id}/{cam.sensor_id}"
            if cam.calibration is None:
                raise InvalidArgumentError(f"camera {name} has no calibration")
            calib = read_calibration(manifest.root / cam.calibration)
            if calib.intrinsics is None:
                raise InvalidArgumentError(f"calibration of camera {name} has no intrinsics")
            if calib.tag != "lidar_to_camera":
                raise InvalidArgumentError(f"calibration of camera {name} is not a lidar_to_camera extrinsic")
            lidar = next((s for s in lidars if s.sensor_id == calib.extrinsic.frame_from), None)
            if lidar is None and lidars:
                lidar = lidars[0]
            if lidar is None:
                raise InvalidArgumentError(f"agent {agent.agent_id} has no LiDAR to project into {name}")
            yield agent, lidar, cam, calib


def _frame_extrinsic(calib) -> RigidTransform:
    # clouds are read without a frame tag, so drop the tags to keep the transform applicable
    return calib.extrinsic.with_frames(None, None)


def emit_rasters(manifest, out, frames="all", window=7, variation=False, preview=False, agents=None) -> list:
    """Write sparse/dense (and optionally variation) rasters; return written paths."""
    out = Path(out)
    written = []
    for agent, lidar, cam, calib in _camera_pairs(manifest, agents):
        n = min(len(lidar.frames), len(cam.frames))
        T = _frame_extrinsic(calib)
        for k in parse_frames(frames, n):
            cloud = read_point_cloud(manifest.root / lidar.frames[k].path)
            sparse = render_sparse_depth(cloud, calib.intrinsics, T)
            dense = densify_depth_max(sparse, window)
            stem = out / agent.agent_id / cam.sensor_id / f"{k:06d}"
            if variation:
                items = [("depthvar", depth_gradients(dense))]
            else:
                items = [("sparse", sparse), ("dense", dense)]
            for tag, obj in items:
                path = stem.with_name(f"{stem.name}.{tag}.v2xr")
                write_raster(obj, path)
                written.append(path)
            if preview:
                for tag, obj in (("sparse", sparse), ("dense", dense)):
                    path = stem.with_name(f"{stem.name}.{tag}.png")
                    write_preview_png(depth_to_uint16(obj), path)
                    written.append(path)
    return written


# --- stats ------------------------------------------------------------------------

def _bounds(config: RunConfig):
    c, s, v, ts = config.calibration, config.systematic, config.vibration, config.time_sync
    ang = ("d_roll", "d_pitch", "d_yaw")
    tr = ("d_tx", "d_ty", "d_tz")
    b = {}
    b.update({("calibration", n): (-c.rot_range, c.rot_range) for n in ang})
    b.update({("calibration", n): (-c.trans_range, c.trans_range) for n in tr})
    b.update({("systematic", n): (-s.rot_range, s.rot_range) for n in ang})
    b.update({("systematic", n): (-s.trans_range, s.trans_range) for n in tr})
    b.update({("systematic", n): (-s.image_shift, s.image_shift) for n in ("u_frac", "v_frac")})
    b.update({("vibration", n): (-v.amplitude, v.amplitude) for n in ang})
    b.update({("vibration_phase", f"phase_{n}"): (0.0, 2 * np.pi) for n in ("roll", "pitch", "yaw", "u", "v")})
    b[("time_sync", "delay")] = (0.0, ts.max_delay)
    b[("perspective", "alpha")] = (config.perspective.alpha, config.perspective.alpha)
    return b


def ledger_stats(ledger: dict, bins: int = 10) -> dict:
    """Ranges, histograms, bound checks and calibration misalignment for a ledger."""
    config = RunConfig.from_document(ledger["config"])
    bounds = _bounds(config)
    values = {}
    for rec in ledger["records"]:
        for name, p in rec["params"].items():
            values.setdefault((rec["noise_kind"], name), []).append(p["value"])
    params, violations = [], []
    for (kind, name), vals in sorted(values.items()):
        a = np.asarray(vals, dtype=np.float64)
        lo, hi = float(a.min()), float(a.max())
        counts, edges = np.histogram(a, bins=bins, range=(lo, hi) if hi > lo else (lo - 0.5, hi + 0.5))
        entry = {"noise_kind": kind, "param": name, "count": int(a.size), "min": lo, "max": hi,
                 "mean": float(a.mean()), "histogram": counts.tolist(), "edges": edges.tolist()}
        bound = bounds.get((kind, name))
        if bound is not None:
            entry["bounds"] = list(bound)
            # phases live on the half-open [0, 2pi); everything else is closed
            upper_ok = hi < bound[1] if kind == "vibration_phase" else hi <= bound[1]
            entry["within_bounds"] = bool(lo >= bound[0] and upper_ok)
            if not entry["within_bounds"]:
                violations.append(f"{kind}.{name}")
        params.append(entry)
    mis = []
    for c in ledger.get("calibrations", []):
        if not c.get("intrinsics"):
            continue
        cam = CameraModel(**c["intrinsics"])
        clean = RigidTransform(np.reshape(c["clean"][:9], (3, 3)), c["clean"][9:])
        noisy = RigidTransform(np.reshape(c["noisy"][:9], (3, 3)), c["noisy"][9:])
        try:
            m = misalignment_metric(probe_cloud(cam, clean), cam, clean, noisy)
        except EmptyOverlapError:
            mis.append({"agent": c["agent"], "sensor": c["sensor"], "mean": None, "p95": None, "matched": 0})
            continue
        mis.append({"agent": c["agent"], "sensor": c["sensor"], "mean": m.mean, "p95": m.p95, "matched": m.matched})
    scored = [m["mean"] for m in mis if m["mean"] is not None]
    summary = None
    if scored:
        summary = {"count": len(scored), "mean": float(np.mean(scored)), "max": float(np.max(scored)),
                   "p95_mean": float(np.mean([m["p95"] for m in mis if m["p95"] is not None]))}
    return {"params": params, "violations": violations, "misalignment": mis, "misalignment_summary": summary}


def format_stats(stats: dict) -> str:
    lines = []
    for p in stats["params"]:
        flag = "" if p.get("within_bounds", True) else "  OUT OF BOUNDS"
        lines.append(f"{p['noise_kind']:<18}{p['param']:<12} n={p['count']:<6} "
                     f"min={p['min']:+.6g} max={p['max']:+.6g} mean={p['mean']:+.6g}{flag}")
        lines.append(" " * 30 + "hist " + " ".join(str(c) for c in p["histogram"]))
    for m in stats["misalignment"]:
        if m["mean"] is None:
            lines.append(f"misalignment {m['agent']}/{m['sensor']}: no overlap")
        else:
            lines.append(f"misalignment {m['agent']}/{m['sensor']}: mean={m['mean']:.4f}px "
                         f"p95={m['p95']:.4f}px n={m['matched']}")
    s = stats["misalignment_summary"]
    if s:
        lines.append(f"misalignment overall: mean={s['mean']:.4f}px max={s['max']:.4f}px over {s['count']} camera(s)")
    lines.append("bounds: ok" if not stats["violations"] else "bounds violated: " + ", ".join(stats["violations"]))
    return "\n".join(lines)


# --- commands -----------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    return config


def _require_output(args):
    if not args.output:
        raise InvalidArgumentError(f"{args.command} needs --output")
    return Path(args.output)


def cmd_corrupt(args) -> int:
    config = _load_config(args)
    report = corrupt(args.manifest, _require_output(args), config)
    n = len(report.ledger["records"])
    print(f"wrote {len(report.ledger['files'])} file(s), {n} ledger record(s) to {args.output}")
    for f in report.failures:
        print(f"FAILED {f['path']}: {f['error']}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_PARTIAL


def _cmd_rasters(args, variation) -> int:
    manifest = read_manifest(args.manifest)
    written = emit_rasters(manifest, _require_output(args), args.frames, args.window, variation, args.preview,
                           set(args.agent) if args.agent else None)
    print(f"wrote {len(written)} file(s) to {args.output}")
    return EXIT_OK


def cmd_project(args) -> int:
    return _cmd_rasters(args, False)


def cmd_depthvar(args) -> int:
    return _cmd_rasters(args, True)


def cmd_verify(args) -> int:
    root = Path(args.output_root)
    ledger = read_ledger(args.ledger or root / LEDGER_NAME)
    workers = args.workers or 1
    report = verify_ledger(ledger, root, seed=args.seed, workers=workers)
    for d in report.divergences:
        print(f"DIVERGENCE {json.dumps(d, sort_keys=True)}")
    print(f"checked {report.files_checked} file(s), {report.records_checked} record(s): "
          f"{'clean' if report.ok else f'{len(report.divergences)} divergence(s)'}")
    return EXIT_OK if report.ok else EXIT_PARTIAL


def cmd_stats(args) -> int:
    stats = ledger_stats(read_ledger(args.ledger), args.bins)
    text = json.dumps(stats, indent=1, sort_keys=True) if args.json else format_stats(stats)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK if not stats["violations"] else EXIT_PARTIAL


# --- parser -----------------------------------------------------------------------

def _add_globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON run configuration (see docs/formats.md)")
    p.add_argument("--seed", type=int, default=d, help="root seed; overrides the config / ledger seed")
    p.add_argument("--workers", type=int, default=d, help="worker processes for frame-parallel work")
    p.add_argument("--output", default=d, help="output directory (corrupt/project/depthvar) or file (stats)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="v2xnoise",
        description="Corrupt multi-agent LiDAR/camera scenarios with realistic sensor noise, "
                    "build projected depth rasters, and verify corruption ledgers.",
        epilog="exit codes: 0 success, 1 partial failure, 2 invalid input",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("corrupt", help="apply the configured noise to a scenario and write a ledger")
    p.add_argument("manifest", help="scenario manifest (JSON)")
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_corrupt)

    for name, func, what in (("project", cmd_project, "sparse and max-pooled depth rasters"),
                             ("depthvar", cmd_depthvar, "5-channel depth variation rasters")):
        p = sub.add_parser(name, help=f"project LiDAR into each camera and write {what}")
        p.add_argument("manifest", help="scenario manifest (JSON)")
        p.add_argument("--frames", default="all", help="'all' or e.g. '0,3,5-9' (default: all)")
        p.add_argument("--window", type=int, default=7, help="odd pooling window (default: 7)")
        p.add_argument("--agent", action="append", help="restrict to this agent id (repeatable)")
        p.add_argument("--preview", action="store_true", help="also write 16-bit PNG previews (depth*256)")
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="re-derive a run's parameters and digests from its ledger")
    p.add_argument("output_root", help="output root of a corrupt run")
    p.add_argument("--ledger", help="ledger path (default: OUTPUT_ROOT/ledger.json)")
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stats", help="summarise sampled parameters and calibration misalignment")
    p.add_argument("ledger", help="ledger.json of a corrupt run")
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.add_argument("--bins", type=int, default=10, help="histogram bins (default: 10)")
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers is not None and args.workers < 1:
            raise InvalidArgumentError("--workers must be >= 1")
        return args.func(args)
    except (ParseError, InvalidArgumentError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except V2XNoiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
