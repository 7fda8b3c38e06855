"""Small synthetic scenarios for demos, tests and benchmarks."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dataset_io import CalibrationRecord, ScenarioManifest, AgentEntry, SensorEntry, FrameEntry
from .dataset_io import write_calibration, write_image, write_manifest, write_point_cloud
from .geometry import CameraModel, PointCloud, RigidTransform, RotationRPY, rotation_from_rpy
from .noise import ImageBuffer

#: LiDAR (x forward, y left, z up) to camera (x right, y down, z forward).
LIDAR_TO_CAMERA_R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def synthetic_camera(width=64, height=48) -> CameraModel:
    return CameraModel(0.8 * width, 0.8 * width, width / 2.0, height / 2.0, width, height)


def synthetic_cloud(rng, n_points=600, frame=None) -> PointCloud:
    """Ground ring plus a few upright boxes around the sensor."""
    n_ground = n_points // 2
    r = rng.uniform(3.0, 30.0, n_ground)
    a = rng.uniform(-math.pi, math.pi, n_ground)
    ground = np.stack([r * np.cos(a), r * np.sin(a), np.full(n_ground, -1.7)], axis=1)
    n_obj = n_points - n_ground
    centres = np.array([[8.0, 1.0], [15.0, -3.0], [-6.0, 4.0], [4.0, -6.0]])
    pick = rng.integers(0, len(centres), n_obj)
    obj = np.stack([
        centres[pick, 0] + rng.uniform(-1.0, 1.0, n_obj),
        centres[pick, 1] + rng.uniform(-1.0, 1.0, n_obj),
        rng.uniform(-1.7, 0.3, n_obj),
    ], axis=1)
    xyz = np.concatenate([ground, obj])
    return PointCloud(xyz, rng.uniform(0.0, 1.0, len(xyz)), frame=frame)


def synthetic_image(rng, width, height) -> ImageBuffer:
    yy, xx = np.mgrid[0:height, 0:width]
    base = np.stack([xx * 255 // max(width - 1, 1), yy * 255 // max(height - 1, 1), (xx + yy) % 256], axis=-1)
    noise = rng.integers(0, 32, (height, width, 3))
    return ImageBuffer(((base + noise) % 256).astype(np.uint8))


def make_scenario(root, n_frames=100, n_agents=3, width=64, height=48, n_points=600, seed=0,
                  scenario_id="synthetic") -> Path:
    """Write a scenario tree under ``root`` and return the manifest path.

    Agent 0 is infrastructure (static pose); the others are vehicles driving
    at different speeds. Each agent has one LiDAR and one camera; cameras
    fire a few milliseconds after the LiDAR.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    cam = synthetic_camera(width, height)
    agents = []
    for ai in range(n_agents):
        kind = "infrastructure" if ai == 0 else "vehicle"
        agent_id = f"rsu{ai}" if kind == "infrastructure" else f"cav{ai}"
        speed = 0.0 if kind == "infrastructure" else 0.8 + 0.4 * ai
        lidar_frames, cam_frames = [], []
        for k in range(n_frames):
            t = 0.1 * k
            pose = RigidTransform(rotation_from_rpy(RotationRPY(0.0, 0.0, 0.01 * k * (ai % 2))),
                                  [speed * t, 2.0 * ai, 1.8 + (3.0 if ai == 0 else 0.0)])
            lp = f"{agent_id}/lidar/{k:06d}.pcd"
            cp = f"{agent_id}/camera/{k:06d}.png"
            write_point_cloud(synthetic_cloud(rng, n_points), root / lp, "binary" if k % 2 == 0 else "ascii")
            write_image(synthetic_image(rng, width, height), root / cp)
            lidar_frames.append(FrameEntry(k, round(t, 6), lp, pose))
            cam_frames.append(FrameEntry(k, round(t + 0.004, 6), cp))
        calib_path = f"{agent_id}/calib/camera.txt"
        T = RigidTransform(LIDAR_TO_CAMERA_R, [0.0, 0.3, -0.2], "lidar", "camera")
        write_calibration(CalibrationRecord("camera", T, "lidar_to_camera", cam), root / calib_path)
        agents.append(AgentEntry(agent_id, kind, (
            SensorEntry("lidar", "lidar", None, tuple(lidar_frames)),
            SensorEntry("camera", "camera", calib_path, tuple(cam_frames)),
        )))
    manifest_path = root / "manifest.json"
    write_manifest(ScenarioManifest(scenario_id, tuple(agents), root), manifest_path)
    return manifest_path
