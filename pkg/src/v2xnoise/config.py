"""Run configuration: which noise goes where, and with which parameters."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset_io import validate_document
from .errors import ParseError
from .noise import (
    PERSPECTIVE_LEVELS,
    CalibrationNoiseSpec,
    MotionDistortionSpec,
    PerspectiveDistortionSpec,
    SystematicErrorSpec,
    TimeSyncSpec,
    VibrationSpec,
)

NOISE_KINDS = ("calibration", "vibration", "perspective", "motion_distortion", "time_sync", "systematic")

#: Corruption recipe used for the V2XSet-Noise style dataset.
DEFAULT_ENABLED = {
    "vehicle": {
        "lidar": ["motion_distortion"],
        "camera": ["calibration", "time_sync"],
    },
    "infrastructure": {
        "lidar": ["vibration", "systematic"],
        "camera": ["calibration", "vibration", "perspective", "systematic", "time_sync"],
    },
}


def _empty_enabled():
    return {agent: {"lidar": [], "camera": []} for agent in DEFAULT_ENABLED}


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    enabled: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_ENABLED))
    calibration: CalibrationNoiseSpec = field(default_factory=CalibrationNoiseSpec)
    vibration: VibrationSpec = field(default_factory=VibrationSpec)
    perspective: PerspectiveDistortionSpec = field(default_factory=PerspectiveDistortionSpec)
    motion_distortion: MotionDistortionSpec = field(default_factory=MotionDistortionSpec)
    time_sync: TimeSyncSpec = field(default_factory=TimeSyncSpec)
    systematic: SystematicErrorSpec = field(default_factory=SystematicErrorSpec)

    @classmethod
    def disabled(cls, **kwargs) -> "RunConfig":
        return cls(enabled=_empty_enabled(), **kwargs)

    def kinds_for(self, agent_kind: str, sensor_kind: str) -> tuple:
        # canonical order keeps ledger layout independent of how the config lists them
        wanted = set(self.enabled.get(agent_kind, {}).get(sensor_kind, ()))
        return tuple(k for k in NOISE_KINDS if k in wanted)

    def to_document(self) -> dict:
        v = self.vibration
        return {
            "version": 1,
            "seed": self.seed,
            "workers": self.workers,
            "enabled": {a: {s: list(self.kinds_for(a, s)) for s in ("lidar", "camera")} for a in DEFAULT_ENABLED},
            "calibration": {"rot_range": self.calibration.rot_range, "trans_range": self.calibration.trans_range},
            "vibration": {
                "amplitude": v.amplitude,
                "frequency": v.frequency,
                "sigma_x": v.sigma_x,
                "sigma_y": v.sigma_y,
                "sigma_z": v.sigma_z,
                "image_amplitude": v.image_amplitude,
            },
            "perspective": {"level": self.perspective.level, "alpha": self.perspective.alpha},
            "motion_distortion": {"sectors": self.motion_distortion.sectors},
            "time_sync": {"max_delay": self.time_sync.max_delay, "policy": self.time_sync.policy},
            "systematic": {
                "rot_range": self.systematic.rot_range,
                "trans_range": self.systematic.trans_range,
                "image_shift": self.systematic.image_shift,
            },
        }

    @classmethod
    def from_document(cls, doc: dict, path=None) -> "RunConfig":
        validate_document(doc, "config", path)
        enabled = _empty_enabled()
        for agent_kind, by_sensor in doc.get("enabled", DEFAULT_ENABLED).items():
            for sensor_kind, kinds in by_sensor.items():
                enabled[agent_kind][sensor_kind] = list(kinds)
        persp = dict(doc.get("perspective", {}))
        level = persp.get("level", "full" if "alpha" not in persp else "custom")
        if level != "custom" and "alpha" in persp and persp["alpha"] != PERSPECTIVE_LEVELS[level]:
            raise ParseError(f"perspective level {level!r} binds alpha={PERSPECTIVE_LEVELS[level]}", path,
                             field="perspective.alpha")
        if level == "custom" and "alpha" not in persp:
            raise ParseError("custom perspective level needs alpha", path, field="perspective.alpha")
        alpha = persp.get("alpha", PERSPECTIVE_LEVELS.get(level))
        return cls(
            seed=doc.get("seed", 0),
            workers=doc.get("workers", 1),
            enabled=enabled,
            calibration=CalibrationNoiseSpec(**doc.get("calibration", {})),
            vibration=VibrationSpec(**doc.get("vibration", {})),
            perspective=PerspectiveDistortionSpec(alpha, level),
            motion_distortion=MotionDistortionSpec(**doc.get("motion_distortion", {})),
            time_sync=TimeSyncSpec(**doc.get("time_sync", {})),
            systematic=SystematicErrorSpec(**doc.get("systematic", {})),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, f"line {exc.lineno}") from None
        return cls.from_document(doc, path)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_document(), indent=2) + "\n", encoding="utf-8")
