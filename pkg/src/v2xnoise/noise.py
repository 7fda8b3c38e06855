"""The six sensor-noise generators.

Angles in the ``*Spec`` dataclasses are degrees; they are converted to radians where
they enter the rotation maths. Every generator that draws random numbers takes
a :class:`~v2xnoise.rng.RandomStream` and returns the values it drew so they
can be written to the corruption ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgumentError
from .geometry import (
    PointCloud,
    RigidTransform,
    RotationRPY,
    fractional_transform,
    rotation_from_rpy,
)

TWO_PI = 2.0 * math.pi

PERSPECTIVE_LEVELS = {
    "minimal": 0.007,
    "low": 0.014,
    "moderate": 0.021,
    "full": 0.028,
}

DIRECTION_POLICIES = ("camera_delayed", "lidar_delayed")


def param(value, unit):
    """One ledger entry: a sampled or derived value with its unit."""
    return {"value": float(value), "unit": unit}


def _nonneg(obj, *names):
    for name in names:
        value = float(getattr(obj, name))
        if not math.isfinite(value) or value < 0:
            raise InvalidArgumentError(f"{type(obj).__name__}.{name} must be >= 0, got {value}")
        object.__setattr__(obj, name, value)


def _phases(obj, name, n):
    values = tuple(float(p) for p in getattr(obj, name))
    if len(values) != n:
        raise InvalidArgumentError(f"{name} needs {n} phases")
    for p in values:
        if not (0.0 <= p < TWO_PI):
            raise InvalidArgumentError(f"phase {p} outside [0, 2pi)")
    object.__setattr__(obj, name, values)


# --- specs ---------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationNoiseSpec:
    rot_range: float = 0.5  # degrees
    trans_range: float = 0.5  # metres

    def __post_init__(self):
        _nonneg(self, "rot_range", "trans_range")


@dataclass(frozen=True)
class VibrationSpec:
    amplitude: float = 0.5  # degrees
    frequency: float = 2.0  # Hz
    phases: tuple = (0.0, 0.0, 0.0)  # roll, pitch, yaw; radians
    sigma_x: float = 0.02
    sigma_y: float = 0.02
    sigma_z: float = 0.01
    image_amplitude: float = 0.015  # fraction of image width / height
    image_phases: tuple = (0.0, 0.0)

    def __post_init__(self):
        _nonneg(self, "amplitude", "sigma_x", "sigma_y", "sigma_z", "image_amplitude")
        if not (math.isfinite(self.frequency) and self.frequency > 0):
            raise InvalidArgumentError("vibration frequency must be > 0")
        object.__setattr__(self, "frequency", float(self.frequency))
        _phases(self, "phases", 3)
        _phases(self, "image_phases", 2)

    def with_phases(self, phases, image_phases) -> "VibrationSpec":
        return VibrationSpec(
            self.amplitude, self.frequency, tuple(phases), self.sigma_x, self.sigma_y,
            self.sigma_z, self.image_amplitude, tuple(image_phases),
        )


@dataclass(frozen=True)
class PerspectiveDistortionSpec:
    alpha: float = PERSPECTIVE_LEVELS["full"]
    level: str = "full"

    def __post_init__(self):
        _nonneg(self, "alpha")
        if self.level == "custom":
            return
        if self.level not in PERSPECTIVE_LEVELS:
            raise InvalidArgumentError(f"unknown distortion level {self.level!r}")
        if self.alpha != PERSPECTIVE_LEVELS[self.level]:
            raise InvalidArgumentError(f"level {self.level!r} binds alpha={PERSPECTIVE_LEVELS[self.level]}")

    @classmethod
    def from_level(cls, level: str) -> "PerspectiveDistortionSpec":
        if level not in PERSPECTIVE_LEVELS:
            raise InvalidArgumentError(f"unknown distortion level {level!r}")
        return cls(PERSPECTIVE_LEVELS[level], level)


@dataclass(frozen=True)
class MotionDistortionSpec:
    sectors: int = 100

    def __post_init__(self):
        if int(self.sectors) != self.sectors or self.sectors < 1:
            raise InvalidArgumentError("sector count must be a positive integer")
        object.__setattr__(self, "sectors", int(self.sectors))


@dataclass(frozen=True)
class TimeSyncSpec:
    max_delay: float = 0.1  # seconds
    policy: str = "camera_delayed"

    def __post_init__(self):
        _nonneg(self, "max_delay")
        if self.policy not in DIRECTION_POLICIES:
            raise InvalidArgumentError(f"policy must be one of {DIRECTION_POLICIES}")


@dataclass(frozen=True)
class SystematicErrorSpec:
    rot_range: float = 0.1  # degrees
    trans_range: float = 0.1  # metres
    image_shift: float = 0.015  # fraction of image width / height

    def __post_init__(self):
        _nonneg(self, "rot_range", "trans_range", "image_shift")


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit RGB image, ``data`` shaped (height, width, 3)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.uint8 or data.ndim != 3 or data.shape[2] != 3:
            raise InvalidArgumentError(f"expected (H, W, 3) uint8 data, got {data.dtype} {data.shape}")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def equals(self, other: "ImageBuffer") -> bool:
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()


# --- rigid-transform noise -------------------------------------------------------

def decompose_rpy(R) -> RotationRPY:
    """Yaw-pitch-roll angles reproducing ``R``.

    Unlike :func:`~v2xnoise.geometry.rpy_from_rotation` this accepts gimbal
    lock (common for LiDAR-to-camera extrinsics, whose pitch is -90 deg) by
    pinning roll to zero there.
    """
    R = np.asarray(R, dtype=np.float64)
    cos_pitch = math.hypot(R[2, 1], R[2, 2])
    pitch = math.atan2(-R[2, 0], cos_pitch)
    if cos_pitch > 1e-9:
        return RotationRPY(math.atan2(R[2, 1], R[2, 2]), pitch, math.atan2(R[1, 0], R[0, 0]))
    return RotationRPY(0.0, pitch, math.atan2(-R[0, 1], R[1, 1]))


def _offset_rotation(R, d_roll, d_pitch, d_yaw):
    if d_roll == 0.0 and d_pitch == 0.0 and d_yaw == 0.0:
        return R
    a = decompose_rpy(R)
    return rotation_from_rpy(RotationRPY(a.roll + d_roll, a.pitch + d_pitch, a.yaw + d_yaw))


def perturb_calibration(T: RigidTransform, spec: CalibrationNoiseSpec, rng):
    """Add uniform roll/pitch/yaw and x/y/z offsets to an extrinsic."""
    d_ang = rng.uniform(-spec.rot_range, spec.rot_range, 3)
    d_t = rng.uniform(-spec.trans_range, spec.trans_range, 3)
    R = _offset_rotation(T.rotation, *(math.radians(a) for a in d_ang))
    out = RigidTransform(R, T.translation + d_t, T.frame_from, T.frame_to)
    params = {
        "d_roll": param(d_ang[0], "deg"),
        "d_pitch": param(d_ang[1], "deg"),
        "d_yaw": param(d_ang[2], "deg"),
        "d_tx": param(d_t[0], "m"),
        "d_ty": param(d_t[1], "m"),
        "d_tz": param(d_t[2], "m"),
    }
    return out, params


def sample_vibration_phases(rng) -> tuple[tuple, tuple]:
    """Three rotational and two image phases, uniform on [0, 2pi)."""
    p = rng.uniform(0.0, TWO_PI, 5)
    return tuple(float(x) for x in p[:3]), tuple(float(x) for x in p[3:])


def vibration_angles(t: float, spec: VibrationSpec) -> np.ndarray:
    """Roll/pitch/yaw offsets in radians at time ``t``."""
    amp = math.radians(spec.amplitude)
    w = TWO_PI * spec.frequency * t
    return np.array([amp * math.sin(w + ph) for ph in spec.phases])


def vibration_transform(T: RigidTransform, t: float, spec: VibrationSpec, rng):
    """Sinusoidal rotation offset plus Gaussian translation jitter at time ``t``.

    Returns ``(T', params)``; params holds the angle offsets and the three
    Gaussian draws.
    """
    if not t >= 0:
        raise InvalidArgumentError(f"time must be >= 0, got {t}")
    d = vibration_angles(t, spec)
    jitter = np.array([rng.normal(spec.sigma_x), rng.normal(spec.sigma_y), rng.normal(spec.sigma_z)])
    R = _offset_rotation(T.rotation, *d)
    out = RigidTransform(R, T.translation + jitter, T.frame_from, T.frame_to)
    params = {
        "d_roll": param(math.degrees(d[0]), "deg"),
        "d_pitch": param(math.degrees(d[1]), "deg"),
        "d_yaw": param(math.degrees(d[2]), "deg"),
        "d_tx": param(jitter[0], "m"),
        "d_ty": param(jitter[1], "m"),
        "d_tz": param(jitter[2], "m"),
    }
    return out, params


def vibration_image_shift(t: float, cam, spec: VibrationSpec) -> tuple[float, float]:
    """Pixel shift of a vibrating camera at time ``t``.

    ``cam`` is anything with ``width`` and ``height`` (a CameraModel or an
    ImageBuffer).
    """
    if not t >= 0:
        raise InvalidArgumentError(f"time must be >= 0, got {t}")
    w = TWO_PI * spec.frequency * t
    du = spec.image_amplitude * cam.width * math.sin(w + spec.image_phases[0])
    dv = spec.image_amplitude * cam.height * math.sin(w + spec.image_phases[1])
    return du, dv


def systematic_offset(spec: SystematicErrorSpec, rng, image_size=None):
    """Fixed per-sensor pose offset and image shift.

    All eight values are always drawn so the stream layout does not depend on
    the sensor kind; with ``image_size=None`` the returned shift is zero.
    Returns ``(T_offset, (du, dv), params)``.
    """
    d_ang = rng.uniform(-spec.rot_range, spec.rot_range, 3)
    d_t = rng.uniform(-spec.trans_range, spec.trans_range, 3)
    frac = rng.uniform(-spec.image_shift, spec.image_shift, 2)
    R = rotation_from_rpy(RotationRPY(*(math.radians(a) for a in d_ang)))
    T = RigidTransform(R, d_t)
    params = {
        "d_roll": param(d_ang[0], "deg"),
        "d_pitch": param(d_ang[1], "deg"),
        "d_yaw": param(d_ang[2], "deg"),
        "d_tx": param(d_t[0], "m"),
        "d_ty": param(d_t[1], "m"),
        "d_tz": param(d_t[2], "m"),
        "u_frac": param(frac[0], "1"),
        "v_frac": param(frac[1], "1"),
    }
    if image_size is None:
        shift = (0.0, 0.0)
    else:
        width, height = image_size
        shift = (float(frac[0] * width), float(frac[1] * height))
        params["du"] = param(shift[0], "px")
        params["dv"] = param(shift[1], "px")
    return T, shift, params


# --- image noise ------------------------------------------------------------------

def _shifted(src, dy, dx):
    """``out[y, x] = src[y + dy, x + dx]``, zero where that falls outside."""
    H, W = src.shape[:2]
    out = np.zeros_like(src)
    y_lo, y_hi = max(0, -dy), min(H, H - dy)
    x_lo, x_hi = max(0, -dx), min(W, W - dx)
    if y_lo < y_hi and x_lo < x_hi:
        out[y_lo:y_hi, x_lo:x_hi] = src[y_lo + dy:y_hi + dy, x_lo + dx:x_hi + dx]
    return out


def shift_image(img: ImageBuffer, du: float, dv: float) -> ImageBuffer:
    """Translate by ``(du, dv)`` pixels: ``out(x, y) = in(x - du, y - dv)``.

    Fractional shifts are bilinear; uncovered pixels are black.
    """
    du, dv = float(du), float(dv)
    H, W = img.height, img.width
    if abs(du) >= W + 1 or abs(dv) >= H + 1:
        return ImageBuffer(np.zeros_like(img.data))
    ax, ay = -du, -dv
    ix, iy = math.floor(ax), math.floor(ay)
    fx, fy = ax - ix, ay - iy
    src = img.data.astype(np.float64)
    val = (
        ((1.0 - fx) * (1.0 - fy)) * _shifted(src, iy, ix)
        + (fx * (1.0 - fy)) * _shifted(src, iy, ix + 1)
        + ((1.0 - fx) * fy) * _shifted(src, iy + 1, ix)
        + (fx * fy) * _shifted(src, iy + 1, ix + 1)
    )
    return ImageBuffer(np.clip(np.floor(val + 0.5), 0.0, 255.0).astype(np.uint8))


def translation_homography(du: float, dv: float) -> np.ndarray:
    return np.array([[1.0, 0.0, du], [0.0, 1.0, dv], [0.0, 0.0, 1.0]])


def perspective_homography(width: float, height: float, alpha: float) -> np.ndarray:
    """Closed-form homography pushing the top corners outward by ``alpha * W``.

    Maps (0,0)->(-aW,0), (W,0)->((1+a)W,0) and keeps both bottom corners.
    """
    W, H, a = float(width), float(height), float(alpha)
    if not (W > 0 and H > 0):
        raise InvalidArgumentError("image dimensions must be positive")
    if not (math.isfinite(a) and a >= 0):
        raise InvalidArgumentError("alpha must be >= 0")
    return np.array(
        [
            [1.0 + 2.0 * a, a * W / H, -a * W],
            [0.0, 1.0 + 2.0 * a, 0.0],
            [0.0, 2.0 * a / H, 1.0],
        ]
    )


def apply_homography(H_mat, xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    h = np.column_stack([xy, np.ones(len(xy))]) @ np.asarray(H_mat, dtype=np.float64).T
    return h[:, :2] / h[:, 2:3]


def warp_image(img: ImageBuffer, H_mat) -> ImageBuffer:
    """Forward-warp ``img`` by ``H_mat`` using inverse mapping and bilinear sampling."""
    H_mat = np.asarray(H_mat, dtype=np.float64)
    if H_mat.shape != (3, 3) or not np.all(np.isfinite(H_mat)):
        raise InvalidArgumentError("homography must be a finite 3x3 matrix")
    if np.linalg.cond(H_mat) > 1e12:
        raise InvalidArgumentError("homography is singular")
    return ImageBuffer(kernels.warp_bilinear(img.data, np.linalg.inv(H_mat)))


# --- LiDAR motion distortion ----------------------------------------------------

def sector_index(xyz, sectors: int) -> np.ndarray:
    """Azimuth sector of each point; boundary points join the lower sector."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    az = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), TWO_PI)
    idx = np.ceil(az * (sectors / TWO_PI)).astype(np.int64) - 1
    return np.clip(idx, 0, sectors - 1)


def motion_distort(cloud: PointCloud, T_motion: RigidTransform, spec: MotionDistortionSpec) -> PointCloud:
    """Move each azimuth sector by its share of the ego motion.

    Sector ``n`` of ``N`` receives ``fractional_transform(T_motion, (n+1)/N)``,
    so the last-scanned sector carries the whole motion.
    """
    N = spec.sectors
    sec = sector_index(cloud.xyz, N)
    out = np.array(cloud.xyz, dtype=np.float64)
    for n in np.unique(sec):
        mask = sec == n
        out[mask] = fractional_transform(T_motion, (int(n) + 1) / N).apply(cloud.xyz[mask])
    return cloud.replace(out)


# --- time synchronisation ----------------------------------------------------------

def _check_timestamps(ts, name):
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    if ts.shape[0] == 0:
        raise InvalidArgumentError(f"{name} timestamps are empty")
    if not np.all(np.isfinite(ts)) or np.any(np.diff(ts) <= 0):
        raise InvalidArgumentError(f"{name} timestamps must be finite and strictly increasing")
    return ts


def pair_nearest(lidar_timestamps, camera_timestamps, delay: float, policy: str = "camera_delayed"):
    """Camera index nearest to each LiDAR time shifted by ``delay``.

    Ties go to the earlier camera frame.
    """
    lt = _check_timestamps(lidar_timestamps, "lidar")
    ct = _check_timestamps(camera_timestamps, "camera")
    if policy not in DIRECTION_POLICIES:
        raise InvalidArgumentError(f"policy must be one of {DIRECTION_POLICIES}")
    target = lt + delay if policy == "camera_delayed" else lt - delay
    if len(ct) == 1:
        return np.zeros(len(lt), dtype=np.int64)
    hi = np.clip(np.searchsorted(ct, target), 1, len(ct) - 1)
    lo = hi - 1
    pick_hi = np.abs(ct[hi] - target) < np.abs(target - ct[lo])
    return np.where(pick_hi, hi, lo).astype(np.int64)


def desynchronize(lidar_timestamps, camera_timestamps, spec: TimeSyncSpec, rng):
    """Draw one trigger delay and re-pair frames around it.

    Returns ``(pairing, delay)`` where ``pairing[k]`` is the camera frame that
    LiDAR frame ``k`` now sees.
    """
    _check_timestamps(lidar_timestamps, "lidar")
    _check_timestamps(camera_timestamps, "camera")
    delay = float(rng.uniform(0.0, spec.max_delay))
    return pair_nearest(lidar_timestamps, camera_timestamps, delay, spec.policy), delay
