"""Rigid-body geometry: rotations, SE(3) transforms, pinhole projection.

Conventions
-----------
* ``RigidTransform(R, t)`` maps a point ``p`` expressed in ``frame_from`` to
  ``R @ p + t`` expressed in ``frame_to``.
* Euler angles follow the Z-Y-X (yaw-pitch-roll) composition
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* Pixel coordinates are continuous; ``u`` grows along image columns and ``v``
  along rows. A pixel with integer index ``(row, col)`` is centred on
  ``(u, v) = (col, row)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateOrientationError, FrameError, InvalidArgumentError

ROTATION_TOL = 1e-9
#: Camera-frame depth at or below which a point is culled before projection.
Z_MIN = 1e-3
_GIMBAL_MARGIN = 1e-6
_PI_MARGIN = 1e-6


def _readonly(a, shape):
    arr = np.array(a, dtype=np.float64)
    if arr.shape != shape:
        raise InvalidArgumentError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def _canonical_angle(a: float) -> float:
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class RotationRPY:
    """Roll/pitch/yaw in radians, canonicalised to (-pi, pi]."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidArgumentError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, _canonical_angle(value))

    @classmethod
    def from_degrees(cls, roll: float, pitch: float, yaw: float) -> "RotationRPY":
        return cls(math.radians(roll), math.radians(pitch), math.radians(yaw))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.roll, self.pitch, self.yaw)


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_rpy(angles: RotationRPY) -> np.ndarray:
    """Return ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    if not isinstance(angles, RotationRPY):
        angles = RotationRPY(*angles)
    return rot_z(angles.yaw) @ rot_y(angles.pitch) @ rot_x(angles.roll)


def rpy_from_rotation(R) -> RotationRPY:
    """Inverse of :func:`rotation_from_rpy` away from gimbal lock."""
    R = np.asarray(R, dtype=np.float64)
    check_rotation(R)
    pitch = math.atan2(-R[2, 0], math.hypot(R[2, 1], R[2, 2]))
    if abs(pitch) >= math.pi / 2 - _GIMBAL_MARGIN:
        raise DegenerateOrientationError(f"pitch {pitch!r} is at gimbal lock")
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return RotationRPY(roll, pitch, yaw)


def rotation_error(R) -> float:
    """Largest entrywise deviation of ``R.T @ R`` from I, or of det(R) from 1."""
    R = np.asarray(R, dtype=np.float64)
    ortho = float(np.max(np.abs(R.T @ R - np.eye(3))))
    return max(ortho, abs(float(np.linalg.det(R)) - 1.0))


def check_rotation(R, tol: float = ROTATION_TOL) -> None:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise InvalidArgumentError(f"rotation must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidArgumentError("rotation has non-finite entries")
    err = rotation_error(R)
    if err > tol:
        raise InvalidArgumentError(f"not a proper rotation (error {err:.3g} > {tol:g})")


def orthonormalize(R) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    frame_from: Optional[str] = None
    frame_to: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _readonly(self.translation, (3,)))
        check_rotation(self.rotation)
        if not np.all(np.isfinite(self.translation)):
            raise InvalidArgumentError("translation has non-finite entries")

    @classmethod
    def identity(cls, frame: Optional[str] = None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), frame, frame)

    @classmethod
    def from_matrix(cls, M, frame_from=None, frame_to=None) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        if M.shape != (4, 4):
            raise InvalidArgumentError(f"homogeneous matrix must be 4x4, got {M.shape}")
        if not np.array_equal(M[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidArgumentError("bottom row of a homogeneous transform must be (0, 0, 0, 1)")
        return cls(M[:3, :3], M[:3, 3], frame_from, frame_to)

    @classmethod
    def from_rpy(cls, angles, translation=(0.0, 0.0, 0.0), frame_from=None, frame_to=None):
        return cls(rotation_from_rpy(angles), translation, frame_from, frame_to)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def with_frames(self, frame_from, frame_to) -> "RigidTransform":
        return RigidTransform(self.rotation, self.translation, frame_from, frame_to)

    def apply(self, xyz) -> np.ndarray:
        # explicit per-row arithmetic: BLAS summation order may vary with N
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        R, t = self.rotation, self.translation
        x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        out = np.empty_like(xyz)
        for k in range(3):
            out[:, k] = R[k, 0] * x + R[k, 1] * y + R[k, 2] * z + t[k]
        return out

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self):
        return (
            f"RigidTransform(rotation={self.rotation.tolist()}, "
            f"translation={self.translation.tolist()}, "
            f"frame_from={self.frame_from!r}, frame_to={self.frame_to!r})"
        )


def _frame_agnostic(T: RigidTransform) -> bool:
    return T.frame_from is None and T.frame_to is None


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``compose(a, b)(p) == a(b(p))``.

    A transform with no frame labels at all is treated as acting inside
    whatever frame it is composed with.
    """
    if a.frame_from is not None and b.frame_to is not None and a.frame_from != b.frame_to:
        raise FrameError(f"cannot compose: {b.frame_to!r} -> ... -> {a.frame_from!r}")
    frame_from = a.frame_from if _frame_agnostic(b) else b.frame_from
    frame_to = b.frame_to if _frame_agnostic(a) else a.frame_to
    R = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(R, t, frame_from, frame_to)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -(Rt @ T.translation), T.frame_to, T.frame_from)


# --- SE(3) exponential / logarithm -------------------------------------------

def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_log(R) -> np.ndarray:
    """Rotation vector of ``R``; raises near a half-turn where the axis is ill-defined."""
    R = np.asarray(R, dtype=np.float64)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(w))
    c = 0.5 * (float(np.trace(R)) - 1.0)
    theta = math.atan2(s, c)
    if theta > math.pi - _PI_MARGIN:
        raise DegenerateOrientationError(f"rotation angle {theta!r} is too close to pi")
    if theta < 1e-6:
        return w * (1.0 + theta * theta / 6.0)
    return w * (theta / s)


def _left_jacobian(w) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    th2 = theta * theta
    return (
        np.eye(3)
        + ((1.0 - math.cos(theta)) / th2) * K
        + ((theta - math.sin(theta)) / (th2 * theta)) * (K @ K)
    )


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-6:
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (math.sin(theta) / theta) * K
        + ((1.0 - math.cos(theta)) / (theta * theta)) * (K @ K)
    )


def se3_log(T: RigidTransform) -> np.ndarray:
    """Twist ``[rho, omega]`` with ``se3_exp(twist) == T``."""
    w = so3_log(T.rotation)
    rho = np.linalg.solve(_left_jacobian(w), T.translation)
    return np.concatenate([rho, w])


def se3_exp(xi, frame_from=None, frame_to=None) -> RigidTransform:
    xi = np.asarray(xi, dtype=np.float64)
    rho, w = xi[:3], xi[3:]
    R = so3_exp(w)
    return RigidTransform(R, _left_jacobian(w) @ rho, frame_from, frame_to)


def fractional_transform(T: RigidTransform, s: float) -> RigidTransform:
    """The ``s``-th power of ``T`` along its screw motion, ``0 <= s <= 1``."""
    s = float(s)
    if not (0.0 <= s <= 1.0):
        raise InvalidArgumentError(f"fraction must lie in [0, 1], got {s}")
    if s == 1.0:
        return T
    if s == 0.0:
        return RigidTransform(np.eye(3), np.zeros(3), T.frame_from, T.frame_to)
    return se3_exp(s * se3_log(T), T.frame_from, T.frame_to)


# --- Point clouds and cameras --------------------------------------------------

def _optional_column(values, n, name):
    if values is None:
        return None
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (n,):
        raise InvalidArgumentError(f"{name} must have {n} entries, got {arr.shape[0]}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Columnar point cloud: ``xyz`` is (N, 3) metres, the rest are length N."""

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None
    azimuth: Optional[np.ndarray] = None
    timestamp: Optional[np.ndarray] = None
    frame: Optional[str] = None

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise InvalidArgumentError(f"xyz must be (N, 3), got {xyz.shape}")
        if not np.all(np.isfinite(xyz)):
            raise InvalidArgumentError("point coordinates must be finite")
        xyz.setflags(write=False)
        n = xyz.shape[0]
        object.__setattr__(self, "xyz", xyz)
        intensity = np.zeros(n) if self.intensity is None else self.intensity
        object.__setattr__(self, "intensity", _optional_column(intensity, n, "intensity"))
        object.__setattr__(self, "azimuth", _optional_column(self.azimuth, n, "azimuth"))
        object.__setattr__(self, "timestamp", _optional_column(self.timestamp, n, "timestamp"))

    def __len__(self):
        return self.xyz.shape[0]

    def replace(self, xyz=None, frame=...) -> "PointCloud":
        return PointCloud(
            self.xyz if xyz is None else xyz,
            self.intensity,
            self.azimuth,
            self.timestamp,
            self.frame if frame is ... else frame,
        )

    def equals(self, other: "PointCloud") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.frame == other.frame
            and same(self.xyz, other.xyz)
            and same(self.intensity, other.intensity)
            and same(self.azimuth, other.azimuth)
            and same(self.timestamp, other.timestamp)
        )


def _check_frames(T: RigidTransform, cloud: PointCloud):
    if T.frame_from is not None and cloud.frame is not None and T.frame_from != cloud.frame:
        raise FrameError(f"transform expects frame {T.frame_from!r}, cloud is in {cloud.frame!r}")


def transform_points(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    _check_frames(T, cloud)
    frame = cloud.frame if _frame_agnostic(T) else T.frame_to
    return cloud.replace(T.apply(cloud.xyz), frame=frame)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidArgumentError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidArgumentError("image size must be integral")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("image size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Projection:
    """Points that survived projection, ordered by source index."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    index: np.ndarray
    dropped: int = field(default=0)

    def __len__(self):
        return self.index.shape[0]


def project_points(cam: CameraModel, T_lidar2img: RigidTransform, cloud: PointCloud) -> Projection:
    _check_frames(T_lidar2img, cloud)
    pc = T_lidar2img.apply(cloud.xyz)
    z = pc[:, 2]
    front = z > Z_MIN
    idx = np.flatnonzero(front)
    x, y, z = pc[idx, 0], pc[idx, 1], z[idx]
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    inside = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    idx = idx[inside]
    return Projection(u[inside], v[inside], z[inside], idx, len(cloud) - idx.shape[0])


def backproject(cam: CameraModel, T_lidar2img: RigidTransform, u, v, depth) -> np.ndarray:
    """Lift pixels with known camera-frame depth back into the source frame."""
    u, v, depth = (np.asarray(a, dtype=np.float64) for a in (u, v, depth))
    pc = np.stack([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth], axis=1)
    return invert(T_lidar2img).apply(pc)
