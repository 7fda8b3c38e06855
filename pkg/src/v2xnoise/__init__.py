"""Sensor-noise corruption and depth-raster toolkit for multi-agent LiDAR/camera datasets."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateOrientationError,
    EmptyOverlapError,
    FrameError,
    InvalidArgumentError,
    ParseError,
    V2XNoiseError,
    VerificationError,
)
from .geometry import (  # noqa: E402
    CameraModel,
    PointCloud,
    RigidTransform,
    RotationRPY,
    backproject,
    compose,
    fractional_transform,
    invert,
    project_points,
    rotation_from_rpy,
    transform_points,
)
from .rng import RandomStream  # noqa: E402

__all__ = [
    "__version__",
    "CameraModel",
    "DegenerateOrientationError",
    "EmptyOverlapError",
    "FrameError",
    "InvalidArgumentError",
    "ParseError",
    "PointCloud",
    "RandomStream",
    "RigidTransform",
    "RotationRPY",
    "V2XNoiseError",
    "VerificationError",
    "backproject",
    "compose",
    "fractional_transform",
    "invert",
    "project_points",
    "rotation_from_rpy",
    "transform_points",
]
