"""Depth rasters built from projected LiDAR.

Rasters are indexed ``[row, col] == [v, u]``. Every raster carries an explicit
boolean validity mask; invalid pixels also hold depth 0 so files stay
readable without the mask, but the mask is what counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyOverlapError, InvalidArgumentError
from .geometry import CameraModel, PointCloud, RigidTransform, invert, project_points

#: Channel order of a depth variation map.
CHANNELS = ("depth", "up", "down", "left", "right")

#: (row, col) offsets of the four neighbours, in ``CHANNELS[1:]`` order.
SHIFTS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Single-channel depth raster with validity mask."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = _frozen(self.depth, np.float64)
        valid = _frozen(self.valid, np.bool_)
        if depth.ndim != 2 or depth.shape != valid.shape:
            raise InvalidArgumentError("depth and mask must be matching 2-D arrays")
        if np.any(depth[~valid] != 0):
            raise InvalidArgumentError("invalid pixels must hold depth 0")
        if np.any(~(depth[valid] > 0)):
            raise InvalidArgumentError("valid pixels must hold positive depth")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @classmethod
    def empty(cls, width: int, height: int):
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))


class SparseDepthMap(DepthMap):
    pass


class DepthAggregationMap(DepthMap):
    pass


@dataclass(frozen=True, eq=False)
class DepthVariationMap:
    """Stacked ``(5, H, W)`` channels in :data:`CHANNELS` order plus masks."""

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        valid = _frozen(self.valid, np.bool_)
        if data.ndim != 3 or data.shape[0] != len(CHANNELS) or data.shape != valid.shape:
            raise InvalidArgumentError("variation map must be (5, H, W) with matching mask")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    def channel(self, name: str) -> np.ndarray:
        return self.data[CHANNELS.index(name)]

    def mask(self, name: str) -> np.ndarray:
        return self.valid[CHANNELS.index(name)]

    def max_abs_gradient(self) -> dict:
        """Largest |gradient| per direction over valid pixels (0 when none)."""
        out = {}
        for name in CHANNELS[1:]:
            g = self.channel(name)[self.mask(name)]
            out[name] = float(np.max(np.abs(g))) if g.size else 0.0
        return out


def rasterize(cam: CameraModel, u, v, depth):
    """Nearest-pixel z-buffer; the smallest depth wins a shared pixel."""
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    # round half up; u < W can still round to W, which snaps back to the last column
    cols = np.minimum(np.floor(u + 0.5).astype(np.int64), cam.width - 1)
    rows = np.minimum(np.floor(v + 0.5).astype(np.int64), cam.height - 1)
    d, m = kernels.zbuffer_min(rows, cols, depth, cam.height, cam.width)
    return SparseDepthMap(d, m)


def render_sparse_depth(cloud: PointCloud, cam: CameraModel, T_lidar2img: RigidTransform) -> SparseDepthMap:
    proj = project_points(cam, T_lidar2img, cloud)
    return rasterize(cam, proj.u, proj.v, proj.depth)


def densify_depth_max(src: DepthMap, window: int = 7, mode: str = "max") -> DepthAggregationMap:
    """Fill each pixel with the max valid depth of its ``window``-square neighbourhood.

    ``mode="min"`` takes the nearest surface instead; off by default.
    """
    if int(window) != window or window < 1 or window % 2 == 0:
        raise InvalidArgumentError(f"window must be a positive odd integer, got {window}")
    if mode not in ("max", "min"):
        raise InvalidArgumentError("mode must be 'max' or 'min'")
    d, m = kernels.pool_masked(src.depth, src.valid, int(window), mode == "max")
    return DepthAggregationMap(d, m)


def depth_gradients(aggr: DepthMap) -> DepthVariationMap:
    """Unit-step differences ``d'(neighbour) - d'(pixel)`` in four directions."""
    D, M = aggr.depth, aggr.valid
    H, W = D.shape
    data = np.zeros((len(CHANNELS), H, W))
    valid = np.zeros((len(CHANNELS), H, W), dtype=bool)
    data[0], valid[0] = D, M
    for k, name in enumerate(CHANNELS[1:], start=1):
        di, dj = SHIFTS[name]
        # destination window whose neighbour (i+di, j+dj) is inside the raster
        i0, i1 = max(0, -di), H - max(0, di)
        j0, j1 = max(0, -dj), W - max(0, dj)
        nb_d = D[i0 + di:i1 + di, j0 + dj:j1 + dj]
        nb_m = M[i0 + di:i1 + di, j0 + dj:j1 + dj]
        both = nb_m & M[i0:i1, j0:j1]
        valid[k, i0:i1, j0:j1] = both
        data[k, i0:i1, j0:j1] = np.where(both, nb_d - D[i0:i1, j0:j1], 0.0)
    return DepthVariationMap(data, valid)


def depth_variation_map(cloud, cam, T_lidar2img, window: int = 7, mode: str = "max") -> DepthVariationMap:
    return depth_gradients(densify_depth_max(render_sparse_depth(cloud, cam, T_lidar2img), window, mode))


@dataclass(frozen=True)
class Misalignment:
    mean: float
    p95: float
    matched: int


def misalignment_metric(cloud: PointCloud, cam: CameraModel, T_clean: RigidTransform,
                        T_noisy: RigidTransform) -> Misalignment:
    """Pixel displacement between projections under a clean and a noisy extrinsic."""
    a = project_points(cam, T_clean, cloud)
    b = project_points(cam, T_noisy, cloud)
    common, ia, ib = np.intersect1d(a.index, b.index, assume_unique=True, return_indices=True)
    if common.size == 0:
        raise EmptyOverlapError("no point projects inside the image under both transforms")
    disp = np.hypot(a.u[ia] - b.u[ib], a.v[ia] - b.v[ib])
    return Misalignment(float(np.mean(disp)), float(np.percentile(disp, 95)), int(common.size))


def probe_cloud(cam: CameraModel, T_lidar2img: RigidTransform, depths=(5.0, 10.0, 20.0, 40.0), grid=9,
                frame=None) -> PointCloud:
    """Fixed grid of points filling the view at several depths, in the LiDAR frame.

    Used to score calibration noise when no recorded cloud is at hand.
    """
    us = np.linspace(0.1 * cam.width, 0.9 * cam.width, grid)
    vs = np.linspace(0.1 * cam.height, 0.9 * cam.height, grid)
    uu, vv = np.meshgrid(us, vs)
    pts = []
    for z in depths:
        pts.append(np.stack([(uu.ravel() - cam.cx) / cam.fx * z, (vv.ravel() - cam.cy) / cam.fy * z,
                             np.full(uu.size, z)], axis=1))
    cam_pts = np.concatenate(pts)
    return PointCloud(invert(T_lidar2img).apply(cam_pts), frame=frame if frame else T_lidar2img.frame_from)


def depth_to_uint16(depth_map: DepthMap, scale: float = 256.0) -> np.ndarray:
    """16-bit preview raster: depth times ``scale``, 0 for invalid pixels."""
    v = np.where(depth_map.valid, np.floor(depth_map.depth * scale + 0.5), 0.0)
    return np.clip(v, 0, 65535).astype(np.uint16)


def yaw_perturbed(T: RigidTransform, yaw_deg: float) -> RigidTransform:
    """``T`` followed by a rotation of ``yaw_deg`` about the camera's vertical axis."""
    c, s = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
    # camera y points down, so a yaw of the rig is a rotation about camera y
    R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return RigidTransform(R @ T.rotation, R @ T.translation, T.frame_from, T.frame_to)
