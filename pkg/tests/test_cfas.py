import math

import numpy as np
import pytest

from v2xnoise.cfas import (
    CHANNELS,
    DepthMap,
    SparseDepthMap,
    densify_depth_max,
    depth_gradients,
    depth_to_uint16,
    depth_variation_map,
    misalignment_metric,
    probe_cloud,
    rasterize,
    render_sparse_depth,
    yaw_perturbed,
)
from v2xnoise.errors import EmptyOverlapError, InvalidArgumentError
from v2xnoise.geometry import CameraModel, PointCloud, RigidTransform
from v2xnoise.synthetic import LIDAR_TO_CAMERA_R, synthetic_camera

from oracles import gradients_brute, maxpool_brute, rasterize_brute

CAM = CameraModel(1000, 1000, 832, 480, 1664, 960)


def random_map(rng, H=32, W=32, density=0.2):
    valid = rng.random((H, W)) < density
    depth = np.where(valid, rng.uniform(1, 80, (H, W)), 0.0)
    return SparseDepthMap(depth, valid)


def test_empty_cloud_all_invalid():
    m = render_sparse_depth(PointCloud(np.zeros((0, 3))), CAM, RigidTransform.identity())
    assert not m.valid.any() and not m.depth.any()


def test_single_axis_point():
    m = render_sparse_depth(PointCloud([[0, 0, 10]]), CAM, RigidTransform.identity())
    assert m.valid.sum() == 1 and m.valid[480, 832] and m.depth[480, 832] == 10


def test_nearest_depth_wins():
    cloud = PointCloud([[0, 0, 9], [0, 0, 5], [0, 0, 7]])
    m = render_sparse_depth(cloud, CAM, RigidTransform.identity())
    assert m.depth[480, 832] == 5 and m.valid.sum() == 1


def test_rasterize_matches_oracle():
    rng = np.random.default_rng(0)
    cam = CameraModel(20, 20, 10, 8, 21, 17)
    for _ in range(50):
        n = rng.integers(0, 200)
        u = rng.uniform(0, cam.width, n)
        v = rng.uniform(0, cam.height, n)
        # coarse depths force ties and collisions
        d = rng.integers(1, 6, n).astype(float)
        m = rasterize(cam, u, v, d)
        ref_d, ref_m = rasterize_brute(u, v, d, cam.width, cam.height)
        assert np.array_equal(m.valid, ref_m) and np.array_equal(m.depth, ref_d)


def test_rasterize_rounds_half_up_and_clamps():
    cam = CameraModel(10, 10, 5, 5, 10, 10)
    m = rasterize(cam, [2.5, 9.7], [0.49, 9.9], [3.0, 4.0])
    assert m.valid[0, 3] and m.depth[0, 3] == 3.0
    assert m.valid[9, 9] and m.depth[9, 9] == 4.0


def test_depth_map_invariants():
    with pytest.raises(InvalidArgumentError):
        DepthMap(np.ones((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(InvalidArgumentError):
        DepthMap(np.zeros((2, 2)), np.ones((2, 2), bool))


def test_densify_all_invalid():
    out = densify_depth_max(DepthMap.empty(9, 7))
    assert not out.valid.any()


def test_densify_single_source_block():
    d = np.zeros((11, 11))
    v = np.zeros((11, 11), bool)
    d[5, 5], v[5, 5] = 5.0, True
    out = densify_depth_max(SparseDepthMap(d, v), 7)
    block = np.zeros((11, 11), bool)
    block[2:9, 2:9] = True
    assert np.array_equal(out.valid, block)
    assert np.all(out.depth[block] == 5.0) and np.all(out.depth[~block] == 0.0)


def test_densify_rejects_even_window():
    with pytest.raises(InvalidArgumentError):
        densify_depth_max(DepthMap.empty(5, 5), 4)
    with pytest.raises(InvalidArgumentError):
        densify_depth_max(DepthMap.empty(5, 5), 0)


@pytest.mark.parametrize("window,mode", [(1, "max"), (3, "max"), (7, "max"), (7, "min"), (9, "max")])
def test_densify_matches_brute(window, mode):
    rng = np.random.default_rng(window)
    for _ in range(10):
        src = random_map(rng, 20, 23, 0.15)
        out = densify_depth_max(src, window, mode)
        ref_d, ref_m = maxpool_brute(src.depth, src.valid, window, mode == "max")
        assert np.array_equal(out.valid, ref_m) and np.array_equal(out.depth, ref_d)


def test_densify_extrema_properties():
    rng = np.random.default_rng(1)
    src = random_map(rng)
    out = densify_depth_max(src)
    assert out.depth[out.valid].max() == src.depth[src.valid].max()
    assert out.depth[out.valid].min() >= src.depth[src.valid].min()
    again = densify_depth_max(out)
    assert np.all(again.valid[out.valid])


def test_gradients_constant_and_ramp():
    H, W = 8, 10
    const = depth_gradients(DepthMap(np.full((H, W), 4.0), np.ones((H, W), bool)))
    for name in CHANNELS[1:]:
        assert not const.channel(name)[1:-1, 1:-1].any()
    jj = np.tile(np.arange(1, W + 1, dtype=float), (H, 1))
    ramp = depth_gradients(DepthMap(jj, np.ones((H, W), bool)))
    assert np.all(ramp.channel("right")[:, :-1] == 1) and np.all(ramp.channel("left")[:, 1:] == -1)
    assert not ramp.mask("right")[:, -1].any() and not ramp.mask("up")[0].any()
    assert ramp.max_abs_gradient() == {"up": 0.0, "down": 0.0, "left": 1.0, "right": 1.0}


def test_gradients_match_brute():
    rng = np.random.default_rng(2)
    for _ in range(20):
        aggr = densify_depth_max(random_map(rng, 16, 19, 0.05))
        g = depth_gradients(aggr)
        ref_d, ref_m = gradients_brute(aggr.depth, aggr.valid)
        assert np.array_equal(g.data, ref_d) and np.array_equal(g.valid, ref_m)


def test_gradient_antisymmetry():
    rng = np.random.default_rng(3)
    g = depth_gradients(densify_depth_max(random_map(rng, 20, 20, 0.1), 3))
    both = g.mask("left")[:, 1:] & g.mask("right")[:, :-1]
    assert np.array_equal(g.channel("left")[:, 1:][both], -g.channel("right")[:, :-1][both])


def test_depth_variation_map_composes_steps():
    rng = np.random.default_rng(4)
    cam = synthetic_camera()
    T = RigidTransform(LIDAR_TO_CAMERA_R, [0, 0.3, -0.2])
    cloud = PointCloud(rng.uniform([2, -10, -2], [30, 10, 2], (500, 3)))
    g = depth_variation_map(cloud, cam, T)
    ref = depth_gradients(densify_depth_max(render_sparse_depth(cloud, cam, T)))
    assert np.array_equal(g.data, ref.data) and g.data.shape == (5, cam.height, cam.width)


def test_uint16_preview():
    d = np.array([[0.0, 1.5], [300.0, 0.0]])
    v = d > 0
    assert depth_to_uint16(DepthMap(d, v)).tolist() == [[0, 384], [65535, 0]]


# --- misalignment ----------------------------------------------------------------

def test_misalignment_zero_for_same_transform():
    cam = synthetic_camera()
    T = RigidTransform(LIDAR_TO_CAMERA_R, [0, 0.3, -0.2])
    m = misalignment_metric(probe_cloud(cam, T), cam, T, T)
    assert m.mean == 0 and m.p95 == 0 and m.matched > 0


def test_misalignment_translation_matches_pinhole_sensitivity():
    cam = CameraModel(500, 500, 320, 240, 640, 480)
    z = np.array([5.0, 10.0, 20.0])
    cloud = PointCloud(np.stack([np.zeros(3), np.zeros(3), z], 1))
    dx = 0.1
    m = misalignment_metric(cloud, cam, RigidTransform.identity(), RigidTransform(np.eye(3), [dx, 0, 0]))
    assert m.mean == pytest.approx(np.mean(cam.fx * dx / z), abs=1e-12)


def test_misalignment_empty_overlap():
    with pytest.raises(EmptyOverlapError):
        misalignment_metric(PointCloud([[0, 0, -1]]), CAM, RigidTransform.identity(), RigidTransform.identity())


def test_misalignment_monotone_in_yaw():
    cam = synthetic_camera(320, 240)
    T = RigidTransform(LIDAR_TO_CAMERA_R, [0, 0.3, -0.2])
    cloud = probe_cloud(cam, T)
    means = [misalignment_metric(cloud, cam, T, yaw_perturbed(T, d)).mean for d in (0.0, 0.1, 0.25, 0.5)]
    assert means[0] == 0 and means[0] < means[1] < means[2] < means[3]
    # a yaw of d moves a pixel by fx * d * (1 + (x/z)^2); the probe grid spans |x/z| <= 0.5
    lo = cam.fx * math.radians(0.5)
    assert lo * 0.98 <= means[3] <= lo * 1.25 * 1.02
