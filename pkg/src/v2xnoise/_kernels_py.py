"""Pure numpy raster kernels.

Reference implementation of the routines in ``_kernels.pyx``. Floating-point
expressions are written in the same evaluation order as the compiled version
so both backends produce identical bytes.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def zbuffer_min(rows, cols, depth, height, width):
    """Scatter depths into an (H, W) raster keeping the smallest per pixel."""
    out = np.zeros((height, width), dtype=np.float64)
    valid = np.zeros((height, width), dtype=np.bool_)
    if depth.shape[0] == 0:
        return out, valid
    flat = rows.astype(np.int64) * width + cols.astype(np.int64)
    order = np.lexsort((depth, flat))
    flat_sorted = flat[order]
    first = np.ones(flat_sorted.shape[0], dtype=np.bool_)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    keep = order[first]
    out.reshape(-1)[flat[keep]] = depth[keep]
    valid.reshape(-1)[flat[keep]] = True
    return out, valid


def pool_masked(depth, valid, window, take_max=True):
    """Windowed max (or min) over valid pixels, window clipped at the borders."""
    r = window // 2
    fill = -np.inf if take_max else np.inf
    reduce = np.max if take_max else np.min
    work = np.where(valid, depth, fill)
    padded = np.pad(work, ((0, 0), (r, r)), constant_values=fill)
    work = reduce(sliding_window_view(padded, window, axis=1), axis=-1)
    padded = np.pad(work, ((r, r), (0, 0)), constant_values=fill)
    work = reduce(sliding_window_view(padded, window, axis=0), axis=-1)
    out_valid = np.isfinite(work)
    out = np.where(out_valid, work, 0.0)
    return out, out_valid


def warp_bilinear(img, hinv):
    """Inverse-map every output pixel through ``hinv`` and sample bilinearly.

    Neighbours outside the source contribute black; a non-positive
    homogeneous scale also yields black.
    """
    H, W, C = img.shape
    h = [float(x) for x in np.asarray(hinv, dtype=np.float64).reshape(-1)]
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    w = h[6] * xs + h[7] * ys + h[8]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (h[0] * xs + h[1] * ys + h[2]) / w
        sy = (h[3] * xs + h[4] * ys + h[5]) / w
    ok = (w > 0) & (sx > -1.0) & (sx < W) & (sy > -1.0) & (sy < H)
    sx = np.where(ok, sx, 0.0)
    sy = np.where(ok, sy, 0.0)
    x0f = np.floor(sx)
    y0f = np.floor(sy)
    fx = sx - x0f
    fy = sy - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy

    src = img.astype(np.float64)

    def tap(yy, xx):
        inside = ok & (xx >= 0) & (xx < W) & (yy >= 0) & (yy < H)
        vals = src[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
        return np.where(inside[..., None], vals, 0.0)

    val = (
        w00[..., None] * tap(y0, x0)
        + w01[..., None] * tap(y0, x0 + 1)
        + w10[..., None] * tap(y0 + 1, x0)
        + w11[..., None] * tap(y0 + 1, x0 + 1)
    )
    out = np.clip(np.floor(val + 0.5), 0.0, 255.0)
    out[~ok] = 0.0
    return out.astype(np.uint8)
