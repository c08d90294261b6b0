"""Pure numpy versions of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension; ``warpkit.kernels`` picks one at import time.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BORDER = 1
ZEROS = 0


def im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """[N,C,Hp,Wp] padded input -> [N, C*k*k, ho*wo] patch matrix."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # [N,C,ho,wo,k,k] -> [N,C,k,k,ho,wo]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, ho * wo)


def col2im(cols: np.ndarray, c: int, hp: int, wp: int, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of ``im2col``: scatter-add patches back into a padded image."""
    n = cols.shape[0]
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    ye = (ho - 1) * stride + 1
    xe = (wo - 1) * stride + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + ye : stride, j : j + xe : stride] += cols[:, :, i, j]
    return out


def _corners(x: np.ndarray, y: np.ndarray, h: int, w: int, mode: int):
    # ceil-1 puts exact lattice points in the left/lower cell with weight 1 on the right corner
    x0 = np.ceil(x) - 1.0
    y0 = np.ceil(y) - 1.0
    wx1 = x - x0
    wy1 = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    if mode == BORDER:
        vx0 = vx1 = vy0 = vy1 = None
        x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
        y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1)
    else:
        vx0 = (x0 >= 0) & (x0 < w)
        vx1 = (x1 >= 0) & (x1 < w)
        vy0 = (y0 >= 0) & (y0 < h)
        vy1 = (y1 >= 0) & (y1 < h)
        x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
        y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1)
    idx = (y0c * w + x0c, y0c * w + x1c, y1c * w + x0c, y1c * w + x1c)
    if mode == BORDER:
        valid = None
    else:
        valid = (vy0 & vx0, vy0 & vx1, vy1 & vx0, vy1 & vx1)
    return wx1, wy1, idx, valid


def _gather(flat: np.ndarray, idx: np.ndarray, valid) -> np.ndarray:
    # flat [N,C,HW], idx [N,L] -> [N,C,L]
    v = np.take_along_axis(flat, idx[:, None, :], axis=2)
    if valid is not None:
        v = v * valid[:, None, :]
    return v


def grid_sample_fwd(img: np.ndarray, x: np.ndarray, y: np.ndarray, mode: int) -> np.ndarray:
    """Bilinear lookup of ``img`` [N,C,H,W] at pixel coordinates x, y [N,Ho,Wo]."""
    n, c, h, w = img.shape
    ho, wo = x.shape[1:]
    flat = img.reshape(n, c, h * w)
    wx1, wy1, idx, valid = _corners(x.reshape(n, -1), y.reshape(n, -1), h, w, mode)
    vs = [_gather(flat, idx[k], None if valid is None else valid[k]) for k in range(4)]
    wx1 = wx1[:, None, :].astype(img.dtype)
    wy1 = wy1[:, None, :].astype(img.dtype)
    # convex-combination form: a weight of exactly 1 returns the corner value bit-exactly
    top = (1 - wx1) * vs[0] + wx1 * vs[1]
    bot = (1 - wx1) * vs[2] + wx1 * vs[3]
    out = (1 - wy1) * top + wy1 * bot
    return out.reshape(n, c, ho, wo)


def grid_sample_bwd(img: np.ndarray, x: np.ndarray, y: np.ndarray, mode: int, g: np.ndarray):
    """Adjoints of ``grid_sample_fwd`` w.r.t. image and pixel coordinates."""
    n, c, h, w = img.shape
    L = x.shape[1] * x.shape[2]
    flat = img.reshape(n, c, h * w)
    gf = g.reshape(n, c, L)
    wx1, wy1, idx, valid = _corners(x.reshape(n, -1), y.reshape(n, -1), h, w, mode)
    wx1 = wx1.astype(img.dtype)
    wy1 = wy1.astype(img.dtype)
    wx0 = 1 - wx1
    wy0 = 1 - wy1
    weights = (wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1)

    base = (np.arange(n * c, dtype=np.int64) * (h * w)).reshape(n, c, 1)
    gidx = []
    gw = []
    for k in range(4):
        wk = weights[k] if valid is None else weights[k] * valid[k]
        gidx.append((base + idx[k][:, None, :]).ravel())
        gw.append((gf * wk[:, None, :]).ravel())
    gimg = np.bincount(np.concatenate(gidx), weights=np.concatenate(gw), minlength=n * c * h * w)
    gimg = gimg.astype(img.dtype).reshape(n, c, h, w)

    vs = [_gather(flat, idx[k], None if valid is None else valid[k]) for k in range(4)]
    wx1b = wx1[:, None, :]
    wy1b = wy1[:, None, :]
    dx = (1 - wy1b) * (vs[1] - vs[0]) + wy1b * (vs[3] - vs[2])
    dy = (1 - wx1b) * (vs[2] - vs[0]) + wx1b * (vs[3] - vs[1])
    gx = (gf * dx).sum(1).reshape(x.shape)
    gy = (gf * dy).sum(1).reshape(y.shape)
    return gimg, gx, gy


# Moore neighbourhood in clockwise order (image coordinates, y down), starting west.
_NBR = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def trace_contour(mask: np.ndarray) -> np.ndarray:
    """Outer boundary of the component containing the first foreground pixel
    in raster order, as an ordered [K,2] array of (row, col)."""
    h, w = mask.shape
    fg = np.flatnonzero(mask)
    if fg.size == 0:
        raise ValueError("empty mask")
    start = divmod(int(fg[0]), w)
    m = mask.astype(bool)

    def inside(r, c):
        return 0 <= r < h and 0 <= c < w and m[r, c]

    contour = [start]
    cur = start
    # start was found by raster scan, so its west neighbour is background
    back = 0
    first_move = None
    while True:
        found = False
        for step in range(1, 9):
            d = (back + step) % 8
            r = cur[0] + _NBR[d][0]
            c = cur[1] + _NBR[d][1]
            if inside(r, c):
                found = True
                break
        if not found:
            break  # isolated pixel
        nxt = (r, c)
        if cur == start:
            if first_move is None:
                first_move = nxt
            elif nxt == first_move:
                contour.pop()
                break
        # last background pixel examined, seen from the new position
        back = (d - 2) % 8 if d % 2 == 0 else (d - 3) % 8
        cur = nxt
        contour.append(cur)
    return np.asarray(contour, dtype=np.int64)
