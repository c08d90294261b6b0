# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_fallback``; same signatures, same conventions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil

cnp.import_array()

ctypedef fused real:
    float
    double

cdef enum:
    C_ZEROS = 0
    C_BORDER = 1

BORDER = C_BORDER
ZEROS = C_ZEROS


def im2col(xp, int k, int stride, int ho, int wo):
    """[N,C,Hp,Wp] padded input -> [N, C*k*k, ho*wo] patch matrix."""
    xp = np.ascontiguousarray(xp)
    out = np.empty((xp.shape[0], xp.shape[1] * k * k, ho * wo), dtype=xp.dtype)
    if xp.dtype == np.float32:
        _im2col[float](xp, out, k, stride, ho, wo)
    else:
        _im2col[double](xp, out, k, stride, ho, wo)
    return out


cdef void _im2col(real[:, :, :, ::1] xp, real[:, :, ::1] out, int k, int stride, int ho, int wo) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, oy, ox, row
    for n in range(xp.shape[0]):
        for c in range(xp.shape[1]):
            for i in range(k):
                for j in range(k):
                    row = (c * k + i) * k + j
                    for oy in range(ho):
                        for ox in range(wo):
                            out[n, row, oy * wo + ox] = xp[n, c, oy * stride + i, ox * stride + j]


def col2im(cols, int c, int hp, int wp, int k, int stride, int ho, int wo):
    """Adjoint of ``im2col``: scatter-add patches back into a padded image."""
    cols = np.ascontiguousarray(cols)
    out = np.zeros((cols.shape[0], c, hp, wp), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, k, stride, ho, wo)
    else:
        _col2im[double](cols, out, k, stride, ho, wo)
    return out


cdef void _col2im(real[:, :, ::1] cols, real[:, :, :, ::1] out, int k, int stride, int ho, int wo) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, oy, ox, row
    for n in range(out.shape[0]):
        for c in range(out.shape[1]):
            for i in range(k):
                for j in range(k):
                    row = (c * k + i) * k + j
                    for oy in range(ho):
                        for ox in range(wo):
                            out[n, c, oy * stride + i, ox * stride + j] += cols[n, row, oy * wo + ox]


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t hi) noexcept nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


cdef inline void _cell(double x, double y, Py_ssize_t h, Py_ssize_t w, int mode,
                       Py_ssize_t* ix, Py_ssize_t* iy, double* vx, double* vy,
                       double* wx1, double* wy1) noexcept nogil:
    # ceil-1 puts exact lattice points in the left/lower cell with weight 1 on the right corner
    cdef double fx0 = ceil(x) - 1.0
    cdef double fy0 = ceil(y) - 1.0
    cdef Py_ssize_t x0 = <Py_ssize_t>fx0
    cdef Py_ssize_t y0 = <Py_ssize_t>fy0
    wx1[0] = x - fx0
    wy1[0] = y - fy0
    ix[0] = _clamp(x0, w - 1)
    ix[1] = _clamp(x0 + 1, w - 1)
    iy[0] = _clamp(y0, h - 1)
    iy[1] = _clamp(y0 + 1, h - 1)
    if mode == C_BORDER:
        vx[0] = vx[1] = vy[0] = vy[1] = 1.0
    else:
        vx[0] = 1.0 if 0 <= x0 < w else 0.0
        vx[1] = 1.0 if 0 <= x0 + 1 < w else 0.0
        vy[0] = 1.0 if 0 <= y0 < h else 0.0
        vy[1] = 1.0 if 0 <= y0 + 1 < h else 0.0


def grid_sample_fwd(img, x, y, int mode):
    """Bilinear lookup of ``img`` [N,C,H,W] at pixel coordinates x, y [N,Ho,Wo]."""
    img = np.ascontiguousarray(img)
    x = np.ascontiguousarray(x, dtype=img.dtype)
    y = np.ascontiguousarray(y, dtype=img.dtype)
    out = np.empty((img.shape[0], img.shape[1], x.shape[1], x.shape[2]), dtype=img.dtype)
    if img.dtype == np.float32:
        _gs_fwd[float](img, x, y, mode, out)
    else:
        _gs_fwd[double](img, x, y, mode, out)
    return out


cdef void _gs_fwd(real[:, :, :, ::1] img, real[:, :, ::1] x, real[:, :, ::1] y, int mode,
                  real[:, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t n, c, oy, ox, h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t ix[2]
    cdef Py_ssize_t iy[2]
    cdef double vx[2]
    cdef double vy[2]
    cdef double wx1, wy1, v00, v01, v10, v11, top, bot
    for n in range(img.shape[0]):
        for oy in range(x.shape[1]):
            for ox in range(x.shape[2]):
                _cell(x[n, oy, ox], y[n, oy, ox], h, w, mode, ix, iy, vx, vy, &wx1, &wy1)
                for c in range(img.shape[1]):
                    v00 = img[n, c, iy[0], ix[0]] * vy[0] * vx[0]
                    v01 = img[n, c, iy[0], ix[1]] * vy[0] * vx[1]
                    v10 = img[n, c, iy[1], ix[0]] * vy[1] * vx[0]
                    v11 = img[n, c, iy[1], ix[1]] * vy[1] * vx[1]
                    top = (1.0 - wx1) * v00 + wx1 * v01
                    bot = (1.0 - wx1) * v10 + wx1 * v11
                    out[n, c, oy, ox] = <real>((1.0 - wy1) * top + wy1 * bot)


def grid_sample_bwd(img, x, y, int mode, g):
    """Adjoints of ``grid_sample_fwd`` w.r.t. image and pixel coordinates."""
    img = np.ascontiguousarray(img)
    x = np.ascontiguousarray(x, dtype=img.dtype)
    y = np.ascontiguousarray(y, dtype=img.dtype)
    g = np.ascontiguousarray(g, dtype=img.dtype)
    gimg = np.zeros_like(img)
    gx = np.empty_like(x)
    gy = np.empty_like(y)
    if img.dtype == np.float32:
        _gs_bwd[float](img, x, y, mode, g, gimg, gx, gy)
    else:
        _gs_bwd[double](img, x, y, mode, g, gimg, gx, gy)
    return gimg, gx, gy


cdef void _gs_bwd(real[:, :, :, ::1] img, real[:, :, ::1] x, real[:, :, ::1] y, int mode,
                  real[:, :, :, ::1] g, real[:, :, :, ::1] gimg,
                  real[:, :, ::1] gx, real[:, :, ::1] gy) noexcept nogil:
    cdef Py_ssize_t n, c, oy, ox, h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t ix[2]
    cdef Py_ssize_t iy[2]
    cdef double vx[2]
    cdef double vy[2]
    cdef double wx1, wy1, wx0, wy0, v00, v01, v10, v11, gv, sx, sy
    for n in range(img.shape[0]):
        for oy in range(x.shape[1]):
            for ox in range(x.shape[2]):
                _cell(x[n, oy, ox], y[n, oy, ox], h, w, mode, ix, iy, vx, vy, &wx1, &wy1)
                wx0 = 1.0 - wx1
                wy0 = 1.0 - wy1
                sx = 0.0
                sy = 0.0
                for c in range(img.shape[1]):
                    gv = g[n, c, oy, ox]
                    gimg[n, c, iy[0], ix[0]] += <real>(gv * wy0 * wx0 * vy[0] * vx[0])
                    gimg[n, c, iy[0], ix[1]] += <real>(gv * wy0 * wx1 * vy[0] * vx[1])
                    gimg[n, c, iy[1], ix[0]] += <real>(gv * wy1 * wx0 * vy[1] * vx[0])
                    gimg[n, c, iy[1], ix[1]] += <real>(gv * wy1 * wx1 * vy[1] * vx[1])
                    v00 = img[n, c, iy[0], ix[0]] * vy[0] * vx[0]
                    v01 = img[n, c, iy[0], ix[1]] * vy[0] * vx[1]
                    v10 = img[n, c, iy[1], ix[0]] * vy[1] * vx[0]
                    v11 = img[n, c, iy[1], ix[1]] * vy[1] * vx[1]
                    sx += gv * (wy0 * (v01 - v00) + wy1 * (v11 - v10))
                    sy += gv * (wx0 * (v10 - v00) + wx1 * (v11 - v01))
                gx[n, oy, ox] = <real>sx
                gy[n, oy, ox] = <real>sy


cdef int[8] _DR
cdef int[8] _DC
_DR[:] = [0, -1, -1, -1, 0, 1, 1, 1]
_DC[:] = [-1, -1, 0, 1, 1, 1, 0, -1]


def trace_contour(mask):
    """Outer boundary of the component containing the first foreground pixel
    in raster order, as an ordered [K,2] array of (row, col)."""
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(np.asarray(mask) != 0, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    fg = np.flatnonzero(m)
    if fg.size == 0:
        raise ValueError("empty mask")
    cdef Py_ssize_t sr = fg[0] // w, sc = fg[0] % w
    cdef Py_ssize_t cr = sr, cc = sc, r = 0, c = 0, fr = -1, fc = -1
    cdef int back = 0, d = 0, step
    cdef bint found
    rows = [sr]
    cols = [sc]
    while True:
        found = False
        for step in range(1, 9):
            d = (back + step) % 8
            r = cr + _DR[d]
            c = cc + _DC[d]
            if 0 <= r < h and 0 <= c < w and m[r, c]:
                found = True
                break
        if not found:
            break
        if cr == sr and cc == sc:
            if fr < 0:
                fr, fc = r, c
            elif r == fr and c == fc:
                rows.pop()
                cols.pop()
                break
        back = (d + 6) % 8 if d % 2 == 0 else (d + 5) % 8
        cr, cc = r, c
        rows.append(cr)
        cols.append(cc)
    return np.stack([np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)], axis=1)
