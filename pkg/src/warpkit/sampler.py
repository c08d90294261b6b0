"""Differentiable bilinear grid sampling (align-corners normalised coordinates)."""

from __future__ import annotations

import enum

import numpy as np

from . import kernels
from .diffcore import ops
from .diffcore.tensor import Tensor, record


class PaddingMode(enum.Enum):
    ZEROS = kernels.ZEROS
    BORDER = kernels.BORDER


def _snap(v: np.ndarray) -> np.ndarray:
    """Round coordinates lying within a few ulps of a pixel centre onto it."""
    r = np.round(v)
    tol = 8 * np.finfo(v.dtype).eps * np.maximum(1.0, np.abs(v))
    return np.where(np.abs(v - r) <= tol, r, v).astype(v.dtype)


def grid_sample(image: Tensor, grid: Tensor, mode: PaddingMode = PaddingMode.BORDER) -> Tensor:
    """Sample ``image`` [C,H,W] / [N,C,H,W] at ``grid`` [2,Ho,Wo] / [N,2,Ho,Wo].

    Grid channel 0 is x (columns), channel 1 is y (rows); -1 and +1 address the
    first and last pixel centres. Out-of-range reads follow ``mode``. At exact
    pixel-lattice lines the grid derivative is taken from the left/upper cell.
    """
    if not isinstance(grid, Tensor):
        grid = Tensor(np.asarray(grid, dtype=image.dtype))
    single = image.ndim == 3
    if single != (grid.ndim == 3):
        raise ValueError(f"image rank {image.ndim} and grid rank {grid.ndim} disagree")
    if single:
        image = ops.reshape(image, (1,) + image.shape)
        grid = ops.reshape(grid, (1,) + grid.shape)
    if grid.shape[1] != 2 or grid.shape[0] != image.shape[0]:
        raise ValueError(f"grid must be [N,2,Ho,Wo] matching image batch; got {grid.shape} for {image.shape}")
    if grid.dtype != image.dtype:
        grid = ops.astype(grid, image.dtype)
    if not np.all(np.isfinite(grid.data)):
        raise ValueError("grid_sample: non-finite grid coordinates")

    n, c, h, w = image.shape
    sx = (w - 1) / 2.0
    sy = (h - 1) / 2.0
    img = np.ascontiguousarray(image.data)
    x = np.ascontiguousarray((grid.data[:, 0] + 1.0) * sx, dtype=img.dtype)
    y = np.ascontiguousarray((grid.data[:, 1] + 1.0) * sy, dtype=img.dtype)
    x, y = _snap(x), _snap(y)
    m = mode.value
    out = kernels.grid_sample_fwd(img, x, y, m)

    def bw(g):
        gimg, gx, gy = kernels.grid_sample_bwd(img, x, y, m, np.ascontiguousarray(g))
        ggrid = np.stack([gx * sx, gy * sy], axis=1).astype(img.dtype) if grid.requires_grad else None
        return gimg, ggrid

    res = record(out, (image, grid), bw)
    return ops.reshape(res, res.shape[1:]) if single else res
