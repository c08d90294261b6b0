"""Thin-plate splines: radial kernel, exact/smoothing solve, anchor-grid warps.

Coordinates are normalised so the image spans [-1, 1] in x (columns) and y
(rows). Warps use the inverse convention: displaced anchors live in the
output frame and map back to their rest positions in the input frame, so a
dense grid tells every output pixel where to read from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.tensor import Tensor, no_tape

GRID_SIZE = 5
ANCHOR_INSET = 0.9
DEFAULT_REG = 1e-6
MAX_COND = 1e12
MAX_OFFSET = 2.0


class SingularTpsError(ValueError):
    """Raised when the anchor configuration makes the TPS system singular."""


def kernel_u(r: float) -> float:
    """U(r) = r^2 log r^2, with U(0) = 0."""
    if r < 0:
        raise ValueError(f"kernel_u needs r >= 0, got {r}")
    if r == 0:
        return 0.0
    r2 = r * r
    return float(r2 * np.log(r2))


def rest_anchors(n: int = GRID_SIZE, inset: float = ANCHOR_INSET) -> np.ndarray:
    """[n*n, 2] lattice points (x, y), row-major over y then x."""
    t = np.linspace(-inset, inset, n)
    yy, xx = np.meshgrid(t, t, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def identity_grid(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """[2, h, w] normalised (x, y) coordinates of every pixel centre."""
    ys = np.linspace(-1.0, 1.0, h, dtype=dtype)
    xs = np.linspace(-1.0, 1.0, w, dtype=dtype)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx, yy])


@dataclass
class TpsParams:
    """x/y offsets [2, 5, 5] of the anchor lattice; channel 0 is x, channel 1 is y."""

    offsets: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.float64)
        if off.shape != (2, GRID_SIZE, GRID_SIZE):
            raise ValueError(f"TpsParams offsets must be [2,{GRID_SIZE},{GRID_SIZE}], got {off.shape}")
        if not np.all(np.isfinite(off)):
            raise ValueError("TpsParams offsets must be finite")
        if np.abs(off).max(initial=0.0) > MAX_OFFSET:
            raise ValueError(f"TpsParams offsets exceed {MAX_OFFSET}: max {np.abs(off).max():.3f}")
        self.offsets = off

    @classmethod
    def zeros(cls) -> "TpsParams":
        return cls(np.zeros((2, GRID_SIZE, GRID_SIZE)))


@dataclass
class TpsCoefficients:
    """T(x) = affine @ [x, y, 1] + sum_i weights[i] * U(|x - sources[i]|)."""

    affine: np.ndarray  # [2, 3]
    weights: np.ndarray  # [K, 2]
    sources: np.ndarray  # [K, 2]

    @classmethod
    def identity(cls, sources: np.ndarray) -> "TpsCoefficients":
        sources = np.asarray(sources, dtype=np.float64)
        return cls(np.array([[1.0, 0, 0], [0, 1.0, 0]]), np.zeros_like(sources), sources)


def check_sources(src: np.ndarray) -> None:
    """Reject duplicated or collinear control points. ``src`` is [..., K, 2]."""
    src = np.asarray(src, dtype=np.float64)
    for b, pts in enumerate(src.reshape(-1, *src.shape[-2:])):
        k = len(pts)
        if k < 3:
            raise SingularTpsError(f"need at least 3 sources, got {k}")
        scale = max(float(np.ptp(pts, axis=0).max()), 1e-300)
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        d[np.diag_indices(k)] = np.inf
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] <= 1e-9 * scale:
            raise SingularTpsError(f"duplicated sources: points {min(i, j)} and {max(i, j)} coincide (sample {b})")
        centred = pts - pts.mean(0)
        sv = np.linalg.svd(centred, compute_uv=False)
        if sv[-1] <= 1e-9 * max(sv[0], 1e-300):
            raise SingularTpsError(f"collinear sources: all {k} points lie on one line (sample {b})")


def _system(src: Tensor, reg: float) -> Tensor:
    """Bordered TPS matrix [[K + reg I, Q], [Q^T, 0]] for sources [..., K, 2]."""
    k = src.shape[-2]
    lead = src.shape[:-2]
    kern = ops.tps_kernel(src, src)
    if reg:
        kern = ops.add(kern, reg * np.eye(k, dtype=src.dtype))
    ones = Tensor(np.ones(lead + (k, 1), dtype=src.dtype))
    q = ops.concat([ones, src], axis=-1)  # [..., K, 3]
    qt = ops.transpose(q, tuple(range(len(lead))) + (len(lead) + 1, len(lead)))
    zeros = Tensor(np.zeros(lead + (3, 3), dtype=src.dtype))
    top = ops.concat([kern, q], axis=-1)
    bottom = ops.concat([qt, zeros], axis=-1)
    return ops.concat([top, bottom], axis=-2)


def _check_cond(mat: np.ndarray) -> None:
    cond = np.linalg.cond(mat)
    worst = float(np.max(cond))
    if not np.isfinite(worst) or worst > MAX_COND:
        raise SingularTpsError(f"TPS system condition number {worst:.3g} exceeds {MAX_COND:.0e}")


def solve_coefficients(src: Tensor, dst: Tensor, reg: float = DEFAULT_REG) -> Tensor:
    """Differentiable solve; returns [..., K+3, 2] = bending weights stacked on (1, x, y) affine rows."""
    check_sources(src.data)
    mat = _system(src, reg)
    _check_cond(mat.data)
    k = src.shape[-2]
    pad = Tensor(np.zeros(dst.shape[:-2] + (3, 2), dtype=dst.dtype))
    rhs = ops.concat([dst, pad], axis=-2)
    if rhs.ndim < mat.ndim:
        rhs = ops.add(rhs, Tensor(np.zeros(mat.shape[:-2] + (k + 3, 2), dtype=dst.dtype)))
    return ops.solve(mat, rhs)


def evaluate(coef: Tensor, src: Tensor, pts: Tensor) -> Tensor:
    """Map points [..., P, 2] through the spline with sources [..., K, 2] and coef [..., K+3, 2]."""
    k = src.shape[-2]
    u = ops.tps_kernel(pts, src)  # [..., P, K]
    w = ops.getitem(coef, (Ellipsis, slice(0, k), slice(None)))
    a = ops.getitem(coef, (Ellipsis, slice(k, k + 3), slice(None)))
    ones = Tensor(np.ones(pts.shape[:-1] + (1,), dtype=pts.dtype))
    qp = ops.concat([ones, pts], axis=-1)
    return ops.add(ops.matmul(u, w), ops.matmul(qp, a))


def solve_tps(sources, targets, reg: float = 0.0) -> TpsCoefficients:
    """Fit T with T(sources[i]) = targets[i] (exact when reg == 0, smoothing otherwise)."""
    src = np.asarray(sources, dtype=np.float64)
    dst = np.asarray(targets, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or dst.shape != src.shape:
        raise ValueError(f"sources/targets must both be [K,2]; got {src.shape} and {dst.shape}")
    if reg < 0:
        raise ValueError(f"regularisation must be >= 0, got {reg}")
    with no_tape():
        coef = solve_coefficients(Tensor(src), Tensor(dst), reg).data
    k = len(src)
    a = coef[k:]  # rows: 1, x, y
    affine = np.array([[a[1, 0], a[2, 0], a[0, 0]], [a[1, 1], a[2, 1], a[0, 1]]])
    return TpsCoefficients(affine, coef[:k].copy(), src.copy())


def eval_tps(coeffs: TpsCoefficients, points) -> np.ndarray:
    """Apply fitted coefficients to a point (2,) or points [P, 2]."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not np.all(np.isfinite(pts)):
        raise ValueError("eval_tps: non-finite input point")
    aff = coeffs.affine
    out = pts @ aff[:, :2].T + aff[:, 2]
    if len(coeffs.sources):
        with no_tape():
            u = ops.tps_kernel(Tensor(pts), Tensor(coeffs.sources)).data
        out = out + u @ coeffs.weights
    return out[0] if single else out


def anchor_offsets(theta: Tensor) -> Tensor:
    """[..., 2, 5, 5] offsets -> [..., 25, 2] per-anchor (dx, dy)."""
    lead = theta.shape[:-3]
    n = len(lead)
    t = ops.reshape(theta, lead + (2, GRID_SIZE * GRID_SIZE))
    return ops.transpose(t, tuple(range(n)) + (n + 1, n))


def tps_grid(theta: Tensor, h: int, w: int, reg: float = DEFAULT_REG) -> Tensor:
    """Differentiable dense sampling grid [..., 2, h, w] from anchor offsets [..., 2, 5, 5]."""
    if h < 2 or w < 2:
        raise ValueError(f"grid needs H, W >= 2, got {h}x{w}")
    if theta.shape[-3:] != (2, GRID_SIZE, GRID_SIZE):
        raise ValueError(f"theta must end in [2,{GRID_SIZE},{GRID_SIZE}], got {theta.shape}")
    if not np.all(np.isfinite(theta.data)):
        raise SingularTpsError("non-finite anchor offsets")
    dtype = theta.dtype
    rest = rest_anchors().astype(dtype)
    src = ops.add(anchor_offsets(theta), rest)  # displaced anchors, output frame
    coef = solve_coefficients(src, Tensor(rest), reg)
    pix = identity_grid(h, w, dtype).reshape(2, h * w).T  # [HW, 2]
    mapped = evaluate(coef, src, Tensor(pix))  # [..., HW, 2]
    lead = theta.shape[:-3]
    n = len(lead)
    mapped = ops.transpose(mapped, tuple(range(n)) + (n + 1, n))
    return ops.reshape(mapped, lead + (2, h, w))


def grid_from_params(theta: TpsParams, h: int, w: int, reg: float = DEFAULT_REG) -> np.ndarray:
    """Dense [2, h, w] sampling grid for fixed parameters."""
    with no_tape():
        return tps_grid(Tensor(theta.offsets), h, w, reg).data
