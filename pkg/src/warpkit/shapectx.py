"""Shape-context matching baseline: boundary sampling, log-polar histograms, assignment, TPS fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from . import kernels, tps
from .diffcore.tensor import Tensor, no_tape
from .sampler import PaddingMode, grid_sample

N_RADIAL = 5
N_ANGULAR = 12
R_INNER = 0.125
R_OUTER = 2.0
CHI2_EPS = 1e-9
DEFAULT_POINTS = 96
DEFAULT_REG = 1e-2
PASSES = 2


@dataclass
class ShapeContextDescriptor:
    histogram: np.ndarray  # [5, 12], sums to 1 or is all zero


def largest_component(mask: np.ndarray) -> np.ndarray:
    fg = np.asarray(mask) > 0.5 if np.asarray(mask).dtype != bool else np.asarray(mask)
    labels, n = ndimage.label(fg, structure=np.ones((3, 3)))
    if n == 0:
        raise ValueError("mask has no foreground pixels")
    if n == 1:
        return labels == 1
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def extract_boundary(mask, n: int = DEFAULT_POINTS) -> np.ndarray:
    """[n, 2] points (x, y) in pixels, equally spaced in arc length along the outer contour.

    The contour is the clockwise Moore trace of the largest 8-connected
    component; the first sample is the contour's top-left start pixel.
    """
    if n < 4:
        raise ValueError(f"need at least 4 boundary points, got {n}")
    comp = largest_component(mask)
    rc = kernels.trace_contour(np.ascontiguousarray(comp, dtype=np.uint8))
    pts = rc[:, ::-1].astype(np.float64)  # (x, y)
    closed = np.vstack([pts, pts[:1]])
    seg = np.sqrt((np.diff(closed, axis=0) ** 2).sum(1))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] == 0:
        return np.repeat(pts[:1], n, axis=0)
    t = np.arange(n) * arc[-1] / n
    x = np.interp(t, arc, closed[:, 0])
    y = np.interp(t, arc, closed[:, 1])
    return np.stack([x, y], axis=1)


def _mean_distance(points: np.ndarray) -> float:
    d = np.sqrt(((points[:, None] - points[None]) ** 2).sum(-1))
    k = len(points)
    return float(d.sum() / (k * (k - 1)))


def _histograms(points: np.ndarray, mean_dist: float | None = None) -> np.ndarray:
    """[K, 5, 12] normalised log-polar histograms for every point of the set."""
    pts = np.asarray(points, dtype=np.float64)
    k = len(pts)
    if k < 2:
        raise ValueError("shape contexts need at least 2 points")
    dbar = mean_dist if mean_dist is not None else _mean_distance(pts)
    diff = pts[None] - pts[:, None]  # diff[i, j] = p_j - p_i
    r = np.sqrt((diff**2).sum(-1))
    if dbar <= 0:
        return np.zeros((k, N_RADIAL, N_ANGULAR))
    edges = np.geomspace(R_INNER, R_OUTER, N_RADIAL + 1) * dbar
    rbin = np.searchsorted(edges, r, side="right") - 1
    rbin[np.isclose(r, edges[-1], rtol=1e-12, atol=0)] = N_RADIAL - 1
    theta = np.mod(np.arctan2(diff[..., 1], diff[..., 0]), 2 * np.pi)
    # nudge angles sitting on a bin edge up to the bin they open
    abin = np.floor(theta * N_ANGULAR / (2 * np.pi) + 1e-9).astype(int) % N_ANGULAR
    keep = (rbin >= 0) & (rbin < N_RADIAL) & ~np.eye(k, dtype=bool)
    hist = np.zeros((k, N_RADIAL * N_ANGULAR))
    rows = np.broadcast_to(np.arange(k)[:, None], (k, k))
    np.add.at(hist, (rows[keep], (rbin * N_ANGULAR + abin)[keep]), 1.0)
    tot = hist.sum(1, keepdims=True)
    hist = np.divide(hist, tot, out=np.zeros_like(hist), where=tot > 0)
    return hist.reshape(k, N_RADIAL, N_ANGULAR)


def descriptor(points, index: int) -> ShapeContextDescriptor:
    """Log-polar histogram of where the other points sit relative to ``points[index]``.

    Radial edges are log-spaced over [0.125, 2] times the mean pairwise distance;
    angles are measured in the image frame, so the descriptor is translation and
    scale invariant but not rotation invariant.
    """
    pts = np.asarray(points, dtype=np.float64)
    return ShapeContextDescriptor(_histograms(pts)[index])


def chi2_cost(ha: np.ndarray, hb: np.ndarray, eps: float = CHI2_EPS) -> np.ndarray:
    """[Ka, Kb] chi-squared distances between flattened histogram sets."""
    a = ha.reshape(len(ha), -1)[:, None]
    b = hb.reshape(len(hb), -1)[None]
    return 0.5 * ((a - b) ** 2 / (a + b + eps)).sum(-1)


def assign(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal one-to-one assignment; returns (col index per row, total cost)."""
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=int)
    perm[rows] = cols
    return perm, float(cost[rows, cols].sum())


def to_normalized(points: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    return np.stack([2 * points[:, 0] / (w - 1) - 1, 2 * points[:, 1] / (h - 1) - 1], axis=1)


@dataclass
class MatchResult:
    coeffs: tps.TpsCoefficients
    dst_points: np.ndarray  # [n, 2] normalised boundary samples of the destination mask
    src_points: np.ndarray  # [n, 2] their matched source points after the last pass
    cost: float


def match(mask_src, mask_dst, n: int = DEFAULT_POINTS, reg: float = DEFAULT_REG, passes: int = PASSES) -> MatchResult:
    """Fit a TPS mapping destination-frame points onto the source mask's boundary.

    The returned map uses the sampling convention of the learned warps: applied to a
    pixel of the destination frame it says where to read in the source image.
    Each pass after the first re-describes the destination boundary after mapping
    it through the current fit and re-solves the assignment.
    """
    ms, md = np.asarray(mask_src), np.asarray(mask_dst)
    p = to_normalized(extract_boundary(ms, n), ms.shape)
    q = to_normalized(extract_boundary(md, n), md.shape)
    hp = _histograms(p)
    moved = q
    coeffs = None
    total = 0.0
    for _ in range(passes):
        perm, total = assign(chi2_cost(_histograms(moved), hp))
        coeffs = tps.solve_tps(q, p[perm], reg=reg)
        moved = tps.eval_tps(coeffs, q)
    return MatchResult(coeffs, q, p[perm], total)


def match_and_fit(mask_src, mask_dst, n: int = DEFAULT_POINTS, reg: float = DEFAULT_REG) -> tps.TpsCoefficients:
    return match(mask_src, mask_dst, n, reg).coeffs


def dense_grid(coeffs: tps.TpsCoefficients, h: int, w: int) -> np.ndarray:
    """[2, h, w] sampling grid obtained by evaluating a fitted TPS at every pixel."""
    pix = tps.identity_grid(h, w).reshape(2, -1).T
    return tps.eval_tps(coeffs, pix).T.reshape(2, h, w)


def warp_image(image: np.ndarray, coeffs: tps.TpsCoefficients) -> np.ndarray:
    """Warp a [C,H,W] image with a fitted TPS (border padding)."""
    img = np.asarray(image, dtype=np.float64)
    grid = dense_grid(coeffs, *img.shape[-2:])
    with no_tape():
        return grid_sample(Tensor(img), Tensor(grid), PaddingMode.BORDER).data


def sleeve_masks(size: tuple[int, int] = (256, 192), long_len: float = 0.45, short_len: float = 0.12):
    """Garment masks with long and short sleeves: a torso block with two arm strips."""
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    torso = (np.abs(xx - 0.5) < 0.18) & (yy > 0.2) & (yy < 0.85)

    def sleeves(length):
        band = (yy > 0.22) & (yy < 0.22 + 0.09)
        left = band & (xx < 0.32) & (xx > 0.32 - length / 1.6)
        right = band & (xx > 0.68) & (xx < 0.68 + length / 1.6)
        return left | right

    return (torso | sleeves(long_len)).astype(np.float64), (torso | sleeves(short_len)).astype(np.float64)


def thin_band_exhibit(size: tuple[int, int] = (256, 192), n: int = DEFAULT_POINTS, reg: float = DEFAULT_REG) -> dict:
    """Warp a long-sleeve garment mask onto a short-sleeve target and measure what survives.

    Reports the warped-mask area and IoU with the target plus the thinnest
    sleeve row-extent; a collapsed sleeve shows up as a thin band that is
    much narrower than the source sleeve.
    """
    long_mask, short_mask = sleeve_masks(size)
    coeffs = match_and_fit(long_mask, short_mask, n, reg)
    warped = warp_image(long_mask[None], coeffs)[0] > 0.5
    target = short_mask > 0.5
    inter = float((warped & target).sum())
    union = float((warped | target).sum())
    h, w = size
    cols = slice(0, int(0.3 * w))
    heights = warped[:, cols].sum(0)
    src_heights = long_mask[:, cols].sum(0)
    return {
        "iou": inter / union if union else 0.0,
        "area_ratio": float(warped.sum()) / float(target.sum()),
        "sleeve_min_height": int(heights[heights > 0].min()) if (heights > 0).any() else 0,
        "source_sleeve_height": int(src_heights[src_heights > 0].min()),
    }
