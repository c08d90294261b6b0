"""Image metrics and perturbations used by the experiments."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def tv_norm(image: np.ndarray) -> float:
    """Anisotropic total variation with forward differences, divided by H*W.

    Sums |dx| and |dy| over every channel of a [C,H,W] (or [H,W]) image.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    h, w = img.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"tv_norm needs H, W >= 2, got {h}x{w}")
    dx = np.abs(np.diff(img, axis=-1)).sum()
    dy = np.abs(np.diff(img, axis=-2)).sum()
    return float((dx + dy) / (h * w))


def split_tv(items: Sequence[tuple[str, float]], k: int = 50) -> tuple[list[str], list[str]]:
    """(LARGE, SMALL): the k names with largest / smallest TV.

    Both halves come from one total order on (tv, name), so equal values can
    never land in both lists; LARGE is listed from the largest down.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(items) < 2 * k:
        raise ValueError(f"split_tv needs at least {2 * k} items for k={k}, got {len(items)}")
    asc = [name for name, _ in sorted(items, key=lambda it: (it[1], it[0]))]
    small = asc[:k]
    large = asc[::-1][:k]
    return large, small


def perturb(image: np.ndarray, radius: int, seed=None) -> np.ndarray:
    """Shift [C,H,W] by an integer (dx, dy) uniform on the L-inf ball of ``radius``; edges replicate."""
    if radius < 0:
        raise ValueError(f"perturbation radius must be >= 0, got {radius}")
    if radius == 0:
        return np.array(image, copy=True)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dx, dy = (int(v) for v in rng.integers(-radius, radius + 1, size=2))
    return shift(image, dx, dy)


def shift(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """out[..., y, x] = image[..., clip(y - dy), clip(x - dx)]."""
    h, w = image.shape[-2:]
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return image[..., ys[:, None], xs[None, :]]
