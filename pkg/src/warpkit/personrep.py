"""Clothing-agnostic person representation: pose blocks, coarse body shape, reserved RGB."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_KEYPOINTS = 18
N_CHANNELS = N_KEYPOINTS + 1 + 3
REF_SIZE = (256, 192)
REF_BLOCK = 11
COARSE_SIZE = (16, 12)

# slot order of the 18-point pose convention; the index is what matters
KEYPOINT_NAMES = (
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
)


def block_size(size: tuple[int, int]) -> int:
    """Odd pose-block side for a frame, 11 at 256 rows and scaled with height otherwise."""
    b = int(round(REF_BLOCK * size[0] / REF_SIZE[0]))
    return max(1, b | 1)


def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """[n_out, n_in] bilinear weights with half-pixel centres and edge clamping."""
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    t = pos - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1 - t)
    np.add.at(m, (np.arange(n_out), hi), t)
    return m


def _area_matrix(n_out: int, n_in: int) -> np.ndarray:
    """[n_out, n_in] box-filter weights: each output cell averages the input span it covers."""
    edges = np.arange(n_out + 1) * n_in / n_out
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_in)[None]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0, None)
    return overlap / overlap.sum(1, keepdims=True)


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Separable bilinear resize of [..., H, W]; a no-op copy at equal size."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if (h, w) == tuple(size):
        return img.copy()
    ry, rx = _resize_matrix(size[0], h), _resize_matrix(size[1], w)
    return np.einsum("ih,...hw,jw->...ij", ry, img, rx)


def resize_area(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    ay, ax = _area_matrix(size[0], img.shape[-2]), _area_matrix(size[1], img.shape[-1])
    return np.einsum("ih,...hw,jw->...ij", ay, img, ax)


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return (resize_bilinear(np.asarray(mask, dtype=np.float64), size) >= 0.5).astype(np.float64)


def pose_heatmap(keypoints, size: tuple[int, int] = REF_SIZE, block: int | None = None) -> np.ndarray:
    """[18, H, W] with a block of ones around each visible keypoint, clipped at the frame.

    ``keypoints`` is 18 rows of (x, y, v) in pixels of ``size``.
    """
    kp = np.asarray(keypoints, dtype=np.float64)
    if kp.shape != (N_KEYPOINTS, 3):
        raise ValueError(f"expected {N_KEYPOINTS} keypoints of (x, y, v), got shape {kp.shape}")
    h, w = size
    block = block or block_size(size)
    r = block // 2
    out = np.zeros((N_KEYPOINTS, h, w))
    for i, (x, y, v) in enumerate(kp):
        if v <= 0 or not (np.isfinite(x) and np.isfinite(y)):
            continue
        cx, cy = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        y0, y1 = max(cy - r, 0), min(cy + r + 1, h)
        x0, x1 = max(cx - r, 0), min(cx + r + 1, w)
        if y0 < y1 and x0 < x1:
            out[i, y0:y1, x0:x1] = 1.0
    return out


def body_shape_channel(body_mask, size: tuple[int, int] | None = None) -> np.ndarray:
    """[1, H, W] blurred silhouette: box-downscale to 16x12, then bilinear back up."""
    m = np.asarray(body_mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"body mask must be [H,W], got {m.shape}")
    if not (m > 0).any():
        raise ValueError("body mask is empty")
    size = size or m.shape
    coarse = resize_area(m, COARSE_SIZE)
    return np.clip(resize_bilinear(coarse, size), 0.0, 1.0)[None]


@dataclass
class PersonInputs:
    """Source image [3,H,W] in [0,1], 18 keypoints (x, y, v) in the 256x192 frame, and two binary masks."""

    image: np.ndarray
    keypoints: np.ndarray
    body_mask: np.ndarray
    reserved_mask: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"person image must be [3,H,W], got {self.image.shape}")
        if self.keypoints.shape != (N_KEYPOINTS, 3):
            raise ValueError(f"need exactly {N_KEYPOINTS} keypoint slots, got {self.keypoints.shape}")
        hw = self.image.shape[1:]
        for name in ("body_mask", "reserved_mask"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.shape != hw:
                raise ValueError(f"{name} is {m.shape}, image is {hw}")
            setattr(self, name, (m >= 0.5).astype(np.float64))


def assemble(inputs: PersonInputs, size: tuple[int, int] = REF_SIZE) -> np.ndarray:
    """[22, H, W] map: 18 pose channels, 1 body-shape channel, 3 reserved-region RGB channels."""
    scale = np.array([size[1] / REF_SIZE[1], size[0] / REF_SIZE[0], 1.0])
    pose = pose_heatmap(inputs.keypoints * scale, size)
    shape = body_shape_channel(resize_mask(inputs.body_mask, size), size)
    reserved = resize_mask(inputs.reserved_mask, size)
    # mask before resizing so pixels outside the region cannot leak in through interpolation
    rgb = np.clip(resize_bilinear(inputs.image * inputs.reserved_mask, size), 0.0, 1.0) * reserved
    return np.concatenate([pose, shape, rgb], axis=0)
