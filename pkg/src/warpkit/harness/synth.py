"""Procedural try-on data: textured garments, a known TPS warp, and a simple person around them.

Everything is drawn analytically in normalised coordinates, so any frame size
works; a fixed seed reproduces every sample byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import io, personrep, tps
from ..gmm import warp_with_theta

TEXTURES = ("flat", "stripes", "checkers", "logo")
MAX_WARP = 0.15

# garment landmarks (x, y) in the product-image frame, keyed by keypoint slot
_LANDMARKS = {
    1: (0.0, -0.5),  # neck
    2: (-0.4, -0.42),  # right shoulder (image left)
    5: (0.4, -0.42),
    3: (-0.68, -0.18),  # elbows sit at the sleeve ends
    6: (0.68, -0.18),
    8: (-0.25, 0.8),  # hips at the hem
    11: (0.25, 0.8),
}

# 3x5 block glyphs for the logo texture
_GLYPHS = [
    "111101111101101",
    "110101110101110",
    "111100100100111",
    "101101111101101",
    "111010010010111",
    "111100111100111",
]


@dataclass
class SynthSample:
    name: str
    texture: str
    cloth: np.ndarray  # [3,H,W] product image c on white
    cloth_mask: np.ndarray  # [H,W]
    worn: np.ndarray  # [3,H,W] c warped by theta, before compositing
    worn_mask: np.ndarray  # [H,W] warped garment mask in {0,1}
    person: np.ndarray  # [3,H,W] person wearing the garment (also the try-on target)
    keypoints: np.ndarray  # [18,3] in the 256x192 reference frame
    body_mask: np.ndarray
    reserved_mask: np.ndarray
    theta: np.ndarray  # [2,5,5] float32-representable anchor offsets


def _coords(size):
    h, w = size
    gy, gx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    return gx, gy


def garment_shape(size) -> np.ndarray:
    """Boolean T-shirt silhouette in the product frame."""
    gx, gy = _coords(size)
    torso = (np.abs(gx) <= 0.4) & (gy >= -0.45) & (gy <= 0.8)
    # sleeves slope down from the shoulders
    sleeve = (np.abs(gx) > 0.38) & (np.abs(gx) <= 0.72) & (gy >= -0.45 + 0.35 * (np.abs(gx) - 0.4)) & (gy <= -0.1 + 0.2 * (np.abs(gx) - 0.4))
    neck = (gx / 0.17) ** 2 + ((gy + 0.47) / 0.09) ** 2 <= 1.0
    return (torso | sleeve) & ~neck


def _colour(rng, dark: bool = True) -> np.ndarray:
    c = rng.uniform(0.05, 0.55 if dark else 0.95, size=3)
    c[rng.integers(3)] = rng.uniform(0.5, 0.95)
    return c


def garment_texture(kind: str, size, rng) -> np.ndarray:
    """[3,H,W] texture field (the garment mask is applied by the caller)."""
    h, w = size
    base = _colour(rng)
    tex = np.broadcast_to(base[:, None, None], (3, h, w)).copy()
    if kind == "flat":
        return tex
    # second colour at least 0.45 away from the base in every channel
    alt = np.where(base > 0.5, base - rng.uniform(0.45, 0.5, 3), base + rng.uniform(0.45, 0.5, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    period = max(2, int(round(rng.uniform(0.04, 0.06) * w)))
    if kind == "stripes":
        coord = yy if rng.random() < 0.5 else xx
        on = (coord // period) % 2 == 1
    elif kind == "checkers":
        on = ((yy // period) + (xx // period)) % 2 == 1
    elif kind == "logo":
        # rows of 3x5 block glyphs printed over the front panel
        on = np.zeros((h, w), dtype=bool)
        cell = max(1, int(round(w / 48)))
        for y0 in range(int(h * 0.3), int(h * 0.85) - 5 * cell, 6 * cell):
            for x0 in range(int(w * 0.32), int(w * 0.68) - 3 * cell, 4 * cell):
                glyph = np.array([int(b) for b in _GLYPHS[rng.integers(len(_GLYPHS))]], dtype=bool).reshape(5, 3)
                block = np.kron(glyph, np.ones((cell, cell), dtype=bool))
                on[y0 : y0 + block.shape[0], x0 : x0 + block.shape[1]] |= block
    else:
        raise ValueError(f"unknown texture {kind!r}; expected one of {TEXTURES}")
    tex[:, on] = alt[:, None]
    return tex


def random_theta(rng) -> np.ndarray:
    """Translation + isotropic scale + small per-anchor jitter, clipped to |offset| <= 0.15."""
    rest = tps.rest_anchors()  # [25, 2] (x, y)
    t = rng.uniform(-0.07, 0.07, size=2)
    s = rng.uniform(-0.08, 0.06)
    off = t + s * rest + rng.normal(0, 0.006, size=rest.shape)
    off = np.clip(off, -MAX_WARP, MAX_WARP)
    theta = off.T.reshape(2, tps.GRID_SIZE, tps.GRID_SIZE)
    # stored checkpoints are float32, so keep theta exactly representable
    return theta.astype(np.float32).astype(np.float64)


def _inverse_map(coeffs, pts: np.ndarray, iters: int = 30) -> np.ndarray:
    """Solve T(y) = x for each point by fixed-point iteration (T is near the identity)."""
    y = pts.copy()
    for _ in range(iters):
        y = y + (pts - tps.eval_tps(coeffs, y))
    return y


def _keypoints(theta: np.ndarray, size) -> tuple[np.ndarray, np.ndarray]:
    """Keypoints in normalised person-frame coordinates plus visibility."""
    rest = tps.rest_anchors()
    src = rest + theta.reshape(2, -1).T
    coeffs = tps.solve_tps(src, rest)
    kp = np.full((personrep.N_KEYPOINTS, 2), np.nan)
    slots = sorted(_LANDMARKS)
    kp[slots] = _inverse_map(coeffs, np.array([_LANDMARKS[i] for i in slots]))
    scale = np.linalg.norm(kp[5] - kp[2]) / 0.8
    neck = kp[1]
    kp[0] = neck + np.array([0.0, -0.2]) * scale  # nose
    kp[14] = kp[0] + np.array([-0.05, -0.04]) * scale
    kp[15] = kp[0] + np.array([0.05, -0.04]) * scale
    kp[16] = kp[0] + np.array([-0.11, -0.01]) * scale
    kp[17] = kp[0] + np.array([0.11, -0.01]) * scale
    kp[4] = kp[3] + (kp[3] - kp[2]) * 0.9  # wrists continue the upper arm
    kp[7] = kp[6] + (kp[6] - kp[5]) * 0.9
    for hip, knee, ankle in ((8, 9, 10), (11, 12, 13)):
        kp[knee] = kp[hip] + np.array([0.0, 0.7]) * scale
        kp[ankle] = kp[knee] + np.array([0.0, 0.7]) * scale
    vis = ((np.abs(kp) <= 1.0).all(1)).astype(np.float64)
    return kp, vis


def _segment_mask(gx, gy, a, b, radius) -> np.ndarray:
    d = b - a
    t = np.clip(((gx - a[0]) * d[0] + (gy - a[1]) * d[1]) / max(float(d @ d), 1e-12), 0, 1)
    px, py = a[0] + t * d[0], a[1] + t * d[1]
    return (gx - px) ** 2 + (gy - py) ** 2 <= radius**2


def make_sample(name: str, texture: str, size, rng) -> SynthSample:
    h, w = size
    shape = garment_shape(size)
    cloth = np.where(shape[None], garment_texture(texture, size, rng), 1.0)
    theta = random_theta(rng)
    worn = warp_with_theta(cloth, theta)
    alpha = warp_with_theta(shape[None].astype(np.float64), theta)[0]
    worn_mask = (alpha >= 0.5).astype(np.float64)

    kp, vis = _keypoints(theta, size)
    gx, gy = _coords(size)
    scale = np.linalg.norm(kp[5] - kp[2]) / 0.8
    skin = np.array([0.87, 0.68, 0.55]) * rng.uniform(0.7, 1.05)
    hair = np.array([0.25, 0.17, 0.1]) * rng.uniform(0.4, 1.6)
    pants = _colour(rng) * 0.6
    bg = np.full(3, rng.uniform(0.82, 0.97))

    head_c = kp[0] + np.array([0.0, 0.02]) * scale
    head = ((gx - head_c[0]) / (0.16 * scale)) ** 2 + ((gy - head_c[1]) / (0.2 * scale)) ** 2 <= 1
    hair_m = head & (gy < head_c[1] - 0.08 * scale)
    neck_m = (np.abs(gx - kp[1][0]) < 0.07 * scale) & (gy > head_c[1]) & (gy < kp[1][1] + 0.05)
    arms = _segment_mask(gx, gy, kp[3], kp[4], 0.08 * scale) | _segment_mask(gx, gy, kp[6], kp[7], 0.08 * scale)
    arms |= _segment_mask(gx, gy, kp[2], kp[3], 0.09 * scale) | _segment_mask(gx, gy, kp[5], kp[6], 0.09 * scale)
    legs = (gy > (kp[8][1] + kp[11][1]) / 2 - 0.05) & (np.abs(gx - (kp[8][0] + kp[11][0]) / 2) < 0.33 * scale)

    img = np.broadcast_to(bg[:, None, None], (3, h, w)).copy()
    for m, col in ((legs, pants), (arms | neck_m, skin), (head, skin), (hair_m, hair)):
        img[:, m] = col[:, None]
    person = alpha[None] * worn + (1 - alpha[None]) * img
    body = (legs | arms | neck_m | head | (worn_mask > 0)).astype(np.float64)
    reserved = head.astype(np.float64)

    px = np.stack([(kp[:, 0] + 1) / 2 * (w - 1), (kp[:, 1] + 1) / 2 * (h - 1)], axis=1)
    ref = px * np.array([personrep.REF_SIZE[1] / w, personrep.REF_SIZE[0] / h])
    ref = np.nan_to_num(ref) * vis[:, None]
    keypoints = np.concatenate([ref, vis[:, None]], axis=1)
    return SynthSample(name, texture, cloth, shape.astype(np.float64), worn, worn_mask, person, keypoints, body, reserved, theta)


def gen_synth_dataset(n: int, seed: int = 0, size: tuple[int, int] = (64, 48)) -> list[SynthSample]:
    """``n`` samples cycling through the texture kinds; reproducible under ``seed``."""
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    seqs = np.random.SeedSequence(seed).spawn(n)
    return [make_sample(f"{i:05d}", TEXTURES[i % len(TEXTURES)], size, np.random.default_rng(s)) for i, s in enumerate(seqs)]


# ---------------------------------------------------------------- on-disk layout

SUBDIRS = ("cloth", "cloth_mask", "cloth_worn", "cloth_worn_mask", "image", "body_mask", "reserved_mask", "keypoints", "warp")


def save_dataset(samples: list[SynthSample], root) -> None:
    root = Path(root)
    for s in samples:
        io.save_image(s.cloth, root / "cloth" / f"{s.name}.png")
        io.save_mask(s.cloth_mask, root / "cloth_mask" / f"{s.name}.png")
        io.save_image(s.worn, root / "cloth_worn" / f"{s.name}.png")
        io.save_mask(s.worn_mask, root / "cloth_worn_mask" / f"{s.name}.png")
        io.save_image(s.person, root / "image" / f"{s.name}.png")
        io.save_mask(s.body_mask, root / "body_mask" / f"{s.name}.png")
        io.save_mask(s.reserved_mask, root / "reserved_mask" / f"{s.name}.png")
        io.save_keypoints(s.keypoints, root / "keypoints" / f"{s.name}.json")
        io.save_ckpt({"theta": s.theta}, root / "warp" / f"{s.name}.ckpt")
    with open(root / "pairs.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{s.name} {s.texture}\n" for s in samples)


@dataclass
class Arrays:
    """Stacked training arrays for a dataset (float32, NCHW)."""

    names: list[str]
    person_rep: np.ndarray  # [N,22,H,W]
    cloth: np.ndarray  # [N,3,H,W]
    worn: np.ndarray  # [N,3,H,W] warped garment target for the matching stage
    worn_mask: np.ndarray  # [N,H,W]
    target: np.ndarray  # [N,3,H,W] person image I_t

    def __len__(self):
        return len(self.names)


def person_inputs(s: SynthSample) -> personrep.PersonInputs:
    return personrep.PersonInputs(s.person, s.keypoints, s.body_mask, s.reserved_mask)


def to_arrays(samples: list[SynthSample], size=None) -> Arrays:
    size = size or samples[0].cloth.shape[1:]
    reps = [personrep.assemble(person_inputs(s), size) for s in samples]
    f32 = lambda xs: np.stack(xs).astype(np.float32)  # noqa: E731
    return Arrays(
        [s.name for s in samples],
        f32(reps),
        f32([personrep.resize_bilinear(s.cloth, size) for s in samples]),
        f32([personrep.resize_bilinear(s.worn, size) for s in samples]),
        f32([personrep.resize_mask(s.worn_mask, size) for s in samples]),
        f32([personrep.resize_bilinear(s.person, size) for s in samples]),
    )


def list_names(root) -> list[str]:
    root = Path(root)
    pairs = root / "pairs.txt"
    if pairs.exists():
        return [ln.split()[0] for ln in pairs.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return sorted(p.stem for p in (root / "cloth").glob("*.png"))


def load_sample(root, name: str, size=None) -> SynthSample:
    root = Path(root)
    theta_file = root / "warp" / f"{name}.ckpt"
    theta = io.load_ckpt(theta_file)["theta"].astype(np.float64) if theta_file.exists() else np.zeros((2, 5, 5))
    return SynthSample(
        name,
        "",
        io.load_image(root / "cloth" / f"{name}.png", size),
        io.load_mask(root / "cloth_mask" / f"{name}.png", size),
        io.load_image(root / "cloth_worn" / f"{name}.png", size),
        io.load_mask(root / "cloth_worn_mask" / f"{name}.png", size),
        io.load_image(root / "image" / f"{name}.png", size),
        io.load_keypoints(root / "keypoints" / f"{name}.json"),
        io.load_mask(root / "body_mask" / f"{name}.png", size),
        io.load_mask(root / "reserved_mask" / f"{name}.png", size),
        theta,
    )


def load_dataset(root, size=(64, 48)) -> Arrays:
    return to_arrays([load_sample(root, n, size) for n in list_names(root)], size)
