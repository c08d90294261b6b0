"""File formats: PNG images and masks, keypoint JSON, key = value configs, CPWK checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .personrep import N_KEYPOINTS, resize_bilinear, resize_mask
from .tps import TpsCoefficients

log = logging.getLogger(__name__)

MAGIC = b"CPWK"
VERSION = 1


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------- images


def load_image(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """[3, H, W] float64 in [0, 1] from an 8-bit RGB or grayscale PNG; optional bilinear resize."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I", "F") or im.mode.endswith("16"):
            raise ValueError(f"{path}: unsupported bit depth (mode {im.mode}); expected 8-bit RGB or grayscale")
        if im.mode not in ("RGB", "RGBA", "L", "LA", "P", "1"):
            raise ValueError(f"{path}: unsupported image mode {im.mode}")
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    img = arr.transpose(2, 0, 1)
    if size is not None and img.shape[1:] != tuple(size):
        img = np.clip(resize_bilinear(img, size), 0.0, 1.0)
    return img


def save_image(image, path) -> None:
    """Write [3,H,W] or [H,W] values in [0, 1] as an 8-bit PNG (rounded, clipped)."""
    arr = np.asarray(image, dtype=np.float64)
    q = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)
    if q.ndim == 3 and q.shape[0] == 1:
        q = q[0]
    im = Image.fromarray(q if q.ndim == 2 else q.transpose(1, 2, 0), mode="L" if q.ndim == 2 else "RGB")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    im.save(path, format="PNG")


def load_mask(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """[H, W] in {0, 1}: grayscale >= 128 is foreground."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such mask: {path}")
    with Image.open(path) as im:
        g = np.asarray(im.convert("L"), dtype=np.uint8)
    m = (g >= 128).astype(np.float64)
    if size is not None and m.shape != tuple(size):
        m = resize_mask(m, size)
    return m


def save_mask(mask, path) -> None:
    save_image((np.asarray(mask) > 0.5).astype(np.float64), path)


# ---------------------------------------------------------------- keypoints


def load_keypoints(path) -> np.ndarray:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    kp = np.asarray(doc.get("keypoints"), dtype=np.float64)
    if kp.shape != (N_KEYPOINTS, 3):
        raise ValueError(f"{path}: expected {N_KEYPOINTS} [x, y, v] keypoints, got shape {kp.shape}")
    return kp


def save_keypoints(keypoints, path) -> None:
    kp = np.asarray(keypoints, dtype=np.float64)
    rows = [[float(x), float(y), int(v)] for x, y, v in kp]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"keypoints": rows}, fh)
        fh.write("\n")


# ---------------------------------------------------------------- config


class Config:
    """Flat ``key = value`` settings with typed getters.

    Blank lines and ``#`` comments are skipped; a repeated key keeps its last
    value and logs a warning.
    """

    def __init__(self, values: Mapping[str, str] | None = None):
        self.values: dict[str, str] = dict(values or {})

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "Config":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ValueError(f"{source}:{lineno}: empty key")
            if key in values:
                log.warning("%s:%d: duplicate key %r, keeping the later value", source, lineno, key)
            values[key] = value
        return cls(values)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def _typed(self, key, default, conv, kind):
        if key not in self.values:
            return default
        try:
            return conv(self.values[key])
        except ValueError:
            raise ValueError(f"config key {key!r}: cannot parse {self.values[key]!r} as {kind}") from None

    def get_int(self, key: str, default: int | None = None) -> int | None:
        return self._typed(key, default, int, "int")

    def get_float(self, key: str, default: float | None = None) -> float | None:
        return self._typed(key, default, float, "float")

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        def conv(s):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)

        return self._typed(key, default, conv, "bool")

    def get_list(self, key: str, default=None, conv=str) -> list | None:
        if key not in self.values:
            return default
        return self._typed(key, default, lambda s: [conv(x.strip()) for x in s.split(",") if x.strip()], "list")

    def get_size(self, key: str = "size", default: tuple[int, int] = (64, 48)) -> tuple[int, int]:
        """``HxW`` (e.g. ``64x48``)."""
        if key not in self.values:
            return default
        try:
            h, w = (int(v) for v in self.values[key].lower().split("x"))
        except ValueError:
            raise ValueError(f"config key {key!r}: expected HxW, got {self.values[key]!r}") from None
        return h, w


# ---------------------------------------------------------------- checkpoints


def save_ckpt(tensors: Mapping[str, np.ndarray], path) -> None:
    """Write named tensors as CPWK v1: little-endian header, float32 row-major payloads."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f4")  # ascontiguousarray would promote rank 0 to rank 1
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes(order="C"))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated at byte offset {self.pos} reading {what} "
                f"({n} bytes needed, {len(self.buf) - self.pos} left)"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_ckpt(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    count = r.u32("tensor count")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for i in range(count):
        name = r.take(r.u32(f"name length of tensor {i}"), f"name of tensor {i}").decode("utf-8")
        rank = r.u32(f"rank of {name!r}")
        shape = tuple(r.u32(f"extent {d} of {name!r}") for d in range(rank))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * n, f"payload of {name!r}"), dtype="<f4").astype(np.float32)
        out[name] = data.reshape(shape)
    if r.pos != len(r.buf):
        log.warning("%s: %d trailing bytes after the last tensor", path, len(r.buf) - r.pos)
    return out


def tps_to_tensors(coeffs) -> dict[str, np.ndarray]:
    return {"tps.affine": coeffs.affine, "tps.weights": coeffs.weights, "tps.sources": coeffs.sources}


def tensors_to_tps(tensors) -> TpsCoefficients:
    return TpsCoefficients(*(np.asarray(tensors[k], dtype=np.float64) for k in ("tps.affine", "tps.weights", "tps.sources")))


# ---------------------------------------------------------------- CSV


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """UTF-8 with LF endings; floats are written in shortest round-trip form."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_loss_csv(path, losses) -> None:
    write_csv(path, ["step", "loss"], [[i, float(v)] for i, v in enumerate(losses)])
