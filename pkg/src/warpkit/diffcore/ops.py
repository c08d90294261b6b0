"""Differentiable primitives.

Each primitive computes its forward value with numpy and, when a tape is
active and an operand needs gradients, records a closure holding the saved
values its adjoint rule needs. Channel-first layout throughout: images are
[C,H,W] or batched [N,C,H,W].
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from .tensor import Tensor, as_tensor, record

IN_EPS = 1e-5


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return record(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return record(out, (a, b), bw)


def neg(x: Tensor) -> Tensor:
    return record(-x.data, (x,), lambda g: (-g,))


def abs(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return record(np.abs(x.data), (x,), lambda g: (g * s,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return record(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return record(out, (x,), lambda g: (g * 0.5 / out,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return record(xd * xd, (x,), lambda g: (2 * g * xd,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(xd.dtype)
    return record(out, (x,), lambda g: (g * out * (1 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record(out, (x,), lambda g: (g * (1 - out * out),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    pos = xd > 0
    scale = np.where(pos, 1.0, slope).astype(xd.dtype)
    return record(xd * scale, (x,), lambda g: (g * scale,))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def l1_loss(a: Tensor, b) -> Tensor:
    """Mean absolute difference."""
    return mean(abs(sub(a, b)))


# ---------------------------------------------------------------- shape

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def astype(x: Tensor, dtype) -> Tensor:
    old = x.dtype
    if old == np.dtype(dtype):
        return x
    return record(x.data.astype(dtype), (x,), lambda g: (g.astype(old),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        if _fancy(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return record(np.array(x.data[index]), (x,), bw)


def _fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return record(out, tuple(tensors), bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"concat_channels: spatial/batch dims differ: {a.shape} vs {b.shape}")
    return concat([a, b], axis=a.ndim - 3)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    if x.shape[-2] == h and x.shape[-1] == w:
        return x
    return getitem(x, (Ellipsis, slice(0, h), slice(0, w)))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return record(ad @ bd, (a, b), bw)


def solve(a: Tensor, b: Tensor) -> Tensor:
    """X with A X = B (batched over leading axes), via LU with partial pivoting."""
    ad, bd = a.data, b.data
    x = np.linalg.solve(ad, bd)

    def bw(g):
        gb = np.linalg.solve(np.swapaxes(ad, -1, -2), g)
        ga = -gb @ np.swapaxes(x, -1, -2) if a.requires_grad else None
        return ga, gb

    return record(x, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x [N,F_in] @ weight[F_out,F_in]^T + bias."""
    return add(matmul(x, transpose(weight, (1, 0))), bias)


# ---------------------------------------------------------------- image ops

def _as4d(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected [C,H,W] or [N,C,H,W], got rank {x.ndim}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x [C_in,H,W] or [N,C_in,H,W] with weight [C_out,C_in,k,k]."""
    if weight.ndim != 4:
        raise ValueError(f"weight must be [C_out,C_in,k,k], got rank {weight.ndim}")
    co, ci, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square and odd, got {k}x{k2}")
    if stride < 1 or pad < 0:
        raise ValueError(f"bad stride/pad {stride}/{pad}")
    x4, squeeze = _as4d(x)
    n, c, h, w = x4.shape
    if c != ci:
        raise ValueError(f"input channel dimension C_in={c} does not match weight C_in={ci}")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"bias dimension {bias.shape} does not match C_out={co}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"output height/width {ho}x{wo} < 1 for input {h}x{w}, k={k}, pad={pad}")

    xd = x4.data
    if weight.dtype != xd.dtype:
        raise ValueError(f"dtype mismatch: input {xd.dtype}, weight {weight.dtype}")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hp, wp = xp.shape[2:]
    cols = kernels.im2col(np.ascontiguousarray(xp), k, stride, ho, wo)
    wmat = weight.data.reshape(co, ci * k * k)
    out = wmat @ cols  # [N, co, ho*wo]
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, co, ho, wo)

    def bw(g):
        g2 = g.reshape(n, co, ho * wo)
        gx = gw = gb = None
        if x4.requires_grad:
            gcols = wmat.T @ g2
            gxp = kernels.col2im(gcols, c, hp, wp, k, stride, ho, wo)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    inputs = (x4, weight) if bias is None else (x4, weight, bias)
    res = record(out, inputs, bw if bias is not None else (lambda g: bw(g)[:2]))
    return reshape(res, res.shape[1:]) if squeeze else res


def instance_norm(x: Tensor, eps: float = IN_EPS) -> Tensor:
    """Per-sample, per-channel normalisation over H,W; no affine parameters."""
    h, w = x.shape[-2:]
    if h * w < 2:
        raise ValueError(f"instance_norm needs H*W >= 2 per channel, got {h}x{w}")
    xd = x.data
    mu = xd.mean(axis=(-2, -1), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(-2, -1), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=(-2, -1), keepdims=True)
        gxm = (g * xhat).mean(axis=(-2, -1), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return record(xhat.astype(xd.dtype), (x,), bw)


def nearest_upsample2x(x: Tensor) -> Tensor:
    xd = x.data
    out = xd.repeat(2, axis=-2).repeat(2, axis=-1)

    def bw(g):
        s = g.shape
        g = g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2))
        return (g.sum(axis=(-3, -1)),)

    return record(out, (x,), bw)


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-6) -> Tensor:
    """x / sqrt(sum(x^2, axis) + eps)."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True) + eps)
    out = xd / norm

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - out * dot) / norm,)

    return record(out, (x,), bw)


def tps_kernel(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise radial kernel U(r) = r^2 log r^2 between point sets a [...,M,2] and b [...,K,2]."""
    ad, bd = a.data, b.data
    diff = ad[..., :, None, :] - bd[..., None, :, :]
    d2 = (diff * diff).sum(-1)
    pos = d2 > 0
    safe = np.where(pos, d2, 1.0)
    logd = np.log(safe)
    out = np.where(pos, d2 * logd, 0.0).astype(ad.dtype)

    def bw(g):
        # dU/d(d2) = log d2 + 1; the product with d(d2)/dx = 2 diff vanishes at d2 -> 0
        coef = np.where(pos, g * (logd + 1.0), 0.0)[..., None] * 2.0 * diff
        ga = _unbroadcast(coef.sum(-2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-coef.sum(-3), bd.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), bw)
