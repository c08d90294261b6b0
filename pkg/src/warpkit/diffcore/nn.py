"""Parameter containers and the conv blocks shared by the GMM and TOM networks."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .tensor import Tensor


class ParamStore:
    """Ordered name -> Tensor map with seeded uniform(+-sqrt(1/fan_in)) init."""

    def __init__(self, seed: int = 0, dtype=np.float32, gain: float = 1.0):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.gain = gain
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int, scale: float = 1.0) -> Tensor:
        bound = scale * self.gain * np.sqrt(1.0 / fan_in)
        data = self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        return self.add(name, data)

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape, dtype=self.dtype))

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def conv(self, name: str, c_in: int, c_out: int, k: int = 3) -> tuple[Tensor, Tensor]:
        fan_in = c_in * k * k
        w = self.uniform(f"{name}.weight", (c_out, c_in, k, k), fan_in)
        b = self.uniform(f"{name}.bias", (c_out,), fan_in)
        return w, b

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def named(self) -> "OrderedDict[str, Tensor]":
        return self.params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(t.dtype)

    def astype(self, dtype) -> None:
        self.dtype = dtype
        for t in self.params.values():
            t.data = t.data.astype(dtype)


def conv_block(x: Tensor, w: Tensor, b: Tensor, stride: int, norm: bool = True, act: bool = True) -> Tensor:
    """conv(k, pad=k//2) -> instance norm -> leaky ReLU(0.2).

    Normalisation is skipped on 1-pixel maps, where per-channel variance is undefined.
    """
    k = w.shape[-1]
    y = ops.conv2d(x, w, b, stride=stride, pad=k // 2)
    if norm and y.shape[-1] * y.shape[-2] >= 2:
        y = ops.instance_norm(y)
    if act:
        y = ops.leaky_relu(y, 0.2)
    return y
