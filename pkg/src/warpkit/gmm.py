"""Geometric matching: feature extractors, correlation, TPS regressor, L1 training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tps
from .diffcore import ops
from .diffcore.nn import ParamStore, conv_block
from .diffcore.optim import AdamState, adam_step
from .diffcore.tensor import Tape, Tensor, backward, no_tape
from .sampler import PaddingMode, grid_sample

log = logging.getLogger(__name__)

EXTRACTOR_FILTERS = (64, 128, 256, 512, 512, 512)
EXTRACTOR_STRIDES = (2, 2, 2, 2, 1, 1)
REGRESSOR_FILTERS = (512, 256, 128, 64)
REGRESSOR_STRIDES = (2, 2, 1, 1)
N_THETA = 2 * tps.GRID_SIZE * tps.GRID_SIZE
# desk-scale learning rate; 1e-4 (the full-scale value) stalls at ~0.6x the initial loss in 2000 steps
DESK_LR = 1e-3


class TrainingError(RuntimeError):
    pass


@dataclass
class GmmConfig:
    height: int = 64
    width: int = 48
    filter_div: int = 4
    person_channels: int = 22
    cloth_channels: int = 3
    kernel: int = 3
    init_gain: float = 1.0
    seed: int = 0

    @classmethod
    def desk(cls, **kw) -> "GmmConfig":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "GmmConfig":
        kw.setdefault("height", 256)
        kw.setdefault("width", 192)
        kw.setdefault("filter_div", 1)
        return cls(**kw)

    def filters(self, base) -> list[int]:
        return [max(1, f // self.filter_div) for f in base]


def _out_size(n: int, stride: int, k: int) -> int:
    return (n + 2 * (k // 2) - k) // stride + 1


class GmmNet:
    """Two conv feature pyramids, a correlation layer and a conv+FC regressor to 50 offsets.

    Parameter names are stable: ``extractor_p.{i}.weight``, ``extractor_c.{i}.bias``,
    ``regressor.{i}.weight``, ``regressor.fc.weight`` ... in construction order.
    """

    def __init__(self, cfg: GmmConfig | None = None):
        self.cfg = cfg = cfg or GmmConfig()
        self.store = ParamStore(cfg.seed, gain=cfg.init_gain)
        k = cfg.kernel
        ext = cfg.filters(EXTRACTOR_FILTERS)
        self.extractor_p = self._stack("extractor_p", cfg.person_channels, ext, k)
        self.extractor_c = self._stack("extractor_c", cfg.cloth_channels, ext, k)
        h, w = cfg.height, cfg.width
        for s in EXTRACTOR_STRIDES:
            h, w = _out_size(h, s, k), _out_size(w, s, k)
        self.feat_hw = (h, w)
        reg = cfg.filters(REGRESSOR_FILTERS)
        self.regressor = self._stack("regressor", h * w, reg, k)
        for s in REGRESSOR_STRIDES:
            h, w = _out_size(h, s, k), _out_size(w, s, k)
        fc_in = reg[-1] * h * w
        # zero output layer: theta = 0, i.e. the identity warp, at step 0
        self.fc_w = self.store.zeros("regressor.fc.weight", (N_THETA, fc_in))
        self.fc_b = self.store.zeros("regressor.fc.bias", (N_THETA,))

    def _stack(self, name: str, c_in: int, filters, k: int):
        layers = []
        for i, c_out in enumerate(filters):
            layers.append(self.store.conv(f"{name}.{i}", c_in, c_out, k))
            c_in = c_out
        return layers

    @property
    def params(self) -> list[Tensor]:
        return list(self.store)

    def state_dict(self) -> dict[str, np.ndarray]:
        return self.store.state_dict()

    def load_state_dict(self, state) -> None:
        self.store.load_state_dict(state)


def _extract(x: Tensor, layers) -> Tensor:
    for (w, b), s in zip(layers, EXTRACTOR_STRIDES):
        x = conv_block(x, w, b, s)
    return x


def correlation(fa: Tensor, fb: Tensor) -> Tensor:
    """All-pairs inner products: out[j*w + i, y, x] = <fa[:, y, x], fb[:, j, i]>.

    Accepts [C,h,w] or [N,C,h,w]; returns [h*w, h, w] or [N, h*w, h, w].
    """
    if fa.shape != fb.shape:
        raise ValueError(f"correlation needs matching feature shapes, got {fa.shape} and {fb.shape}")
    single = fa.ndim == 3
    if single:
        fa = ops.reshape(fa, (1,) + fa.shape)
        fb = ops.reshape(fb, (1,) + fb.shape)
    n, c, h, w = fa.shape
    a = ops.reshape(fa, (n, c, h * w))
    b = ops.transpose(ops.reshape(fb, (n, c, h * w)), (0, 2, 1))
    out = ops.reshape(ops.matmul(b, a), (n, h * w, h, w))
    return ops.reshape(out, out.shape[1:]) if single else out


def predict_theta(net: GmmNet, p: Tensor, c: Tensor) -> Tensor:
    fa = ops.l2_normalize(_extract(p, net.extractor_p), axis=1)
    fb = ops.l2_normalize(_extract(c, net.extractor_c), axis=1)
    x = correlation(fa, fb)
    for (w, b), s in zip(net.regressor, REGRESSOR_STRIDES):
        x = conv_block(x, w, b, s)
    n = x.shape[0]
    x = ops.reshape(x, (n, -1))
    # tanh keeps every offset inside the |offset| <= 2 envelope of TpsParams
    theta = ops.tanh(ops.linear(x, net.fc_w, net.fc_b))
    return ops.reshape(theta, (n, 2, tps.GRID_SIZE, tps.GRID_SIZE))


def gmm_forward(net: GmmNet, p, c) -> tuple[Tensor, Tensor]:
    """Predict anchor offsets for person representation ``p`` and garment ``c`` and warp ``c``.

    Inputs are [C,H,W] or batched [N,C,H,W]; returns (theta [.., 2, 5, 5], warped like ``c``).
    """
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=net.store.dtype))
    c = c if isinstance(c, Tensor) else Tensor(np.asarray(c, dtype=net.store.dtype))
    single = p.ndim == 3
    if single:
        p = ops.reshape(p, (1,) + p.shape)
        c = ops.reshape(c, (1,) + c.shape)
    h, w = c.shape[-2:]
    theta = predict_theta(net, p, c)
    # the 28x28 TPS solve is run in float64 regardless of the network dtype
    grid = tps.tps_grid(ops.astype(theta, np.float64), h, w)
    warped = grid_sample(c, ops.astype(grid, c.dtype), PaddingMode.BORDER)
    if single:
        theta = ops.reshape(theta, theta.shape[1:])
        warped = ops.reshape(warped, warped.shape[1:])
    return theta, warped


def warp_with_theta(c: np.ndarray, theta: np.ndarray) -> np.ndarray:
    with no_tape():
        grid = tps.tps_grid(Tensor(np.asarray(theta, dtype=np.float64)), *c.shape[-2:])
        return grid_sample(Tensor(c), Tensor(grid.data.astype(c.dtype)), PaddingMode.BORDER).data


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 4
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    log_every: int = 100
    extra: dict = field(default_factory=dict)


def batch_indices(n: int, steps: int, batch: int, seed: int):
    """Yield ``steps`` index arrays: epoch-wise shuffles under a fixed seed."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        idx = []
        while len(idx) < batch:
            if pos == n:
                order = rng.permutation(n)
                pos = 0
            take = min(batch - len(idx), n - pos)
            idx.extend(order[pos : pos + take])
            pos += take
        yield np.asarray(idx)


def train_gmm(net: GmmNet, person: np.ndarray, cloth: np.ndarray, target: np.ndarray, cfg: TrainConfig) -> list[float]:
    """Minimise mean |T_theta(c) - c_t| with Adam; returns the per-step loss curve."""
    if len(person) < 1:
        raise ValueError("train_gmm needs at least one (p, c, c_t) triplet")
    if not (len(person) == len(cloth) == len(target)):
        raise ValueError("person, cloth and target arrays differ in length")
    dtype = net.store.dtype
    person, cloth, target = (np.asarray(a, dtype=dtype) for a in (person, cloth, target))
    state = AdamState(net.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, total_steps=cfg.steps)
    curve: list[float] = []
    for step, idx in enumerate(batch_indices(len(person), cfg.steps, cfg.batch, cfg.seed)):
        with Tape() as tape:
            _, warped = gmm_forward(net, Tensor(person[idx]), Tensor(cloth[idx]))
            loss = ops.l1_loss(warped, target[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite GMM loss at step {step}")
        grads = backward(tape, loss, params=net.params)
        adam_step(state, [grads[p] for p in net.params])
        curve.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("gmm step %d loss %.5f", step, value)
    return curve


def evaluate_gmm(net: GmmNet, person: np.ndarray, cloth: np.ndarray, target: np.ndarray, batch: int = 8) -> float:
    """Mean L1 of the warp over a dataset, no tape."""
    dtype = net.store.dtype
    total = 0.0
    with no_tape():
        for s in range(0, len(person), batch):
            sl = slice(s, s + batch)
            _, warped = gmm_forward(net, Tensor(np.asarray(person[sl], dtype)), Tensor(np.asarray(cloth[sl], dtype)))
            total += float(np.abs(warped.data - target[sl]).mean()) * len(person[sl])
    return total / len(person)
