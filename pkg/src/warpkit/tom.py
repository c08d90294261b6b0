"""Try-on module: U-Net renderer + composition mask, perceptual loss, training variants."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.nn import ParamStore, conv_block
from .diffcore.optim import AdamState, adam_step
from .diffcore.tensor import Tape, Tensor, backward, no_tape
from .gmm import TrainConfig, TrainingError, batch_indices
from .harness.metrics import perturb

log = logging.getLogger(__name__)

DOWN_FILTERS = (64, 128, 256, 512, 512, 512)
UP_FILTERS = (512, 512, 256, 128, 64, 4)
PERCEPTUAL_FILTERS = (64, 128, 256, 512, 512)
VARIANTS = ("full", "no_mask", "no_mask_l1")
DESK_LR = 1e-4


@dataclass
class TomConfig:
    height: int = 64
    width: int = 48
    filter_div: int = 4
    in_channels: int = 22 + 3
    kernel: int = 3
    init_gain: float = 1.0
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown TOM variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def with_mask(self) -> bool:
        return self.variant != "no_mask"

    @property
    def out_channels(self) -> int:
        return 4 if self.with_mask else 3

    def filters(self, base) -> list[int]:
        return [max(1, f // self.filter_div) for f in base]


class TomNet:
    """Six stride-2 conv encoders, six (nearest-upsample, conv) decoders with
    concatenated skips. The last decoder emits 3 rendering channels plus one
    mask channel (3 only for the no-mask ablation).
    """

    def __init__(self, cfg: TomConfig | None = None):
        self.cfg = cfg = cfg or TomConfig()
        self.store = ParamStore(cfg.seed, gain=cfg.init_gain)
        k = cfg.kernel
        down = cfg.filters(DOWN_FILTERS)
        up = cfg.filters(UP_FILTERS)[:-1] + [cfg.out_channels]
        self.down = []
        c_in = cfg.in_channels
        for i, c_out in enumerate(down):
            self.down.append(self.store.conv(f"down.{i}", c_in, c_out, k))
            c_in = c_out
        self.up = []
        for i, c_out in enumerate(up):
            # decoder i sees the previous decoder output plus the encoder map of the same size
            skip = down[-2 - i] if i < len(up) - 1 else 0
            self.up.append(self.store.conv(f"up.{i}", c_in, c_out, k))
            c_in = c_out + skip

    @property
    def params(self) -> list[Tensor]:
        return list(self.store)

    def state_dict(self):
        return self.store.state_dict()

    def load_state_dict(self, state):
        self.store.load_state_dict(state)


def unet(net: TomNet, x: Tensor) -> Tensor:
    in_hw = x.shape[-2:]
    skips = []
    for w, b in net.down:
        x = conv_block(x, w, b, 2)
        skips.append(x)
    skips.pop()  # innermost map feeds the decoder directly
    last = len(net.up) - 1
    for i, (w, b) in enumerate(net.up):
        x = ops.nearest_upsample2x(x)
        x = ops.crop(x, *(skips[-1].shape[-2:] if skips else in_hw))
        x = conv_block(x, w, b, 1, norm=i < last, act=i < last)
        if i < last:
            x = ops.concat_channels(x, skips.pop())
    return x


def compose(warped, rendered, mask) -> Tensor:
    """I_o = M * c_hat + (1 - M) * I_r, element-wise; M broadcasts over channels."""
    return ops.add(ops.mul(mask, warped), ops.mul(ops.sub(1.0, mask), rendered))


def tom_forward(net: TomNet, p, warped):
    """Returns (I_r, M, I_o). For the no-mask ablation M is None and I_o is I_r."""
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=net.store.dtype))
    warped = warped if isinstance(warped, Tensor) else Tensor(np.asarray(warped, dtype=net.store.dtype))
    single = p.ndim == 3
    if single:
        p = ops.reshape(p, (1,) + p.shape)
        warped = ops.reshape(warped, (1,) + warped.shape)
    if p.shape[-2:] != warped.shape[-2:]:
        raise ValueError(f"person map {p.shape} and warped garment {warped.shape} differ spatially")
    out = unet(net, ops.concat_channels(p, warped))
    rgb = ops.getitem(out, (slice(None), slice(0, 3)))
    rendered = ops.mul(ops.add(ops.tanh(rgb), 1.0), 0.5)
    if net.cfg.with_mask:
        mask = ops.sigmoid(ops.getitem(out, (slice(None), slice(3, 4))))
        result = compose(warped, rendered, mask)
    else:
        mask = None
        result = rendered
    if single:
        rendered = ops.reshape(rendered, rendered.shape[1:])
        result = ops.reshape(result, result.shape[1:])
        mask = None if mask is None else ops.reshape(mask, mask.shape[1:])
    return rendered, mask, result


@dataclass
class PerceptualConfig:
    """Fixed random feature pyramid standing in for a pretrained perception network.

    Five stages; stage 1 runs two convs at full resolution, later stages a
    stride-2 conv then a stride-1 conv. One tap after each stage.
    """

    weights: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    filter_div: int = 4
    seed: int = 1234

    def __post_init__(self):
        if len(self.weights) != 5:
            raise ValueError("perceptual loss needs exactly 5 layer weights")
        if any(w < 0 for w in self.weights) or not any(self.weights):
            raise ValueError("layer weights must be >= 0 and not all zero")


_feature_nets: dict = {}


def _feature_net(cfg: PerceptualConfig, dtype) -> list[tuple[Tensor, Tensor, int]]:
    key = (cfg.filter_div, cfg.seed, np.dtype(dtype).str)
    if key not in _feature_nets:
        rng = np.random.default_rng(cfg.seed)
        layers = []
        c_in = 3
        for i, f in enumerate(PERCEPTUAL_FILTERS):
            c = max(1, f // cfg.filter_div)
            for j in range(2):
                stride = 2 if (i > 0 and j == 0) else 1
                fan_in = c_in * 9
                # He-uniform keeps activations from shrinking through ten frozen layers
                bound = np.sqrt(6.0 / fan_in)
                w = Tensor(rng.uniform(-bound, bound, (c, c_in, 3, 3)).astype(dtype))
                b = Tensor(np.zeros(c, dtype=dtype))
                layers.append((w, b, stride))
                c_in = c
        _feature_nets[key] = layers
    return _feature_nets[key]


def perceptual_features(x: Tensor, cfg: PerceptualConfig) -> list[Tensor]:
    layers = _feature_net(cfg, x.dtype)
    x = ops.sub(ops.mul(x, 2.0), 1.0)
    taps = []
    for i, (w, b, s) in enumerate(layers):
        x = ops.leaky_relu(ops.conv2d(x, w, b, stride=s, pad=1), 0.2)
        if i % 2 == 1:
            taps.append(x)
    return taps


def perceptual_loss(a, b, cfg: PerceptualConfig | None = None) -> Tensor:
    """sum_i w_i * mean|phi_i(a) - phi_i(b)| over the five taps; the feature net is never trained."""
    cfg = cfg or PerceptualConfig()
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape:
        raise ValueError(f"perceptual_loss shapes differ: {a.shape} vs {b.shape}")
    total = None
    for wgt, fa, fb in zip(cfg.weights, perceptual_features(a, cfg), perceptual_features(b, cfg)):
        if wgt == 0:
            continue
        term = ops.mul(ops.l1_loss(fa, fb), wgt)
        total = term if total is None else ops.add(total, term)
    return total


@dataclass
class LossWeights:
    l1: float = 1.0
    vgg: float = 1.0
    mask: float = 1.0

    def __post_init__(self):
        if min(self.l1, self.vgg, self.mask) < 0:
            raise ValueError("loss weights must be >= 0")


def tom_loss(result, target, mask, weights: LossWeights | None = None, cfg: PerceptualConfig | None = None) -> Tensor:
    """l1 * mean|I_o - I_t| + vgg * perceptual(I_o, I_t) + mask * mean|1 - M| (mask term dropped if M is None)."""
    weights = weights or LossWeights()
    result = result if isinstance(result, Tensor) else Tensor(result)
    total = ops.mul(ops.l1_loss(result, target), weights.l1)
    total = ops.add(total, ops.mul(perceptual_loss(result, target, cfg), weights.vgg))
    if mask is not None and weights.mask:
        total = ops.add(total, ops.mul(ops.mean(ops.abs(ops.sub(1.0, mask))), weights.mask))
    return total


def variant_weights(variant: str, base: LossWeights | None = None) -> LossWeights:
    base = base or LossWeights()
    if variant == "no_mask_l1":
        return LossWeights(base.l1, base.vgg, 0.0)
    return base


@dataclass
class TomHistory:
    loss: list[float]
    mean_mask: list[float]  # mean M over the garment region per step (nan for no_mask)


def train_tom(
    net: TomNet,
    person: np.ndarray,
    warped: np.ndarray,
    target: np.ndarray,
    cfg: TrainConfig,
    garment_mask: np.ndarray | None = None,
    perceptual: PerceptualConfig | None = None,
    weights: LossWeights | None = None,
    perturb_radius: int = 0,
) -> TomHistory:
    """Adam on the try-on loss for ``net.cfg.variant``.

    With ``perturb_radius`` > 0 each drawn warped garment is shifted by a fresh
    random integer offset, simulating an imperfect matching module.
    """
    if len(person) < 1:
        raise ValueError("train_tom needs at least one triplet")
    dtype = net.store.dtype
    person, warped, target = (np.asarray(a, dtype=dtype) for a in (person, warped, target))
    perceptual = perceptual or PerceptualConfig(filter_div=net.cfg.filter_div)
    weights = variant_weights(net.cfg.variant, weights)
    state = AdamState(net.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, total_steps=cfg.steps)
    rng = np.random.default_rng(cfg.seed + 7919)
    hist = TomHistory([], [])
    for step, idx in enumerate(batch_indices(len(person), cfg.steps, cfg.batch, cfg.seed)):
        wb = warped[idx]
        if perturb_radius:
            wb = np.stack([perturb(x, perturb_radius, rng) for x in wb])
        with Tape() as tape:
            _, mask, result = tom_forward(net, Tensor(person[idx]), Tensor(wb))
            loss = tom_loss(result, target[idx], mask, weights, perceptual)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite TOM loss at step {step}")
        grads = backward(tape, loss, params=net.params)
        adam_step(state, [grads[p] for p in net.params])
        hist.loss.append(value)
        hist.mean_mask.append(_region_mean(mask, garment_mask, idx))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("tom[%s] step %d loss %.5f", net.cfg.variant, step, value)
    return hist


def _region_mean(mask: Tensor | None, garment_mask: np.ndarray | None, idx) -> float:
    if mask is None:
        return float("nan")
    m = mask.data[:, 0]
    if garment_mask is None:
        return float(m.mean())
    region = garment_mask[idx] > 0.5
    return float(m[region].mean()) if region.any() else float("nan")


def evaluate_tom(net: TomNet, person, warped, batch: int = 8):
    """Inference over a dataset: returns (I_o, M or None) as stacked arrays."""
    dtype = net.store.dtype
    outs, masks = [], []
    with no_tape():
        for s in range(0, len(person), batch):
            sl = slice(s, s + batch)
            _, m, o = tom_forward(net, Tensor(np.asarray(person[sl], dtype)), Tensor(np.asarray(warped[sl], dtype)))
            outs.append(o.data)
            if m is not None:
                masks.append(m.data)
    return np.concatenate(outs), (np.concatenate(masks) if masks else None)
