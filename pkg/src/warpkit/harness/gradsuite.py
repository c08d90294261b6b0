"""Finite-difference audit of every differentiable primitive and of both networks at micro scale."""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from .. import gmm, tom, tps
from ..diffcore import ops
from ..diffcore.gradcheck import check_gradients
from ..diffcore.tensor import Tensor
from ..sampler import PaddingMode, grid_sample

TOLERANCE = 1e-4
MICRO_SIZE = (8, 6)
# uniform(+-sqrt(6/fan_in)) keeps signal through the micro nets; smaller inits
# push early-layer gradients under finite-difference round-off
MICRO_GAIN = math.sqrt(6.0)


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape))


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    """Scalar probe sum(out * w) so every output entry gets a distinct weight."""
    return ops.sum(ops.mul(out, w))


def _primitive_cases(rng) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    cases = {}

    def unary(name, fn, lo=-1.0, hi=1.0, shape=(3, 4)):
        x = _t(rng, *shape, lo=lo, hi=hi)
        w = rng.normal(size=fn(x).shape)
        cases[name] = (lambda: _weighted(fn(x), w), [x])

    def binary(name, fn, sa=(3, 4), sb=(3, 4), lo=-1.0, hi=1.0):
        a, b = _t(rng, *sa, lo=lo, hi=hi), _t(rng, *sb, lo=lo, hi=hi)
        w = rng.normal(size=fn(a, b).shape)
        cases[name] = (lambda: _weighted(fn(a, b), w), [a, b])

    binary("add", ops.add, (3, 4), (4,))
    binary("sub", ops.sub, (2, 3, 4), (3, 1))
    binary("mul", ops.mul, (3, 4), (1, 4))
    binary("div", ops.div, (3, 4), (3, 4), lo=0.5, hi=2.0)
    unary("neg", ops.neg)
    unary("abs", ops.abs, lo=0.1, hi=1.0)
    unary("exp", ops.exp)
    unary("log", ops.log, lo=0.2, hi=2.0)
    unary("sqrt", ops.sqrt, lo=0.2, hi=2.0)
    unary("square", ops.square)
    unary("sigmoid", ops.sigmoid, lo=-4, hi=4)
    unary("tanh", ops.tanh, lo=-2, hi=2)
    unary("leaky_relu", lambda x: ops.leaky_relu(x, 0.2))
    unary("relu", ops.relu)
    unary("sum", lambda x: ops.sum(x, axis=1, keepdims=True))
    unary("mean", lambda x: ops.mean(x, axis=0))
    unary("reshape", lambda x: ops.reshape(x, (4, 3)))
    unary("transpose", lambda x: ops.transpose(x, (1, 0)))
    unary("getitem", lambda x: ops.getitem(x, (slice(1, 3), np.array([0, 2, 2]))))
    unary("crop", lambda x: ops.crop(x, 2, 3), shape=(2, 4, 5))
    unary("nearest_upsample2x", ops.nearest_upsample2x, shape=(1, 2, 3, 2))
    unary("instance_norm", ops.instance_norm, shape=(2, 3, 4, 3))
    unary("l2_normalize", lambda x: ops.l2_normalize(x, axis=1), shape=(2, 3, 2, 2))
    binary("concat", lambda a, b: ops.concat([a, b], axis=0), (2, 4), (3, 4))
    binary("concat_channels", ops.concat_channels, (1, 2, 3, 3), (1, 1, 3, 3))
    binary("matmul", ops.matmul, (2, 3, 4), (4, 5))
    binary("tps_kernel", ops.tps_kernel, (5, 2), (4, 2))

    a = _t(rng, 4, 4)
    a.data += 4 * np.eye(4)
    b = _t(rng, 4, 2)
    w = rng.normal(size=(4, 2))
    cases["solve"] = (lambda a=a, b=b, w=w: _weighted(ops.solve(a, b), w), [a, b])

    x, wt, bias = _t(rng, 2, 3), _t(rng, 4, 3), _t(rng, 4)
    w = rng.normal(size=(2, 4))
    cases["linear"] = (lambda x=x, w=w: _weighted(ops.linear(x, wt, bias), w), [x, wt, bias])

    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    b.data = a.data + np.sign(rng.normal(size=a.shape)) * rng.uniform(0.1, 1.0, a.shape)
    cases["l1_loss"] = (lambda a=a, b=b: ops.l1_loss(a, b), [a, b])

    x, k, bias = _t(rng, 2, 3, 7, 6), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    w = rng.normal(size=(2, 4, 4, 3))
    cases["conv2d"] = (lambda x=x, bias=bias, w=w: _weighted(ops.conv2d(x, k, bias, stride=2, pad=1), w), [x, k, bias])

    img = _t(rng, 2, 5, 4, lo=0, hi=1)
    # keep samples off the pixel lattice, where the bilinear map has kinks
    g = Tensor(_off_lattice(rng.uniform(-1.1, 1.1, (2, 3, 3)), (5, 4)))
    w = rng.normal(size=(2, 3, 3))
    for mode in PaddingMode:
        cases[f"grid_sample[{mode.name.lower()}]"] = (lambda m=mode, w=w: _weighted(grid_sample(img, g, m), w), [img, g])

    theta = Tensor(rng.uniform(-0.1, 0.1, (2, 5, 5)))
    w = rng.normal(size=(2, 4, 3))
    cases["tps_grid"] = (lambda: _weighted(tps.tps_grid(theta, 4, 3), w), [theta])
    return cases


def _off_lattice(grid: np.ndarray, hw: tuple[int, int], margin: float = 0.05) -> np.ndarray:
    h, w = hw
    out = grid.copy()
    for axis, n in ((0, w), (1, h)):
        pix = (out[axis] + 1) * (n - 1) / 2
        frac = pix - np.floor(pix)
        pix = np.where(frac < margin, pix + margin, np.where(frac > 1 - margin, pix - margin, pix))
        out[axis] = pix * 2 / (n - 1) - 1
    return out


def _micro_gmm(rng):
    h, w = MICRO_SIZE
    net = gmm.GmmNet(gmm.GmmConfig(height=h, width=w, filter_div=16, init_gain=MICRO_GAIN, seed=int(rng.integers(1 << 30))))
    net.store.astype(np.float64)
    # a zero output layer would leave every upstream gradient at exactly zero
    net.fc_w.data = rng.normal(0, 0.05, net.fc_w.shape)
    net.fc_b.data = rng.normal(0, 0.05, net.fc_b.shape)
    p = Tensor(rng.random((2, 22, h, w)))
    c = Tensor(rng.random((2, 3, h, w)))
    target = rng.random((2, 3, h, w))
    return (lambda: ops.l1_loss(gmm.gmm_forward(net, p, c)[1], target)), net.params + [c]


def _micro_tom(rng):
    h, w = MICRO_SIZE
    net = tom.TomNet(tom.TomConfig(height=h, width=w, filter_div=16, init_gain=MICRO_GAIN, seed=int(rng.integers(1 << 30))))
    net.store.astype(np.float64)
    p = Tensor(rng.random((2, 22, h, w)))
    warped = Tensor(rng.random((2, 3, h, w)))
    target = rng.random((2, 3, h, w))
    pc = tom.PerceptualConfig(filter_div=16)

    def f():
        _, mask, out = tom.tom_forward(net, p, warped)
        return tom.tom_loss(out, target, mask, cfg=pc)

    return f, net.params + [warped]


def run_suite(seed: int = 0, max_entries: int = 8, networks: bool = True) -> dict[str, float]:
    """Relative error per case: every primitive, then the micro GMM and TOM graphs."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, (f, inputs) in _primitive_cases(rng).items():
        results[name] = check_gradients(f, inputs, rng=rng)
    if networks:
        for name, build in (("gmm", _micro_gmm), ("tom", _micro_tom)):
            f, inputs = build(rng)
            results[name] = check_gradients(f, inputs, max_entries=max_entries, rng=rng)
    return results


def report(seed: int = 0) -> tuple[float, dict[str, float], float]:
    t0 = time.perf_counter()
    res = run_suite(seed)
    return max(res.values()), res, time.perf_counter() - t0
