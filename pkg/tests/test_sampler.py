import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpkit import tps
from warpkit.diffcore import ops
from warpkit.diffcore.gradcheck import check_gradients
from warpkit.diffcore.tensor import Tensor
from warpkit.sampler import PaddingMode, grid_sample


def pixel_grid(h, w, dx=0.0, dy=0.0):
    g = tps.identity_grid(h, w)
    g[0] += dx * 2 / (w - 1)
    g[1] += dy * 2 / (h - 1)
    return g


def test_identity(rng, backend):
    img = rng.random((3, 6, 5))
    out = grid_sample(Tensor(img), Tensor(tps.identity_grid(6, 5)))
    np.testing.assert_array_equal(out.data, img)


@pytest.mark.parametrize("mode", list(PaddingMode))
def test_one_pixel_shift(rng, mode, backend):
    img = rng.random((2, 5, 4)) + 0.5
    out = grid_sample(Tensor(img), Tensor(pixel_grid(5, 4, dx=1.0)), mode).data
    np.testing.assert_allclose(out[:, :, :-1], img[:, :, 1:], atol=1e-12)
    edge = img[:, :, -1] if mode is PaddingMode.BORDER else np.zeros_like(img[:, :, -1])
    np.testing.assert_allclose(out[:, :, -1], edge, atol=1e-12)


def test_midpoint_average(backend):
    img = np.array([[[0.0, 0.0], [1.0, 1.0]]])
    out = grid_sample(Tensor(img), Tensor(np.zeros((2, 1, 1))))
    assert float(out.data[0, 0, 0]) == 0.5


def test_batched_matches_single(rng, backend):
    img = rng.random((2, 3, 6, 5))
    grid = rng.uniform(-1.2, 1.2, (2, 2, 4, 4))
    batched = grid_sample(Tensor(img), Tensor(grid)).data
    for i in range(2):
        np.testing.assert_array_equal(batched[i], grid_sample(Tensor(img[i]), Tensor(grid[i])).data)


def test_nonfinite_grid_rejected():
    with pytest.raises(ValueError):
        grid_sample(Tensor(np.ones((1, 3, 3))), Tensor(np.full((2, 2, 2), np.nan)))


@pytest.mark.parametrize("mode", list(PaddingMode))
def test_gradcheck_off_lattice(rng, mode, backend):
    img = Tensor(rng.random((2, 5, 4)))
    g = rng.uniform(-1.1, 1.1, (2, 3, 3))
    # nudge coordinates away from pixel-centre lines where the map has kinks
    for axis, n in ((0, 4), (1, 5)):
        pix = (g[axis] + 1) * (n - 1) / 2
        frac = pix - np.floor(pix)
        pix = np.where(frac < 0.05, pix + 0.05, np.where(frac > 0.95, pix - 0.05, pix))
        g[axis] = pix * 2 / (n - 1) - 1
    grid = Tensor(g)
    w = rng.normal(size=(2, 3, 3))
    f = lambda: ops.sum(ops.mul(grid_sample(img, grid, mode), w))  # noqa: E731
    assert check_gradients(f, [img, grid]) < 1e-4


def test_lattice_tiebreak_uses_left_cell(backend):
    # at x exactly on pixel 1 the derivative is taken from cell [0, 1]
    img = np.array([[[0.0, 1.0, 5.0]]])
    grid = Tensor(np.array([[[0.0]], [[0.0]]]), requires_grad=True)
    from warpkit.diffcore.tensor import Tape, backward

    with Tape() as t:
        out = grid_sample(Tensor(img), grid)
        loss = ops.sum(out)
    backward(t, loss)
    assert float(out.data[0, 0, 0]) == 1.0
    assert float(grid.grad[0, 0, 0]) == pytest.approx(1.0 * 1.0)  # slope (1-0) * dx/dgrid (=1)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_constant_image_partition_of_unity(value, seed):
    r = np.random.default_rng(seed)
    out = grid_sample(Tensor(np.full((2, 4, 5), value)), Tensor(r.uniform(-2, 2, (2, 3, 3))), PaddingMode.BORDER)
    np.testing.assert_allclose(out.data, value, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-2, 2), st.floats(-2, 2))
def test_linear_in_image(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.random((2, 5, 4)), r.random((2, 5, 4))
    g = Tensor(r.uniform(-1.3, 1.3, (2, 3, 3)))
    for mode in PaddingMode:
        lhs = grid_sample(Tensor(a * x + b * y), g, mode).data
        rhs = a * grid_sample(Tensor(x), g, mode).data + b * grid_sample(Tensor(y), g, mode).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)
