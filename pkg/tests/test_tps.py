import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpkit import tps
from warpkit.diffcore import ops
from warpkit.diffcore.gradcheck import check_gradients
from warpkit.diffcore.tensor import Tensor
from warpkit.sampler import PaddingMode, grid_sample


def test_kernel_values():
    assert tps.kernel_u(0.0) == 0.0
    assert tps.kernel_u(1.0) == 0.0
    assert tps.kernel_u(math.sqrt(math.e)) == pytest.approx(2.718281828, abs=1e-9)
    with pytest.raises(ValueError):
        tps.kernel_u(-0.1)


def test_identity_correspondences(rng):
    src = rng.uniform(-1, 1, (10, 2))
    c = tps.solve_tps(src, src)
    np.testing.assert_allclose(c.affine, [[1, 0, 0], [0, 1, 0]], atol=1e-8)
    assert np.abs(c.weights).max() < 1e-8


def test_affine_recovered(rng):
    src = rng.uniform(-1, 1, (12, 2))
    a = np.array([[1.1, -0.2], [0.15, 0.9]])
    b = np.array([0.05, -0.3])
    c = tps.solve_tps(src, src @ a.T + b)
    np.testing.assert_allclose(c.affine[:, :2], a, atol=1e-8)
    np.testing.assert_allclose(c.affine[:, 2], b, atol=1e-8)
    assert np.linalg.norm(c.weights) < 1e-8


def test_interpolates_25_random(rng):
    src, dst = rng.uniform(-1, 1, (25, 2)), rng.uniform(-1, 1, (25, 2))
    c = tps.solve_tps(src, dst, 0.0)
    assert np.abs(tps.eval_tps(c, src) - dst).max() < 1e-6


def test_side_conditions(rng):
    src, dst = rng.uniform(-1, 1, (15, 2)), rng.uniform(-1, 1, (15, 2))
    c = tps.solve_tps(src, dst)
    scale = np.abs(c.weights).max()
    assert np.abs(c.weights.sum(0)).max() < 1e-8 * max(scale, 1)
    assert np.abs(src.T @ c.weights).max() < 1e-8 * max(scale, 1)


def test_smoothing_does_not_interpolate(rng):
    src, dst = rng.uniform(-1, 1, (25, 2)), rng.uniform(-1, 1, (25, 2))
    assert np.abs(tps.eval_tps(tps.solve_tps(src, dst, 1.0), src) - dst).max() > 1e-3


@pytest.mark.parametrize(
    "src,word",
    [
        (np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]]), "collinear"),
        (np.array([[0, 0], [1, 0], [0, 1], [0, 1.0]]), "duplicated"),
    ],
)
def test_degenerate_sources(src, word):
    with pytest.raises(tps.SingularTpsError, match=word):
        tps.solve_tps(src, src)


def test_eval_identity_and_affine():
    ident = tps.TpsCoefficients.identity(np.zeros((0, 2)))
    np.testing.assert_array_equal(tps.eval_tps(ident, [0.3, -0.7]), [0.3, -0.7])
    aff = tps.TpsCoefficients(np.array([[2.0, 0.5, 0.1], [-1.0, 1.0, 0.2]]), np.zeros((0, 2)), np.zeros((0, 2)))
    np.testing.assert_allclose(tps.eval_tps(aff, [0.3, -0.7]), [2 * 0.3 + 0.5 * -0.7 + 0.1, -0.3 - 0.7 + 0.2])


def test_eval_rejects_nonfinite():
    with pytest.raises(ValueError):
        tps.eval_tps(tps.TpsCoefficients.identity(np.zeros((0, 2))), [np.nan, 0.0])


def test_zero_theta_grid_is_identity():
    g = tps.grid_from_params(tps.TpsParams.zeros(), 7, 5)
    np.testing.assert_allclose(g, tps.identity_grid(7, 5), atol=1e-9)


def test_zero_theta_warp_is_pixel_identity(rng):
    img = rng.random((3, 64, 48))
    g = tps.grid_from_params(tps.TpsParams.zeros(), 64, 48)
    out = grid_sample(Tensor(img), Tensor(g), PaddingMode.BORDER).data
    assert np.abs(out - img).max() < 1e-6


def test_uniform_offset_is_inverse_translation():
    dx = 0.1
    off = np.zeros((2, 5, 5))
    off[0] = dx
    g = tps.grid_from_params(tps.TpsParams(off), 9, 7)
    ident = tps.identity_grid(9, 7)
    np.testing.assert_allclose(g[0], ident[0] - dx, atol=1e-6)
    np.testing.assert_allclose(g[1], ident[1], atol=1e-6)


def test_translation_agrees_with_solve_tps():
    dx, dy = 0.07, -0.04
    rest = tps.rest_anchors()
    c = tps.solve_tps(rest + [dx, dy], rest)
    np.testing.assert_allclose(c.affine, [[1, 0, -dx], [0, 1, -dy]], atol=1e-8)


def test_params_validation():
    with pytest.raises(ValueError):
        tps.TpsParams(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        tps.TpsParams(np.full((2, 5, 5), 2.5))
    with pytest.raises(ValueError):
        tps.TpsParams(np.full((2, 5, 5), np.inf))


def test_collapsed_anchors_raise():
    off = np.zeros((2, 5, 5))
    rest = tps.rest_anchors().T.reshape(2, 5, 5)
    off[:] = -rest  # every anchor lands on the origin
    with pytest.raises(tps.SingularTpsError):
        tps.grid_from_params(tps.TpsParams(off), 8, 6)


def test_small_grid_rejected():
    with pytest.raises(ValueError):
        tps.grid_from_params(tps.TpsParams.zeros(), 1, 5)


def test_theta_gradcheck(rng):
    theta = Tensor(rng.uniform(-0.1, 0.1, (2, 5, 5)))
    img = Tensor(rng.random((3, 8, 6)))
    target = rng.random((3, 8, 6))
    f = lambda: ops.l1_loss(grid_sample(img, tps.tps_grid(theta, 8, 6)), target)  # noqa: E731
    assert check_gradients(f, [theta]) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.2))
def test_random_grid_finite_and_smooth(seed, amp):
    r = np.random.default_rng(seed)
    off = r.uniform(-amp, amp, (2, 5, 5))
    h, w = 16, 12
    g = tps.grid_from_params(tps.TpsParams(off), h, w)
    assert np.all(np.isfinite(g))
    bound = 4 / min(h, w) + 2 * np.abs(off).max()
    assert np.abs(np.diff(g, axis=1)).max() < bound
    assert np.abs(np.diff(g, axis=2)).max() < bound


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 30))
def test_interpolation_property(seed, k):
    r = np.random.default_rng(seed)
    src = r.uniform(-1, 1, (k, 2))
    try:
        tps.check_sources(src)
    except tps.SingularTpsError:
        return
    dst = r.uniform(-1, 1, (k, 2))
    try:
        c = tps.solve_tps(src, dst)
    except tps.SingularTpsError:
        return  # ill-conditioned draw (near-coincident points)
    assert np.abs(tps.eval_tps(c, src) - dst).max() < 1e-6
