"""The compiled extension and the numpy fallback must agree."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpkit import _fallback, kernels

compiled = pytest.importorskip("warpkit._kernels")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_col2im(rng, dtype):
    xp = rng.random((2, 3, 9, 8)).astype(dtype)
    a = compiled.im2col(xp, 3, 2, 4, 3)
    np.testing.assert_array_equal(a, _fallback.im2col(xp, 3, 2, 4, 3))
    cols = rng.random(a.shape).astype(dtype)
    np.testing.assert_allclose(compiled.col2im(cols, 3, 9, 8, 3, 2, 4, 3), _fallback.col2im(cols, 3, 9, 8, 3, 2, 4, 3), rtol=1e-6)


def test_col2im_is_adjoint(rng):
    xp = rng.random((1, 2, 7, 6))
    cols = rng.random((1, 18, 20))
    for mod in (compiled, _fallback):
        lhs = np.vdot(mod.im2col(xp, 3, 1, 5, 4), cols)
        rhs = np.vdot(xp, mod.col2im(cols, 2, 7, 6, 3, 1, 5, 4))
        assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-14)])
@pytest.mark.parametrize("mode", [kernels.BORDER, kernels.ZEROS])
def test_grid_sample_agree(rng, dtype, tol, mode):
    img = rng.random((2, 3, 6, 5)).astype(dtype)
    x = rng.uniform(-1.5, 5.5, (2, 4, 4)).astype(dtype)
    y = rng.uniform(-1.5, 6.5, (2, 4, 4)).astype(dtype)
    x[0, 0, :2] = [0.0, 2.0]  # exact lattice points exercise the tie-break
    g = rng.normal(size=(2, 3, 4, 4)).astype(dtype)
    np.testing.assert_allclose(compiled.grid_sample_fwd(img, x, y, mode), _fallback.grid_sample_fwd(img, x, y, mode), atol=tol)
    for a, b in zip(compiled.grid_sample_bwd(img, x, y, mode, g), _fallback.grid_sample_bwd(img, x, y, mode, g)):
        np.testing.assert_allclose(a, b, atol=10 * tol)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 14), st.integers(3, 14))
def test_trace_contour_agree(seed, h, w):
    m = np.random.default_rng(seed).random((h, w)) < 0.6
    if not m.any():
        return
    np.testing.assert_array_equal(compiled.trace_contour(m), _fallback.trace_contour(m))


def test_trace_square_clockwise():
    m = np.zeros((5, 5), bool)
    m[1:4, 1:4] = True
    pts = _fallback.trace_contour(m)
    expect = [(1, 1), (1, 2), (1, 3), (2, 3), (3, 3), (3, 2), (3, 1), (2, 1)]
    assert [tuple(p) for p in pts] == expect


def test_trace_single_pixel_and_empty():
    m = np.zeros((3, 3), bool)
    with pytest.raises(ValueError):
        compiled.trace_contour(m)
    m[1, 1] = True
    assert compiled.trace_contour(m).tolist() == [[1, 1]]


def test_use_switches_backend():
    before = kernels.BACKEND
    try:
        kernels.use("python")
        assert kernels.BACKEND == "python" and kernels.im2col is _fallback.im2col
        kernels.use("compiled")
        assert kernels.BACKEND == "compiled" and kernels.im2col is compiled.im2col
    finally:
        kernels.use(before)
