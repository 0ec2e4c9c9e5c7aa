"""The numba kernels and the numpy fallback must agree on every op."""
import numpy as np
import pytest

from interseg.nn.backends import numba_ops, numpy_ops


@pytest.fixture(params=[np.float32, np.float64], ids=["f32", "f64"])
def dtype(request):
    return request.param


def _rand(shape, dtype, seed=0):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


def test_conv3x3_parity(dtype):
    x = _rand((2, 5, 12, 16), dtype, 1)
    w = _rand((7, 5, 3, 3), dtype, 2)
    a = numpy_ops.conv3x3(x, w)
    b = numba_ops.conv3x3(x, w)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_conv3x3_against_naive_reference():
    # tiny case checked against an explicit python loop
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    ref = np.zeros((1, 3, 5, 5))
    for oc in range(3):
        for r in range(5):
            for c in range(5):
                acc = 0.0
                for ic in range(2):
                    for ky in range(3):
                        for kx in range(3):
                            rr, cc = r + ky - 1, c + kx - 1
                            if 0 <= rr < 5 and 0 <= cc < 5:
                                acc += w[oc, ic, ky, kx] * x[0, ic, rr, cc]
                ref[0, oc, r, c] = acc
    np.testing.assert_allclose(numpy_ops.conv3x3(x, w), ref, atol=1e-12)
    np.testing.assert_allclose(numba_ops.conv3x3(x, w), ref, atol=1e-12)


def test_conv3x3_dw_parity(dtype):
    x = _rand((2, 4, 10, 10), dtype, 4)
    dy = _rand((2, 6, 10, 10), dtype, 5)
    a = numpy_ops.conv3x3_dw(x, dy)
    b = numba_ops.conv3x3_dw(x, dy)
    tol = 2e-4 if dtype == np.float32 else 1e-11
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_maxpool_parity(dtype):
    x = _rand((3, 4, 8, 12), dtype, 6)
    ya, ia = numpy_ops.maxpool2(x)
    yb, ib = numba_ops.maxpool2(x)
    np.testing.assert_array_equal(ya, yb)
    np.testing.assert_array_equal(ia, ib)
    dy = _rand(ya.shape, dtype, 7)
    np.testing.assert_array_equal(numpy_ops.maxpool2_bwd(dy, ia),
                                  numba_ops.maxpool2_bwd(dy, ib))


def test_maxpool_tie_break_matches():
    x = np.zeros((1, 1, 4, 4), dtype=np.float32)  # all ties
    _, ia = numpy_ops.maxpool2(x)
    _, ib = numba_ops.maxpool2(x)
    np.testing.assert_array_equal(ia, ib)
    assert np.all(ia == 0)  # first element of each window wins


def test_within_backend_determinism():
    x = _rand((2, 3, 16, 16), np.float32, 8)
    w = _rand((4, 3, 3, 3), np.float32, 9)
    for ops in (numpy_ops, numba_ops):
        y1 = ops.conv3x3(x, w)
        y2 = ops.conv3x3(x, w)
        assert np.array_equal(y1, y2)


def test_backend_selection_roundtrip():
    from interseg.nn import backends

    original = backends.get_backend()
    try:
        prev = backends.set_backend("numpy")
        assert backends.get_backend() == "numpy"
        assert prev == original
        backends.set_backend("numba")
        assert backends.get_backend() == "numba"
        with pytest.raises(ValueError):
            backends.set_backend("tensorflow")
    finally:
        backends.set_backend(original)
