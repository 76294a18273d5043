import numpy as np
import pytest

from aocstream import kernels

BACKENDS = kernels.backends()


def test_cython_backend_active_when_built():
    if "cython" in BACKENDS:
        assert kernels.BACKEND == "cython"


@pytest.fixture(params=sorted(BACKENDS))
def impl(request):
    return BACKENDS[request.param]


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_accumulate_backends_agree(impl, stride):
    rng = np.random.default_rng(stride)
    x = rng.integers(-128, 128, size=(5, 11, 9))
    w = rng.integers(-128, 128, size=(3, 5, 3, 3))
    oh, ow = (11 - 3) // stride + 1, (9 - 3) // stride + 1
    ref = BACKENDS["python"].conv_accumulate(x, w, stride, oh, ow)
    assert np.array_equal(impl.conv_accumulate(x, w, stride, oh, ow), ref)


def test_depthwise_accumulate_backends_agree(impl):
    rng = np.random.default_rng(7)
    x = rng.integers(-128, 128, size=(4, 8, 8))
    w = rng.integers(-128, 128, size=(4, 3, 3))
    ref = BACKENDS["python"].depthwise_accumulate(x, w, 1, 6, 6)
    assert np.array_equal(impl.depthwise_accumulate(x, w, 1, 6, 6), ref)


def test_window_ops_agree(impl):
    rng = np.random.default_rng(8)
    window = rng.integers(-128, 128, size=(6, 3, 3))
    wg = rng.integers(-128, 128, size=(4, 6, 3, 3))
    valid = np.ones((3, 3), dtype=np.int64)
    valid[0] = 0
    py = BACKENDS["python"]
    acc, ref = np.zeros(4, dtype=np.int64), np.zeros(4, dtype=np.int64)
    impl.window_conv(wg, window, acc)
    py.window_conv(wg, window, ref)
    assert np.array_equal(acc, ref)
    dw = rng.integers(-128, 128, size=(6, 3, 3))
    assert np.array_equal(impl.window_depthwise(dw, window), py.window_depthwise(dw, window))
    assert np.array_equal(impl.window_max(window, valid), py.window_max(window, valid))
    assert np.array_equal(impl.window_sum(window, valid), py.window_sum(window, valid))
