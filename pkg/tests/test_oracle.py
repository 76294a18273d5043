import numpy as np
import pytest
from hypothesis import given, strategies as st

from aocstream.compress import PruneConfig, prune_network
from aocstream.errors import AccumulatorOverflow, ShapeMismatch
from aocstream.netspec import LayerSpec, TensorShape, chain
from aocstream.oracle import (apply_layer, check_accumulator_width, conv2d_accumulators,
                              conv2d_ref, depthwise_accumulators, depthwise_ref,
                              network_forward_ref, pool_ref)
from aocstream.tensors import ActivationTensor, WeightTensor
from aocstream.testkit import (RandomNetSpec, brute_force_forward, gen_random_image,
                               gen_random_net, gen_random_weights)


def act(vals, e=0):
    return ActivationTensor(np.asarray(vals), 8, e)


def conv(k=3, s=1, pad="same", m=1, kind="Conv", actv="none"):
    return LayerSpec("x", kind, k, s, pad, m if kind == "Conv" else None, False, actv)


def test_identity_conv():
    fi = gen_random_image(TensorShape(5, 6, 4), 0)
    w = WeightTensor(np.eye(4, dtype=np.int64).reshape(4, 4, 1, 1), None, 0, fi.scale_exp)
    assert conv2d_ref(fi, w, conv(k=1, m=4)) == fi


def test_constant_sum_conv():
    n, c = 3, 5
    fi = act(np.full((n, 6, 6), c))
    w = WeightTensor(np.ones((2, n, 3, 3)), None, 0, 0)
    acc = conv2d_accumulators(fi, w, conv(pad="valid", m=2))
    assert acc.shape == (2, 4, 4)
    assert (acc == 9 * n * c).all()


def test_conv_matches_triple_loop():
    rng = np.random.default_rng(5)
    x = rng.integers(-128, 128, size=(4, 6, 6))
    wv = rng.integers(-128, 128, size=(2, 4, 3, 3))
    acc = conv2d_accumulators(act(x), WeightTensor(wv, None, 0, 0), conv(pad="valid", m=2))
    for m in range(2):
        for y in range(4):
            for xx in range(4):
                total = 0
                for n in range(4):
                    for i in range(3):
                        for j in range(3):
                            total += int(x[n, y + i, xx + j]) * int(wv[m, n, i, j])
                assert acc[m, y, xx] == total


def test_depthwise_delta_and_constant():
    fi = gen_random_image(TensorShape(7, 7, 3), 1)
    delta = np.zeros((3, 3, 3), dtype=np.int64)
    delta[:, 1, 1] = 1
    w = WeightTensor(delta, None, 0, fi.scale_exp)
    assert depthwise_ref(fi, w, conv(kind="DepthwiseConv")) == fi
    c = act(np.stack([np.full((5, 5), v) for v in (1, -2, 4)]))
    acc = depthwise_accumulators(c, WeightTensor(np.ones((3, 3, 3)), None, 0, 0),
                                 conv(kind="DepthwiseConv", pad="valid"))
    assert acc[:, 1, 1].tolist() == [9, -18, 36]


def test_pools():
    fi = act(np.full((2, 5, 5), -3))
    for kind in ("MaxPool", "AvgPool"):
        assert pool_ref(fi, conv(k=3, kind=kind)) == fi
    out = pool_ref(act([[[1, 2], [3, 4]]]), conv(k=2, s=2, pad="valid", kind="MaxPool"))
    assert out.values.ravel().tolist() == [4]


def test_avgpool_truncates_over_valid_positions():
    out = pool_ref(act([[[-3, -4], [0, 0]]]), conv(k=2, s=2, pad="valid", kind="AvgPool"))
    assert out.values.item() == -1  # -7/4 toward zero
    # same padding: corner window sees 4 real values, not 9
    out = pool_ref(act(np.full((1, 3, 3), 9)), conv(k=3, kind="AvgPool"))
    assert (out.values == 9).all()


def test_wrong_weight_shape():
    fi = act(np.zeros((2, 4, 4)))
    with pytest.raises(ShapeMismatch):
        conv2d_ref(fi, WeightTensor(np.zeros((1, 3, 3, 3)), None, 0, 0), conv())


def test_single_layer_and_identity_chain():
    layers = [conv(k=1, m=3), LayerSpec("y", "Conv", 1, 1, "same", 3, False, "none")]
    net = chain(TensorShape(4, 4, 3), layers)
    fi = gen_random_image(net.input_shape, 2)
    eye = WeightTensor(np.eye(3, dtype=np.int64).reshape(3, 3, 1, 1), None, 0, fi.scale_exp)
    assert network_forward_ref(net, {"x": eye, "y": eye}, fi)["y"] == fi

    one = chain(TensorShape(6, 6, 3), [conv(m=4, actv="relu")])
    w = gen_random_weights(one, 3)
    img = gen_random_image(one.input_shape, 4)
    assert network_forward_ref(one, w, img)["x"] == conv2d_ref(img, w["x"], one.by_id["x"])


def test_three_layer_manual_composition():
    net = gen_random_net(RandomNetSpec(seed=11, min_depth=3, max_depth=3, branch_prob=0))
    w = gen_random_weights(net, 11)
    img = gen_random_image(net.input_shape, 11)
    a = img
    for lid in net.topo_order:
        a = apply_layer(net.by_id[lid], a, w.get(lid))
    assert network_forward_ref(net, w, img)[net.topo_order[-1]] == a


@given(st.integers(0, 10_000), st.integers(-3, 3))
def test_linearity_before_requantization(seed, a):
    rng = np.random.default_rng(seed)
    x = rng.integers(-40, 40, size=(3, 5, 5))
    w = WeightTensor(rng.integers(-128, 128, size=(2, 3, 3, 3)), None, 0, 0)
    layer = conv(m=2)
    base = conv2d_accumulators(ActivationTensor(x, 10, 0), w, layer)
    assert np.array_equal(conv2d_accumulators(ActivationTensor(a * x, 10, 0), w, layer), a * base)


def test_pruned_equals_skipped_macs():
    net = chain(TensorShape(5, 5, 16), [conv(m=8)])
    w = gen_random_weights(net, 9)
    pw, masks = prune_network(net, w, PruneConfig())
    fi = gen_random_image(net.input_shape, 9)
    acc = conv2d_accumulators(fi, pw["x"], net.by_id["x"])
    # explicit loop over surviving weights only
    pad = np.pad(fi.values, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(acc)
    for m, n, i, j in zip(*np.nonzero(masks["x"])):
        ref[m] += w["x"].values[m, n, i, j] * pad[n, i:i + 5, j:j + 5]
    ref += w["x"].bias_or_zero(8)[:, None, None]
    assert np.array_equal(acc, ref)


def test_accumulator_width():
    check_accumulator_width(conv(m=1), 1024, 8, 8)
    check_accumulator_width(conv(k=1, m=1), 1024, 10, 10)
    with pytest.raises(AccumulatorOverflow):
        check_accumulator_width(conv(m=1), 1024, 10, 10)


@pytest.mark.parametrize("k,n,bits", [(3, 1024, 8), (1, 1024, 10), (3, 256, 9), (3, 32, 10)])
def test_declared_widths_never_overflow(k, n, bits):
    layer = conv(k=k, pad="valid")
    check_accumulator_width(layer, n, bits, bits)
    lo = -(1 << (bits - 1))
    fi = ActivationTensor(np.full((n, k, k), lo), bits, 0)
    w = WeightTensor(np.full((1, n, k, k), lo), None, 0, 0, bits)
    assert conv2d_accumulators(fi, w, layer).item() == k * k * n * lo * lo


def test_oracle_matches_brute_force_small_corpus():
    for seed in range(20):
        net = gen_random_net(RandomNetSpec(seed=seed))
        w = gen_random_weights(net, seed)
        img = gen_random_image(net.input_shape, seed)
        assert network_forward_ref(net, w, img) == brute_force_forward(net, w, img)
