import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from aocstream.compress import (DENSE, PruneConfig, QuantConfig, kept_along_channels,
                                pack_mask, prune_network, prune_values, prune_weights,
                                quantize_array, quantize_image, quantize_weights, requantize,
                                shift_round_half_up, sparsity_report, unpack_mask)
from aocstream.netspec import LayerSpec, TensorShape, chain
from aocstream.tensors import WeightTensor
from aocstream.testkit import gen_random_weights


def group_scan(values, group_size):
    """Max nonzeros in any aligned group along axis 1, counted directly."""
    worst = 0
    m, n = values.shape[:2]
    for o in range(m):
        for idx in np.ndindex(*values.shape[2:]):
            for start in range(0, n, group_size):
                col = [values[(o, c) + idx] for c in range(start, min(start + group_size, n))]
                worst = max(worst, sum(1 for v in col if v != 0))
    return worst


def test_top_two_by_magnitude():
    vals = np.array([5, -1, 0, 7, 2, -9, 3, 1]).reshape(1, 8, 1, 1)
    out, mask = prune_values(vals, 8, 2)
    assert out.ravel().tolist() == [0, 0, 0, 7, 0, -9, 0, 0]
    assert mask.sum() == 2


def test_keep_all_is_noop():
    vals = np.random.default_rng(0).integers(-128, 128, size=(4, 16, 3, 3))
    out, mask = prune_values(vals, 8, 8)
    assert np.array_equal(out, vals)
    assert mask.all()


def test_ties_keep_lower_channel():
    out, _ = prune_values(np.array([3, -3, 3, 3, 0, 0, 0, 0]).reshape(1, 8, 1, 1), 8, 2)
    assert out.ravel().tolist() == [3, -3, 0, 0, 0, 0, 0, 0]


def test_random_tensor_quarter_per_group():
    w = WeightTensor(np.random.default_rng(1).integers(-128, 128, size=(6, 32, 3, 3)), None, -7, -3)
    pruned, mask = prune_weights(w, PruneConfig())
    assert group_scan(pruned.values, 8) <= 2
    assert mask.sum() == w.values.size // 4


def test_tail_group_keeps_ceil_ratio():
    assert kept_along_channels(12, 8, 2) == 2 + 1
    vals = np.arange(1, 13).reshape(1, 12, 1, 1)
    out, _ = prune_values(vals, 8, 2)
    assert out.ravel().tolist() == [0] * 6 + [7, 8, 0, 0, 0, 12]


small = arrays(np.int64, st.tuples(st.integers(1, 3), st.integers(1, 20), st.just(1), st.just(2)),
               elements=st.integers(-128, 127))


@given(small, st.integers(1, 8))
def test_prune_idempotent(vals, keep):
    once, _ = prune_values(vals, 8, keep)
    twice, _ = prune_values(once, 8, keep)
    assert np.array_equal(once, twice)


@given(small, st.integers(1, 8), st.randoms(use_true_random=False))
def test_permutation_equivariance(vals, keep, rnd):
    # distinct magnitudes make the tie-break irrelevant
    vals = np.arange(1, vals.size + 1).reshape(vals.shape) * np.where(vals < 0, -1, 1)
    perm = np.arange(vals.shape[1])
    for start in range(0, len(perm), 8):
        block = list(perm[start:start + 8])
        rnd.shuffle(block)
        perm[start:start + 8] = block
    _, mask = prune_values(vals, 8, keep)
    _, pmask = prune_values(vals[:, perm], 8, keep)
    assert np.array_equal(pmask, mask[:, perm])


def test_mask_pack_round_trip():
    mask = np.random.default_rng(2).random((3, 9, 3, 3)) < 0.3
    blob = pack_mask(mask)
    assert len(blob) == -(-mask.size // 8)
    assert np.array_equal(unpack_mask(blob, mask.shape), mask)


def test_prune_spec_parsing():
    assert PruneConfig.parse("8:1").ratio() == 0.875
    assert PruneConfig.parse("none") == DENSE
    with pytest.raises(ValueError):
        PruneConfig.parse("8-2")
    with pytest.raises(ValueError):
        PruneConfig(8, 9)
    with pytest.raises(ValueError):
        QuantConfig(activation_bits=12)


def test_full_range_quantization():
    q, e = quantize_array(np.array([1.0, -0.5, 0.25]), 8)
    assert e == -7
    assert q.tolist() == [127, -64, 32]


def test_all_zero_quantization():
    q, e = quantize_array(np.zeros(5), 8)
    assert e == 0 and not q.any()


@given(arrays(np.float64, st.integers(1, 64), elements=st.floats(-100, 100, allow_subnormal=False)),
       st.sampled_from([8, 9, 10]))
def test_dequantization_error_bound(x, bits):
    q, e = quantize_array(x, bits)
    err = np.abs(q * 2.0 ** e - x)
    top = (1 << (bits - 1)) - 1
    # saturated values clip to top; their error is bounded by one step instead
    inside = np.abs(q) < top
    assert np.all(err[inside] <= 2.0 ** (e - 1))
    assert np.all(err <= 2.0 ** e)


def test_quantize_weights_bias_in_accumulator_scale():
    w = quantize_weights(np.array([[[[0.5]]]]), np.array([0.25]), QuantConfig(), -7, -5)
    assert w.scale_exp == -8 and w.values.item() == 127
    assert w.bias.item() == round(0.25 * 2 ** 15)


def test_quantize_image_rejects_nan():
    with pytest.raises(ValueError):
        quantize_image(np.array([[[np.nan]]]), QuantConfig())


def test_shift_rounds_half_up():
    assert shift_round_half_up(np.array([5, 6, -5, -6, -7]), 2).tolist() == [1, 2, -1, -1, -2]
    assert shift_round_half_up(np.array([3]), -2).tolist() == [12]


def test_requantize_clamps_and_saturates():
    acc = np.array([-1000, 100, 1000, 100000])
    assert requantize(acc, -14, -7, 8, "none").tolist() == [-8, 1, 8, 127]
    assert requantize(acc, -7, -4, 8, "relu6").tolist() == [0, 13, 96, 96]


def pure_conv_net(keep_overrides=None):
    layers = [LayerSpec(f"c{i}", "Conv", 3, 1, "same", 16, False, "relu") for i in range(3)]
    return chain(TensorShape(6, 6, 16), layers)


def test_sparsity_exactly_quarter():
    net = pure_conv_net()
    w = gen_random_weights(net, 3)
    _, masks = prune_network(net, w, PruneConfig())
    assert sparsity_report(net, masks).kept_fraction == 0.25
    _, masks = prune_network(net, w, PruneConfig(8, 1))
    assert sparsity_report(net, masks).kept_fraction == 0.125


def test_mixed_overrides_recount():
    net = pure_conv_net()
    w = gen_random_weights(net, 4)
    cfg = PruneConfig(8, 2, {"c1": 1, "c2": 4})
    pw, masks = prune_network(net, w, cfg)
    rep = sparsity_report(net, masks, pw)
    recount = sum(int(np.count_nonzero(m)) for m in masks.values())
    total = sum(m.size for m in masks.values())
    assert rep.kept_fraction == recount / total
    assert [r.kept_fraction for r in rep.rows] == [0.25, 0.125, 0.5]
    assert group_scan(pw["c1"].values, 8) <= 1


def test_first_and_depthwise_layers_stay_dense():
    net = chain(TensorShape(8, 8, 3), [
        LayerSpec("c0", "Conv", 3, 1, "same", 16, False, "relu"),
        LayerSpec("dw", "DepthwiseConv", 3, 1, "same", None, False, "relu"),
        LayerSpec("pw", "Conv", 1, 1, "same", 16, False, "relu")])
    _, masks = prune_network(net, gen_random_weights(net, 0), PruneConfig())
    assert list(masks) == ["pw"]
