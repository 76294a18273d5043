"""Reference fixed-point semantics of every layer kind (whole-frame, not streamed).

Accumulation is exact in int64 and must fit the 32-bit accumulator of the
hardware; results are requantized with round-half-up shifts, clamped by the
layer activation and saturated to the activation width.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .compress import requantize
from .errors import AccumulatorOverflow, ShapeMismatch
from .netspec import INPUT, output_hw, padding_amounts
from .tensors import ActivationTensor, WeightTensor  # noqa: F401  (re-exported)

ACC_BITS = 32
ACC_MIN, ACC_MAX = -(1 << (ACC_BITS - 1)), (1 << (ACC_BITS - 1)) - 1


def accumulator_bits_needed(kernel, in_channels, act_bits, weight_bits):
    return math.ceil(math.log2(kernel * kernel * in_channels)) + act_bits + weight_bits


def check_accumulator_width(layer, in_channels, act_bits, weight_bits):
    n = 1 if layer.kind == "DepthwiseConv" else in_channels
    need = accumulator_bits_needed(layer.kernel, n, act_bits, weight_bits)
    if need > ACC_BITS:
        raise AccumulatorOverflow(
            f"layer {layer.id}: needs {need} accumulator bits, hardware has {ACC_BITS}")


def check_accumulators(acc, layer_id):
    if acc.size and (acc.min() < ACC_MIN or acc.max() > ACC_MAX):
        raise AccumulatorOverflow(f"layer {layer_id}: accumulator exceeds {ACC_BITS} bits")


def _pad(values, layer, fill=0):
    c, h, w = values.shape
    pt, pb, pl, pr = padding_amounts(layer, h, w)
    if not (pt or pb or pl or pr):
        return values
    return np.pad(values, ((0, 0), (pt, pb), (pl, pr)), constant_values=fill)


def _out_hw(fi, layer):
    oh, ow = output_hw(layer, fi.values.shape[1], fi.values.shape[2])
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"layer {layer.id}: input {fi.values.shape[1:]} smaller than kernel")
    return oh, ow


def conv2d_accumulators(fi, w, layer):
    """Wide accumulators including bias, before requantization."""
    if layer.kind != "Conv":
        raise ShapeMismatch(f"layer {layer.id} is {layer.kind}, not Conv")
    n = fi.values.shape[0]
    expect = (layer.out_channels, n, layer.kernel, layer.kernel)
    if w.values.shape != expect:
        raise ShapeMismatch(f"layer {layer.id}: weights {w.values.shape}, expected {expect}")
    oh, ow = _out_hw(fi, layer)
    acc = kernels.conv_accumulate(np.ascontiguousarray(_pad(fi.values, layer)),
                                  np.ascontiguousarray(w.values), layer.stride, oh, ow)
    acc = acc + w.bias_or_zero(layer.out_channels)[:, None, None]
    check_accumulators(acc, layer.id)
    return acc


def conv2d_ref(fi, w, layer):
    acc = conv2d_accumulators(fi, w, layer)
    out = requantize(acc, fi.scale_exp + w.scale_exp, w.out_scale_exp, fi.bits, layer.activation)
    return ActivationTensor(out, fi.bits, w.out_scale_exp)


def depthwise_accumulators(fi, w, layer):
    if layer.kind != "DepthwiseConv":
        raise ShapeMismatch(f"layer {layer.id} is {layer.kind}, not DepthwiseConv")
    n = fi.values.shape[0]
    expect = (n, layer.kernel, layer.kernel)
    if w.values.shape != expect:
        raise ShapeMismatch(f"layer {layer.id}: weights {w.values.shape}, expected {expect}")
    oh, ow = _out_hw(fi, layer)
    acc = kernels.depthwise_accumulate(np.ascontiguousarray(_pad(fi.values, layer)),
                                       np.ascontiguousarray(w.values), layer.stride, oh, ow)
    acc = acc + w.bias_or_zero(n)[:, None, None]
    check_accumulators(acc, layer.id)
    return acc


def depthwise_ref(fi, w, layer):
    acc = depthwise_accumulators(fi, w, layer)
    out = requantize(acc, fi.scale_exp + w.scale_exp, w.out_scale_exp, fi.bits, layer.activation)
    return ActivationTensor(out, fi.bits, w.out_scale_exp)


def trunc_div(num, den):
    """Integer division rounding toward zero."""
    q = np.abs(num) // den
    return np.where(num < 0, -q, q)


def pool_ref(fi, layer):
    """Max or average pooling over real (non-padding) window positions."""
    if not layer.is_pool:
        raise ShapeMismatch(f"layer {layer.id} is {layer.kind}, not a pool")
    oh, ow = _out_hw(fi, layer)
    k, s = layer.kernel, layer.stride
    sl = (slice(None), slice(None, (oh - 1) * s + 1, s), slice(None, (ow - 1) * s + 1, s))
    valid = _pad(np.ones((1,) + fi.values.shape[1:], dtype=np.int64), layer)
    vwin = sliding_window_view(valid, (k, k), axis=(1, 2))[sl]
    if layer.kind == "MaxPool":
        lo = np.iinfo(np.int64).min
        win = sliding_window_view(_pad(fi.values, layer, fill=lo), (k, k), axis=(1, 2))[sl]
        v = win.max(axis=(3, 4))
    else:
        win = sliding_window_view(_pad(fi.values, layer), (k, k), axis=(1, 2))[sl]
        v = trunc_div(win.sum(axis=(3, 4)), vwin.sum(axis=(3, 4)))
    out = requantize(v, fi.scale_exp, fi.scale_exp, fi.bits, layer.activation)
    return ActivationTensor(out, fi.bits, fi.scale_exp)


def apply_layer(layer, fi, w=None):
    if layer.kind == "Conv":
        return conv2d_ref(fi, w, layer)
    if layer.kind == "DepthwiseConv":
        return depthwise_ref(fi, w, layer)
    return pool_ref(fi, layer)


def network_forward_ref(net, weights, image, keep_all=False):
    """Run the whole network; returns {tap head id / sink layer id: tensor}.

    With ``keep_all`` the result maps every layer id to its output instead.
    """
    expect = net.input_shape
    if image.shape != expect:
        raise ShapeMismatch(f"image {image.shape} does not match network input {expect}")
    acts = {INPUT: image}
    for lid in net.topo_order:
        layer = net.by_id[lid]
        acts[lid] = apply_layer(layer, acts[net.producer_of[lid]], weights.get(lid))
    if keep_all:
        del acts[INPUT]
        return acts
    return {key: acts[src] for key, src in net.output_sources().items()}
