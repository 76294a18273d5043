"""Seeded generators and an independent brute-force forward pass.

``brute_force_forward`` deliberately shares no code with :mod:`oracle`: it
derives padding, walks every output position with explicit bounds checks
and requantizes with plain Python integers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compress import QuantConfig
from .netspec import INPUT, LayerSpec, NetworkSpec, TensorShape, infer_shapes
from .tensors import ActivationTensor, WeightTensor


@dataclass(frozen=True)
class RandomNetSpec:
    seed: int = 0
    min_depth: int = 1
    max_depth: int = 4
    max_channels: int = 32
    min_size: int = 3
    max_size: int = 32
    kernels: tuple = (1, 3)
    strides: tuple = (1, 2)
    paddings: tuple = ("same", "valid")
    pool_kernels: tuple = (2, 3)
    branch_prob: float = 0.25
    allow_pools: bool = True


def gen_random_net(spec=RandomNetSpec()):
    rng = np.random.default_rng(spec.seed)
    h = int(rng.integers(spec.min_size, spec.max_size + 1))
    w = int(rng.integers(spec.min_size, spec.max_size + 1)) if rng.random() < 0.3 else h
    c = int(rng.integers(1, spec.max_channels + 1))
    depth = int(rng.integers(spec.min_depth, spec.max_depth + 1))
    layers, edges, taps = [], [], []
    shapes = {INPUT: (h, w, c)}
    order = [INPUT]
    kinds = ["Conv", "Conv", "DepthwiseConv"] + (["MaxPool", "AvgPool"] if spec.allow_pools else [])
    while len(layers) < depth:
        lid = f"l{len(layers)}"
        if len(order) > 1 and rng.random() < spec.branch_prob:
            src = order[int(rng.integers(0, len(order) - 1))]
        else:
            src = order[-1]
        sh, sw, sc = shapes[src]
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "Conv":
            k = int(rng.choice(spec.kernels))
        elif kind == "DepthwiseConv":
            k = 3
        else:
            k = int(rng.choice(spec.pool_kernels))
        stride = int(rng.choice(spec.strides))
        padding = str(rng.choice(spec.paddings))
        if padding == "valid" and (sh < k or sw < k):
            padding = "same"
        out_c = int(rng.integers(1, spec.max_channels + 1)) if kind == "Conv" else None
        act = str(rng.choice(["none", "relu", "relu6"]))
        layer = LayerSpec(lid, kind, k, stride, padding, out_c, bool(rng.random() < 0.8), act)
        if padding == "same":
            oh, ow = -(-sh // stride), -(-sw // stride)
        else:
            oh, ow = (sh - k) // stride + 1, (sw - k) // stride + 1
        if src != order[-1] and src != INPUT and not any(t[0] == src for t in taps):
            taps.append((src, f"t{len(taps)}"))
        layers.append(layer)
        edges.append((src, lid))
        shapes[lid] = (oh, ow, out_c if kind == "Conv" else sc)
        order.append(lid)
    net = NetworkSpec(TensorShape(h, w, c), layers, edges, taps, name=f"random-{spec.seed}")
    infer_shapes(net)
    return net


def output_shift(kernel, fan_in, weight_bits):
    """Requantization shift that keeps output spread close to the input's."""
    return max(0, round(math.log2(math.sqrt(kernel * kernel * fan_in)) + weight_bits - 1 - 0.8))


def gen_random_weights(net, seed, quant=QuantConfig(), in_scale_exp=None):
    """Uniform weights over the full quantized range, per-layer exponents.

    Returns {layer id: WeightTensor}; pools get no entry.
    """
    rng = np.random.default_rng(seed)
    bw, ba = quant.weight_bits, quant.activation_bits
    wlo, whi = -(1 << (bw - 1)), (1 << (bw - 1)) - 1
    scale = {INPUT: -(ba - 1) if in_scale_exp is None else in_scale_exp}
    shapes = net.shapes
    out = {}
    for lid in net.topo_order:
        layer = net.by_id[lid]
        n = shapes[lid][0].channels
        e_in = scale[net.producer_of[lid]]
        if not layer.has_weights:
            scale[lid] = e_in
            continue
        k = layer.kernel
        if layer.kind == "Conv":
            shape, fan_in, m = (layer.out_channels, n, k, k), n, layer.out_channels
        else:
            shape, fan_in, m = (n, k, k), 1, n
        values = rng.integers(wlo, whi + 1, size=shape, dtype=np.int64)
        bias = None
        if layer.has_bias:
            lim = 1 << (ba + bw - 2)
            bias = rng.integers(-lim, lim + 1, size=m, dtype=np.int64)
        e_w = -(bw - 1)
        e_out = e_in + e_w + output_shift(k, fan_in, bw)
        out[lid] = WeightTensor(values, bias, e_w, e_out, bw)
        scale[lid] = e_out
    return out


def gen_random_image(shape, seed, bits=8, scale_exp=None):
    rng = np.random.default_rng(seed)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    vals = rng.integers(lo, hi + 1, size=(shape.channels, shape.height, shape.width), dtype=np.int64)
    return ActivationTensor(vals, bits, -(bits - 1) if scale_exp is None else scale_exp)


# brute force ---------------------------------------------------------------

def _geometry(layer, h, w):
    k, s = layer.kernel, layer.stride
    if layer.padding == "valid":
        return (h - k) // s + 1, (w - k) // s + 1, 0, 0
    oh = (h + s - 1) // s
    ow = (w + s - 1) // s
    extra_h = (oh - 1) * s + k - h
    extra_w = (ow - 1) * s + k - w
    top = extra_h // 2 if extra_h > 0 else 0
    left = extra_w // 2 if extra_w > 0 else 0
    return oh, ow, top, left


def _requant_int(v, shift, bits, activation, out_exp):
    if shift > 0:
        v = (v + 2 ** (shift - 1)) // 2 ** shift
    elif shift < 0:
        v = v * 2 ** (-shift)
    if activation == "relu" and v < 0:
        v = 0
    elif activation == "relu6":
        top = int(6 * 2.0 ** (-out_exp)) if out_exp > 0 else 6 * 2 ** (-out_exp)
        v = min(max(v, 0), top)
    return min(max(v, -(2 ** (bits - 1))), 2 ** (bits - 1) - 1)


def _brute_layer(layer, x, wt, in_exp, bits):
    c, h, w = x.shape
    oh, ow, top, left = _geometry(layer, h, w)
    k, s = layer.kernel, layer.stride
    m = layer.out_channels if layer.kind == "Conv" else c
    out = np.zeros((m, oh, ow), dtype=np.int64)
    if layer.has_weights:
        out_exp = wt.out_scale_exp
        acc_exp = in_exp + wt.scale_exp
        bias = [int(b) for b in wt.bias] if wt.bias is not None else [0] * m
    else:
        out_exp = acc_exp = in_exp
    for oy in range(oh):
        for ox in range(ow):
            acc = np.zeros(m, dtype=np.int64)
            best = None
            count = 0
            for i in range(k):
                r = oy * s + i - top
                if r < 0 or r >= h:
                    continue
                for j in range(k):
                    col = ox * s + j - left
                    if col < 0 or col >= w:
                        continue
                    px = x[:, r, col]
                    count += 1
                    if layer.kind == "Conv":
                        acc += wt.values[:, :, i, j] @ px
                    elif layer.kind == "DepthwiseConv":
                        acc += wt.values[:, i, j] * px
                    elif layer.kind == "MaxPool":
                        best = px.copy() if best is None else np.maximum(best, px)
                    else:
                        acc += px
            for ch in range(m):
                if layer.kind == "MaxPool":
                    v = int(best[ch])
                elif layer.kind == "AvgPool":
                    tot = int(acc[ch])
                    v = abs(tot) // count
                    v = -v if tot < 0 else v
                else:
                    v = int(acc[ch]) + bias[ch]
                out[ch, oy, ox] = _requant_int(v, out_exp - acc_exp, bits, layer.activation, out_exp)
    return out, out_exp


def brute_force_forward(net, weights, image, keep_all=False):
    vals = {INPUT: (image.values, image.scale_exp)}
    pending = [INPUT]
    done = {INPUT}
    results = {}
    while pending:
        src = pending.pop(0)
        for dst in [d for (p, d) in net.edges if p == src]:
            layer = next(l for l in net.layers if l.id == dst)
            x, e = vals[src]
            y, e_out = _brute_layer(layer, x, weights.get(dst), e, image.bits)
            vals[dst] = (y, e_out)
            results[dst] = ActivationTensor(y, image.bits, e_out)
            if dst not in done:
                done.add(dst)
                pending.append(dst)
    if keep_all:
        return results
    out = {}
    for layer_id, head in net.taps:
        out[head] = results[layer_id]
    for l in net.layers:
        if not any(p == l.id for p, _ in net.edges):
            out.setdefault(l.id, results[l.id])
    return out


def gen_random_schedule(net, seed, prune=None):
    """A valid schedule with random groupings and intervals.

    Consumers of one producer share the producer's output grouping; I_o is
    drawn anywhere in the range check_rate allows.
    """
    from .schedule import LayerSchedule, Schedule, StreamConfig, divisors, pe_config

    rng = np.random.default_rng(seed)
    shapes = net.shapes
    groups = {}
    for lid in net.topo_order:
        src = net.producer_of[lid]
        if src not in groups:
            n = shapes[lid][0].channels
            choices = divisors(n)
            if prune is not None and net.by_id[lid].kind == "Conv" and n % prune.group_size == 0:
                choices = [g for g in choices if (n // g) % prune.group_size == 0]
            groups[src] = int(rng.choice(choices))
    layers = {}
    for lid in net.topo_order:
        layer = net.by_id[lid]
        i, o = shapes[lid]
        g_i = groups[net.producer_of[lid]]
        if layer.kind == "Conv":
            i_i = int(rng.choice(divisors(layer.out_channels)[:4]))
        else:
            i_i = int(rng.integers(1, 5))
        g_o = groups.get(lid, int(rng.choice(divisors(o.channels))))
        s2 = layer.stride ** 2
        if s2 * g_i * i_i < g_o:
            if layer.kind == "Conv":
                i_i = next(d for d in divisors(layer.out_channels) if s2 * g_i * d >= g_o)
            else:
                i_i = -(-g_o // (s2 * g_i))
        top = max(1, (layer.stride ** 2 * g_i * i_i) // g_o)
        i_o = int(rng.integers(1, top + 1))
        st = StreamConfig(i.channels // g_i, g_i, i_i, o.channels // g_o, g_o, i_o)
        layers[lid] = LayerSchedule(st, pe_config(layer, st))
    first = net.consumers_of[INPUT][0]
    return Schedule(layers, layers[first].stream.n_i)
