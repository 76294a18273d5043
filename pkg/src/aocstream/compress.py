"""Accelerator-aware structured pruning and power-of-two fixed-point quantization.

Pruning keeps ``keep_per_group`` weights in every aligned group of
``group_size`` consecutive input channels, separately for each
(output channel, kernel row, kernel column).  Only Conv layers whose input
channel count reaches ``group_size`` are pruned; depthwise and the RGB
input layer stay dense.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensors import ActivationTensor, WeightTensor, int_range


@dataclass(frozen=True)
class PruneConfig:
    group_size: int = 8
    keep_per_group: int = 2
    per_layer_overrides: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.group_size < 1 or self.keep_per_group < 1:
            raise ValueError("group_size and keep_per_group must be positive")
        for lid, keep in {None: self.keep_per_group, **self.per_layer_overrides}.items():
            if not 1 <= keep <= self.group_size:
                raise ValueError(f"keep {keep} for {lid or 'default'} outside 1..{self.group_size}")

    @classmethod
    def parse(cls, text, overrides=None):
        """``"8:2"`` -> group 8, keep 2.  ``"none"`` -> keep everything (8:8)."""
        if text in (None, "", "none"):
            return cls(8, 8, dict(overrides or {}))
        try:
            g, k = (int(x) for x in text.split(":"))
        except ValueError:
            raise ValueError(f"prune spec must look like G:K, got {text!r}") from None
        return cls(g, k, dict(overrides or {}))

    def keep_for(self, layer_id):
        return self.per_layer_overrides.get(layer_id, self.keep_per_group)

    def ratio(self, layer_id=None):
        return 1 - self.keep_for(layer_id) / self.group_size

    @property
    def label(self):
        return f"{self.group_size}:{self.keep_per_group}"


DENSE = PruneConfig(8, 8)


@dataclass(frozen=True)
class QuantConfig:
    activation_bits: int = 8
    weight_bits: int = 8

    def __post_init__(self):
        for name in ("activation_bits", "weight_bits"):
            if not 8 <= getattr(self, name) <= 10:
                raise ValueError(f"{name} must be within 8..10")


def is_prunable(layer, in_channels, cfg):
    return layer.kind == "Conv" and in_channels >= cfg.group_size


def tail_keep(size, group_size, keep):
    return math.ceil(keep * size / group_size)


def kept_along_channels(in_channels, group_size, keep):
    """Survivors in one (m, ki, kj) column of ``in_channels`` weights."""
    full, tail = divmod(in_channels, group_size)
    return full * keep + (tail_keep(tail, group_size, keep) if tail else 0)


def layer_kept_weights(layer, in_channels, cfg):
    """(stored weight count, dense weight count, mask bits) for one layer."""
    k2 = layer.kernel * layer.kernel
    if layer.kind == "Conv":
        m = layer.out_channels
        dense = k2 * in_channels * m
        if is_prunable(layer, in_channels, cfg):
            kept = k2 * m * kept_along_channels(in_channels, cfg.group_size, cfg.keep_for(layer.id))
            return kept, dense, dense
        return dense, dense, 0
    if layer.kind == "DepthwiseConv":
        return k2 * in_channels, k2 * in_channels, 0
    return 0, 0, 0


def prune_values(values, group_size, keep):
    """Prune a (M, N, K, K) array; returns (pruned values, boolean mask)."""
    values = np.asarray(values, dtype=np.int64)
    n = values.shape[1]
    mask = np.zeros(values.shape, dtype=bool)
    for start in range(0, n, group_size):
        stop = min(start + group_size, n)
        size = stop - start
        k = keep if size == group_size else tail_keep(size, group_size, keep)
        block = np.abs(values[:, start:stop])
        # stable sort on descending magnitude keeps the lower channel on ties
        order = np.argsort(-block, axis=1, kind="stable")
        sel = np.zeros(block.shape, dtype=bool)
        np.put_along_axis(sel, order[:, :k], True, axis=1)
        mask[:, start:stop] = sel
    return np.where(mask, values, 0), mask


def prune_weights(w, cfg, layer_id=None):
    """Prune a Conv WeightTensor; returns (WeightTensor, mask)."""
    if w.depthwise or w.values.shape[1] < cfg.group_size:
        return w, np.ones(w.values.shape, dtype=bool)
    vals, mask = prune_values(w.values, cfg.group_size, cfg.keep_for(layer_id))
    return WeightTensor(vals, w.bias, w.scale_exp, w.out_scale_exp, w.bits), mask


def prune_network(net, weights, cfg):
    """Prune every prunable layer; returns (weights, masks) dicts."""
    shapes = net.shapes
    out, masks = dict(weights), {}
    for lid, w in weights.items():
        layer = net.by_id[lid]
        if is_prunable(layer, shapes[lid][0].channels, cfg):
            out[lid], masks[lid] = prune_weights(w, cfg, lid)
    return out, masks


def pack_mask(mask):
    """One bit per weight in C order (output channel major), LSB first."""
    return np.packbits(np.asarray(mask, dtype=bool).ravel(), bitorder="little").tobytes()


def unpack_mask(blob, shape):
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="little")
    return bits[: int(np.prod(shape))].astype(bool).reshape(shape)


# fixed point ---------------------------------------------------------------

def shift_round_half_up(acc, shift):
    """Arithmetic right shift with round-half-up; left shift when negative."""
    acc = np.asarray(acc, dtype=np.int64)
    if shift > 0:
        return (acc + (1 << (shift - 1))) >> shift
    if shift < 0:
        return acc << (-shift)
    return acc.copy()


def relu6_limit(out_scale_exp):
    return 6 << -out_scale_exp if out_scale_exp <= 0 else 6 >> out_scale_exp


def requantize(acc, acc_scale_exp, out_scale_exp, bits, activation="none"):
    """Wide accumulator -> signed ``bits`` activation at ``out_scale_exp``."""
    v = shift_round_half_up(acc, out_scale_exp - acc_scale_exp)
    if activation == "relu":
        v = np.maximum(v, 0)
    elif activation == "relu6":
        v = np.clip(v, 0, relu6_limit(out_scale_exp))
    lo, hi = int_range(bits)
    return np.clip(v, lo, hi)


def scale_exp_for(max_abs, bits):
    """Smallest exponent e with max_abs <= 2**(bits-1) * 2**e (0 for all-zero)."""
    if max_abs == 0:
        return 0
    m, e = math.frexp(max_abs)  # max_abs = m * 2**e, 0.5 <= m < 1
    if m == 0.5:
        e -= 1
    return e - (bits - 1)


def quantize_array(x, bits, scale_exp=None):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    if scale_exp is None:
        scale_exp = scale_exp_for(float(np.max(np.abs(x))) if x.size else 0.0, bits)
    lo, hi = int_range(bits)
    q = np.floor(np.ldexp(x, -scale_exp) + 0.5)
    return np.clip(q, lo, hi).astype(np.int64), scale_exp


def quantize_weights(weights, bias, cfg, in_scale_exp, out_scale_exp):
    """Float weights (+ float bias) -> WeightTensor with bias in accumulator scale."""
    q, e = quantize_array(weights, cfg.weight_bits)
    qb = None
    if bias is not None:
        b = np.ldexp(np.asarray(bias, dtype=np.float64), -(in_scale_exp + e))
        qb = np.floor(b + 0.5).astype(np.int64)
    return WeightTensor(q, qb, e, out_scale_exp, cfg.weight_bits)


def quantize_image(image, cfg):
    """Float (C, H, W) image -> ActivationTensor."""
    q, e = quantize_array(image, cfg.activation_bits)
    return ActivationTensor(q, cfg.activation_bits, e)


# reporting -----------------------------------------------------------------

@dataclass
class SparsityRow:
    layer: str
    total_weights: int
    kept_weights: int
    nonzero_weights: int
    pruned_bytes: float

    @property
    def kept_fraction(self):
        return self.kept_weights / self.total_weights if self.total_weights else 0.0


@dataclass
class SparsityReport:
    rows: list
    weight_bits: int

    @property
    def total_weights(self):
        return sum(r.total_weights for r in self.rows)

    @property
    def kept_weights(self):
        return sum(r.kept_weights for r in self.rows)

    @property
    def kept_fraction(self):
        return self.kept_weights / self.total_weights if self.total_weights else 0.0

    @property
    def pruned_bytes(self):
        return sum(r.pruned_bytes for r in self.rows)


def sparsity_report(net, masks, weights=None, quant=QuantConfig(), only_pruned=False):
    """Per-layer kept fractions from masks; layers without a mask count as dense.

    ``pruned_bytes`` stores survivors at ``weight_bits`` plus one mask bit per
    weight for masked layers, the same accounting as the memory model.
    """
    shapes = net.shapes
    rows = []
    bw = quant.weight_bits
    for lid in net.topo_order:
        layer = net.by_id[lid]
        if not layer.has_weights:
            continue
        n = shapes[lid][0].channels
        k2 = layer.kernel ** 2
        total = k2 * n * (layer.out_channels if layer.kind == "Conv" else 1)
        if lid in masks:
            kept = int(np.count_nonzero(masks[lid]))
            nbytes = kept * bw / 8 + total / 8
        elif only_pruned:
            continue
        else:
            kept = total
            nbytes = total * bw / 8
        nz = int(np.count_nonzero(weights[lid].values)) if weights and lid in weights else kept
        rows.append(SparsityRow(lid, total, kept, nz, nbytes))
    return SparsityReport(rows, bw)
