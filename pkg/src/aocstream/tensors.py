"""Fixed-point tensor containers and the golden-vector dump format.

Dump format: one ASCII header line, then the values as flat little-endian
integers in (channel, row, col) order::

    aocstream-tensor/1 kind=activation shape=3,8,8 bits=8 scale_exp=-7 dtype=<i2\\n
    <raw bytes>
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .netspec import TensorShape, atomic_write

DUMP_MAGIC = "aocstream-tensor/1"


def int_range(bits):
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


@dataclass
class ActivationTensor:
    values: np.ndarray  # (C, H, W) int64
    bits: int
    scale_exp: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 3:
            raise ValueError("activation values must be (channels, rows, cols)")
        lo, hi = int_range(self.bits)
        if self.values.size and (self.values.min() < lo or self.values.max() > hi):
            raise ValueError(f"activation values exceed signed {self.bits}-bit range")

    @property
    def shape(self):
        c, h, w = self.values.shape
        return TensorShape(h, w, c)

    def __eq__(self, other):
        return (isinstance(other, ActivationTensor) and self.bits == other.bits
                and self.scale_exp == other.scale_exp
                and np.array_equal(self.values, other.values))

    def to_float(self):
        return self.values.astype(np.float64) * 2.0 ** self.scale_exp


@dataclass
class WeightTensor:
    """Quantized weights of one Conv or DepthwiseConv layer.

    ``values`` is (M, N, K, K) for Conv and (N, K, K) for depthwise.  ``bias``
    is already in accumulator scale (``in_scale_exp + scale_exp``).
    ``out_scale_exp`` is the layer's output activation exponent.
    """
    values: np.ndarray
    bias: np.ndarray | None
    scale_exp: int
    out_scale_exp: int
    bits: int = 8

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.int64)
        lo, hi = int_range(self.bits)
        if self.values.size and (self.values.min() < lo or self.values.max() > hi):
            raise ValueError(f"weight values exceed signed {self.bits}-bit range")

    @property
    def depthwise(self):
        return self.values.ndim == 3

    def bias_or_zero(self, m):
        return np.zeros(m, dtype=np.int64) if self.bias is None else self.bias

    def __eq__(self, other):
        if not isinstance(other, WeightTensor):
            return NotImplemented
        bias_eq = (self.bias is None and other.bias is None) or (
            self.bias is not None and other.bias is not None
            and np.array_equal(self.bias, other.bias))
        return (bias_eq and np.array_equal(self.values, other.values)
                and (self.scale_exp, self.out_scale_exp, self.bits)
                == (other.scale_exp, other.out_scale_exp, other.bits))


# dump format -------------------------------------------------------------

def _dtype_for(bits):
    if bits <= 8:
        return "<i1"
    if bits <= 16:
        return "<i2"
    if bits <= 32:
        return "<i4"
    return "<i8"


def encode_dump(values, bits, scale_exp, kind="activation", extra=None):
    values = np.asarray(values)
    dtype = _dtype_for(bits)
    fields = [DUMP_MAGIC, f"kind={kind}", "shape=" + ",".join(map(str, values.shape)),
              f"bits={bits}", f"scale_exp={scale_exp}", f"dtype={dtype}"]
    for k, v in (extra or {}).items():
        fields.append(f"{k}={v}")
    header = " ".join(fields) + "\n"
    return header.encode("ascii") + values.astype(dtype).tobytes()


def decode_dump(blob):
    nl = blob.index(b"\n")
    header = blob[:nl].decode("ascii").split()
    if not header or header[0] != DUMP_MAGIC:
        raise ValueError("not a tensor dump")
    meta = dict(f.split("=", 1) for f in header[1:])
    shape = tuple(int(x) for x in meta["shape"].split(",") if x)
    data = np.frombuffer(blob[nl + 1:], dtype=meta["dtype"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"dump holds {data.size} values, header says {shape}")
    meta["bits"] = int(meta["bits"])
    meta["scale_exp"] = int(meta["scale_exp"])
    return data.astype(np.int64).reshape(shape), meta


def save_activation(t, path):
    atomic_write(path, encode_dump(t.values, t.bits, t.scale_exp), mode="wb")


def load_activation(path):
    with open(path, "rb") as f:
        values, meta = decode_dump(f.read())
    return ActivationTensor(values, meta["bits"], meta["scale_exp"])


def save_weights(w, path):
    """Write ``<path>`` (values) and ``<path>.bias`` when the layer has a bias."""
    atomic_write(path, encode_dump(w.values, w.bits, w.scale_exp, "weight",
                                   {"out_scale_exp": w.out_scale_exp}), mode="wb")
    if w.bias is not None:
        atomic_write(path + ".bias", encode_dump(w.bias, 64, w.scale_exp, "bias"), mode="wb")


def load_weights(path):
    with open(path, "rb") as f:
        values, meta = decode_dump(f.read())
    bias = None
    if os.path.exists(path + ".bias"):
        with open(path + ".bias", "rb") as f:
            bias, _ = decode_dump(f.read())
    return WeightTensor(values, bias, meta["scale_exp"], int(meta["out_scale_exp"]), meta["bits"])
