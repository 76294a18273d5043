"""Analytic memory accounting: frame buffers, line buffers and weight storage.

All byte counts are integers.  Activation and weight storage is bit-packed,
so an ``n``-value buffer at ``b`` bits takes ``ceil(n * b / 8)`` bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

from .compress import DENSE, PruneConfig, QuantConfig, layer_kept_weights, is_prunable

MIB = 1 << 20
DEVICE_DB_ENV = "AOCSTREAM_DEVICE_DB"


def nbytes(count, bits):
    return -(-count * bits // 8)


# activations -----------------------------------------------------------------

def feature_maps(net):
    """(layer id, side, elements) for every layer input and output map."""
    out = []
    for lid in net.topo_order:
        i, o = net.shapes[lid]
        out.append((lid, "input", i.size))
        out.append((lid, "output", o.size))
    return out


def largest_feature_map(net):
    """(layer id, side, elements) of the largest map; first in topological order on ties."""
    best = None
    for entry in feature_maps(net):
        if best is None or entry[2] > best[2]:
            best = entry
    return best


def frame_buffer_size(net, bits=8, double_buffering=False):
    """Bytes of the single reusable frame buffer a layer-by-layer design needs."""
    best = largest_feature_map(net)
    size = nbytes(best[2], bits) if best else 0
    return 2 * size if double_buffering else size


def line_buffer_bytes(layer, in_shape, bits=8):
    """(K-1) input rows of one Conv / depthwise / pool block."""
    return nbytes((layer.kernel - 1) * in_shape.width * in_shape.channels, bits)


def line_buffer_size(net, bits=8):
    """(total bytes, {layer id: bytes}); blocks run in parallel so nothing is shared."""
    per_layer = {}
    for lid in net.topo_order:
        per_layer[lid] = line_buffer_bytes(net.by_id[lid], net.shapes[lid][0], bits)
    return sum(per_layer.values()), per_layer


# weights -------------------------------------------------------------------

@dataclass
class WeightMemory:
    dense_bytes: int
    survivor_bytes: int
    mask_bytes: int
    per_layer: dict = field(default_factory=dict)

    @property
    def pruned_bytes(self):
        return self.survivor_bytes + self.mask_bytes


def weight_memory(net, prune=DENSE, quant=QuantConfig()):
    """Dense and pruned weight storage.

    Pruned storage keeps survivors at ``weight_bits`` plus a one-bit mask per
    original weight in every pruned layer; layers that are not prunable are
    stored dense and carry no mask.  Biases are not counted.
    """
    bw = quant.weight_bits
    dense = kept = mask_bits = 0
    per_layer = {}
    for lid in net.topo_order:
        layer = net.by_id[lid]
        k, d, mbits = layer_kept_weights(layer, net.shapes[lid][0].channels, prune)
        dense += d
        kept += k
        mask_bits += mbits
        per_layer[lid] = (nbytes(d, bw), nbytes(k, bw) + nbytes(mbits, 1))
    return WeightMemory(nbytes(dense, bw), nbytes(kept, bw), nbytes(mask_bits, 1), per_layer)


# devices ----------------------------------------------------------------------

@dataclass(frozen=True)
class DeviceProfile:
    name: str
    on_chip_bytes: int
    notes: str = ""

    def __post_init__(self):
        if self.on_chip_bytes <= 0:
            raise ValueError(f"device {self.name}: on_chip_bytes must be positive")


def load_devices(path=None):
    """{name: DeviceProfile} from ``path``, $AOCSTREAM_DEVICE_DB, or the bundled table."""
    path = path or os.environ.get(DEVICE_DB_ENV)
    if path:
        with open(path) as f:
            doc = json.load(f)
    else:
        doc = json.loads(resources.files("aocstream").joinpath("data/devices.json").read_text())
    return {d["name"]: DeviceProfile(d["name"], int(d["on_chip_bytes"]), d.get("notes", ""))
            for d in doc["devices"]}


def get_device(name, path=None):
    devices = load_devices(path)
    try:
        return devices[name]
    except KeyError:
        raise ValueError(f"unknown device {name!r}; known: {sorted(devices)}") from None


@dataclass
class FitVerdict:
    fits: bool
    total_bytes: int
    margin_bytes: int
    breakdown: dict

    def line(self, device_name):
        word = "FITS" if self.fits else "DOES NOT FIT"
        return (f"{word} {device_name}: total {self.total_bytes} B "
                f"({self.total_bytes / MIB:.3f} MiB), margin {self.margin_bytes} B")


def fits_on_chip(net, prune, quant, device, architecture="line", accum_bytes=0,
                 double_buffering=False):
    """All-on-chip check.

    ``architecture="line"``: pruned weights + masks + line buffers (+ the
    schedule's accumulation/output buffers).  ``"frame"``: weights + one
    frame buffer, the layer-by-layer baseline.  ``prune=None`` means dense
    weights.
    """
    bits = quant.activation_bits
    wm = weight_memory(net, prune or DENSE, quant)
    weights = wm.dense_bytes if prune is None else wm.pruned_bytes
    if architecture == "line":
        act = line_buffer_size(net, bits)[0] + accum_bytes
    elif architecture == "frame":
        act = frame_buffer_size(net, bits, double_buffering)
    else:
        raise ValueError(f"architecture must be 'line' or 'frame', not {architecture!r}")
    total = weights + act
    return FitVerdict(total <= device.on_chip_bytes, total, device.on_chip_bytes - total,
                      {"weights": weights, "activations": act})


# reports -----------------------------------------------------------------------

@dataclass
class MemoryRow:
    layer: str
    weight_bytes: int
    pruned_weight_bytes: int
    frame_in_bytes: int
    frame_out_bytes: int
    line_buffer_bytes: int


@dataclass
class MemoryReport:
    rows: list
    weight_total: int
    weight_pruned_total: int
    frame_buffer_max: int
    frame_buffer_layer: str
    line_buffer_sum: int
    assumptions: dict

    @property
    def line_to_frame(self):
        return self.line_buffer_sum / self.frame_buffer_max if self.frame_buffer_max else 0.0


def memory_report(net, prune=PruneConfig(), quant=QuantConfig(), double_buffering=False):
    bits = quant.activation_bits
    wm = weight_memory(net, prune, quant)
    _, lines = line_buffer_size(net, bits)
    rows = []
    for lid in net.topo_order:
        i, o = net.shapes[lid]
        dense, pruned = wm.per_layer[lid]
        rows.append(MemoryRow(lid, dense, pruned, nbytes(i.size, bits), nbytes(o.size, bits),
                              lines[lid]))
    big = largest_feature_map(net)
    return MemoryReport(
        rows=rows,
        weight_total=wm.dense_bytes,
        weight_pruned_total=wm.pruned_bytes,
        frame_buffer_max=frame_buffer_size(net, bits, double_buffering),
        frame_buffer_layer=f"{big[0]}:{big[1]}" if big else "",
        line_buffer_sum=sum(lines.values()),
        assumptions={
            "activation_bits": bits,
            "weight_bits": quant.weight_bits,
            "pruning": prune.label,
            "double_buffering": double_buffering,
            "mask_overhead": "1 bit per weight of pruned layers",
        },
    )


ROW_FIELDS = ("layer", "weight_bytes", "pruned_weight_bytes", "frame_in_bytes",
              "frame_out_bytes", "line_buffer_bytes")


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in report.rows:
        w.writerow([getattr(r, f) for f in ROW_FIELDS])
    w.writerow(["TOTAL", report.weight_total, report.weight_pruned_total,
                report.frame_buffer_max, report.frame_buffer_max, report.line_buffer_sum])
    return buf.getvalue()


SWEEP_FIELDS = ("size", "weight_bytes", "pruned_weight_bytes", "activation_bytes",
                "line_buffer_bytes")


def sweep_row(size, net, prune=PruneConfig(), quant=QuantConfig(), double_buffering=False):
    rep = memory_report(net, prune, quant, double_buffering)
    return {"size": size, "weight_bytes": rep.weight_total,
            "pruned_weight_bytes": rep.weight_pruned_total,
            "activation_bytes": rep.frame_buffer_max, "line_buffer_bytes": rep.line_buffer_sum}


def scaling_sweep(builder, sizes, prune=PruneConfig(), quant=QuantConfig(),
                  double_buffering=False):
    """One row per input size; ``builder(size)`` returns the network."""
    return [sweep_row(s, builder(s), prune, quant, double_buffering) for s in sizes]


def rows_csv(rows, fields):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def is_line_buffered(layer):
    return layer.kernel > 1


__all__ = [
    "DeviceProfile", "FitVerdict", "MemoryReport", "MemoryRow", "WeightMemory",
    "feature_maps", "fits_on_chip", "frame_buffer_size", "get_device", "is_prunable",
    "largest_feature_map", "line_buffer_size", "load_devices", "memory_report",
    "scaling_sweep", "weight_memory", "math",
]
