"""Operation counts, analytic throughput and DSP efficiency.

Ops are multiply-add pairs counted twice (one multiply, one add); bias
additions and requantization are not counted.  Efficiencies are exact
rationals.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .compress import layer_kept_weights
from .schedule import layer_period, schedule_period


def _q(x):
    """Exact rational from an int, float or string."""
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


@dataclass(frozen=True)
class OpsCount:
    dense: int
    pruned: int

    @property
    def ratio(self):
        """dense / pruned"""
        return Fraction(self.dense, self.pruned) if self.pruned else Fraction(0)


def layer_macs(layer, in_shape, out_shape):
    """Dense MACs of one layer per frame (pools do none)."""
    k2 = layer.kernel * layer.kernel
    if layer.kind == "Conv":
        return out_shape.pixels * k2 * in_shape.channels * layer.out_channels
    if layer.kind == "DepthwiseConv":
        return out_shape.pixels * k2 * in_shape.channels
    return 0


def ops_per_frame(net, masks=None, prune=None):
    """Dense and surviving ops per frame.

    Survivors come from explicit ``masks`` ({layer id: bool array}) when given,
    else from the analytic keep counts of ``prune``; with neither the network
    is dense.
    """
    dense = pruned = 0
    for lid in net.topo_order:
        layer = net.by_id[lid]
        i, o = net.shapes[lid]
        d = layer_macs(layer, i, o)
        dense += d
        if masks is not None and lid in masks:
            pruned += o.pixels * int(np.count_nonzero(masks[lid]))
        elif prune is not None and layer.has_weights:
            kept, _, _ = layer_kept_weights(layer, i.channels, prune)
            pruned += o.pixels * kept
        else:
            pruned += d
    return OpsCount(2 * dense, 2 * pruned)


def analytic_fps(net, schedule, clock_hz):
    """Steady-state frames per second: one frame per period of the slowest block."""
    period = schedule_period(net, schedule)
    return Fraction(_q(clock_hz), period) if period else Fraction(0)


def bottleneck(net, schedule):
    """(layer id, frame cycles) of the slowest block."""
    return max(((lid, layer_period(net.by_id[lid], *net.shapes[lid], schedule[lid].stream))
                for lid in net.topo_order), key=lambda t: t[1])


def dsp_efficiency(ops_per_frame, fps, dsp_count, clock_hz):
    """Achieved ops per second over the peak of ``dsp_count`` units doing 2 ops per cycle."""
    if not fps:
        return Fraction(0)
    return _q(ops_per_frame) * _q(fps) / (2 * _q(dsp_count) * _q(clock_hz))


@dataclass(frozen=True)
class PerfReport:
    ops_per_frame_pruned: int
    ops_per_frame_dense: int
    fps: Fraction
    dsp_count: int
    clock_hz: int
    efficiency_1: Fraction
    efficiency_2: Fraction

    def row(self):
        return {
            "ops_per_frame_pruned": self.ops_per_frame_pruned,
            "ops_per_frame_dense": self.ops_per_frame_dense,
            "fps": f"{float(self.fps):.3f}",
            "dsp_count": self.dsp_count,
            "clock_hz": self.clock_hz,
            "efficiency_1": f"{float(self.efficiency_1):.6f}",
            "efficiency_2": f"{float(self.efficiency_2):.6f}",
        }


PERF_FIELDS = tuple(PerfReport.__dataclass_fields__)


def perf_report(ops, fps, dsp_count, clock_hz):
    """Both efficiencies: over surviving ops, and over dense ops (zero-skipped work counted)."""
    return PerfReport(
        ops_per_frame_pruned=ops.pruned,
        ops_per_frame_dense=ops.dense,
        fps=_q(fps),
        dsp_count=dsp_count,
        clock_hz=int(clock_hz),
        efficiency_1=dsp_efficiency(ops.pruned, fps, dsp_count, clock_hz),
        efficiency_2=dsp_efficiency(ops.dense, fps, dsp_count, clock_hz),
    )


def perf_csv(reports):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(PERF_FIELDS), lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()
