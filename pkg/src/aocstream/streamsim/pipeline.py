"""Whole-network streaming: one block per layer, all running concurrently."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from ..netspec import INPUT
from ..schedule import output_buffer_pixels
from ..tensors import ActivationTensor
from .blocks import LayerBlock
from .engine import Engine, Fifo

DEFAULT_FIFO_CAPACITY = 4


@dataclass
class LayerCycles:
    busy: int
    stall: int
    idle: int
    output_busy: int
    output_stall: int
    tokens_in: int
    tokens_out: int
    windows: int
    macs: int
    achieved_ii: float
    lb_peak: int
    lb_capacity: int
    out_buffer_pixels: int
    out_buffer_peak: int


@dataclass
class CycleStats:
    total_cycles: int
    cycles_per_frame: float
    latency: int
    frame_done: list
    layers: dict = field(default_factory=dict)

    @property
    def steady_cycles_per_frame(self):
        """Completion interval of the last two frames; the fill transient is gone by then."""
        if len(self.frame_done) > 1:
            return self.frame_done[-1] - self.frame_done[-2]
        return self.cycles_per_frame

    def fps(self, clock_hz):
        c = self.steady_cycles_per_frame
        return clock_hz / c if c else float("inf")

    def to_text(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


@dataclass
class PipelineResult:
    outputs: dict
    stats: CycleStats
    frame_outputs: list
    blocks: dict


def _scales(net, weights, in_exp):
    scale = {INPUT: in_exp}
    for lid in net.topo_order:
        layer = net.by_id[lid]
        scale[lid] = weights[lid].out_scale_exp if layer.has_weights else \
            scale[net.producer_of[lid]]
    return scale


def _source(images, n_i, fifos, interval):
    for frame, img in enumerate(images):
        vals = img.values
        g = vals.shape[0] // n_i
        for y in range(vals.shape[1]):
            for x in range(vals.shape[2]):
                px = vals[:, y, x]
                for gi in range(g):
                    yield (fifos, (frame, y, x, gi, px[gi * n_i:(gi + 1) * n_i]))
                    yield interval


def run_pipeline(net, schedule, weights, image, fifo_capacity=DEFAULT_FIFO_CAPACITY,
                 source_interval=1, frames=1, trace=None, allow_rate_violations=False):
    """Stream ``frames`` copies of ``image`` (or a list of images) through the network.

    Returns outputs keyed like :func:`oracle.network_forward_ref` (frame 0)
    plus cycle statistics.  ``trace`` may be a list that receives one text
    line per FIFO event.  ``allow_rate_violations`` runs schedules that fail
    check_rate (they stay correct but back-pressure upstream).
    """
    images = list(image) if isinstance(image, (list, tuple)) else [image] * frames
    frames = len(images)
    for img in images:
        if img.shape != net.input_shape:
            raise ShapeMismatch(f"image {img.shape} does not match network input {net.input_shape}")
    problems = schedule.validate(net, rates=not allow_rate_violations)
    if problems:
        raise ValueError("invalid schedule: " + "; ".join(problems))
    bits = images[0].bits
    scale = _scales(net, weights, images[0].scale_exp)
    engine = Engine(trace)

    in_fifos = {lid: Fifo(f"{net.producer_of[lid]}->{lid}", fifo_capacity)
                for lid in net.topo_order}
    blocks, queues = {}, {}
    for lid in net.topo_order:
        layer = net.by_id[lid]
        i, o = net.shapes[lid]
        cfg = schedule[lid].stream
        blk = LayerBlock(layer, i, o, cfg, weights.get(lid), scale[net.producer_of[lid]],
                         bits, frames, engine)
        blk.stats.out_buffer_pixels = output_buffer_pixels(layer, cfg, o.width)
        blocks[lid] = blk
        queues[lid] = Fifo(f"{lid}.out", blk.stats.out_buffer_pixels)

    wanted = set(net.output_sources().values())
    planes = {lid: [np.zeros((o.channels, o.height, o.width), dtype=np.int64)
                    for _ in range(frames)]
              for lid in wanted for o in [net.shapes[lid][1]]}
    frame_done = [0] * frames

    def make_sink(lid):
        store = planes[lid]

        def sink(frame, oy, ox, vals):
            store[frame][:, oy, ox] = vals
            frame_done[frame] = max(frame_done[frame], engine.now)
        return sink

    engine.spawn("source", _source(images, schedule.source_group,
                                   [in_fifos[c] for c in net.consumers_of[INPUT]],
                                   source_interval))
    for lid in net.topo_order:
        blk = blocks[lid]
        outs = [in_fifos[c] for c in net.consumers_of[lid]]
        sinks = [make_sink(lid)] if lid in wanted else []
        blk.stats.compute = engine.spawn(f"{lid}.compute",
                                         blk.compute_proc(in_fifos[lid], queues[lid]))
        blk.stats.output = engine.spawn(f"{lid}.output",
                                        blk.output_proc(queues[lid], outs, sinks))
    end = engine.run()

    layers = {}
    for lid, blk in blocks.items():
        st = blk.stats
        c, o = st.compute, st.output
        stall = c.wait_full
        ii = 0.0
        if st.tokens_in > 1:
            ii = (st.last_pop - st.first_pop) / (st.tokens_in - 1)
        layers[lid] = LayerCycles(
            busy=c.busy, stall=stall, idle=end - c.busy - stall,
            output_busy=o.busy, output_stall=o.wait_full,
            tokens_in=st.tokens_in, tokens_out=st.tokens_out, windows=st.windows, macs=st.macs,
            achieved_ii=ii, lb_peak=blk.lb.peak, lb_capacity=blk.lb.capacity,
            out_buffer_pixels=st.out_buffer_pixels, out_buffer_peak=queues[lid].peak)
    if frames > 1:
        per_frame = (frame_done[-1] - frame_done[0]) / (frames - 1)
    else:
        per_frame = float(frame_done[0])
    stats = CycleStats(end, per_frame, frame_done[0], frame_done, layers)

    frame_outputs = []
    for f in range(frames):
        acts = {lid: ActivationTensor(planes[lid][f], bits, scale[lid]) for lid in wanted}
        frame_outputs.append({key: acts[src] for key, src in net.output_sources().items()})
    return PipelineResult(frame_outputs[0], stats, frame_outputs, blocks)
