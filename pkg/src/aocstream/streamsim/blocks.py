"""Layer blocks: (K-1)-row line buffer, K x K window registers, grouped compute.

A block walks the padded input raster.  Real positions consume one token per
input group from its FIFO; padding positions are generated inside the block
as zeros, so streams between blocks carry only real data.  A window whose
bottom-right corner lands on the current position is computed one input
group at a time, and the finished pixel goes to the block's output buffer.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..compress import requantize
from ..errors import AccumulatorOverflow, LineBufferViolation, StreamOrderViolation
from ..netspec import output_hw, padding_amounts

ACC_MIN, ACC_MAX = -(1 << 31), (1 << 31) - 1


class LineBuffer:
    """K-1 rows x W columns x N channels, written one group at a time.

    ``tags`` records which absolute row every (slot, column, group) holds so
    that reads can prove they only see rows y-K+1 .. y-1.
    """

    def __init__(self, kernel, width, n_i, g_i, height):
        self.rows = kernel - 1
        self.height = height
        self.width = width
        self.n_i = n_i
        self.capacity = self.rows * width * n_i * g_i
        self.data = np.zeros((max(self.rows, 1), width, n_i * g_i), dtype=np.int64)
        self.tags = np.full((max(self.rows, 1), width, g_i), -1, dtype=np.int64)
        self.occupancy = 0
        self.peak = 0

    def column(self, row, x, g, gs, base):
        """Values of rows row-K+1 .. row-1 at column x for group g (zeros outside the frame).

        ``row`` is frame-local; ``base`` is the absolute index of frame row 0.
        """
        out = np.zeros((self.rows, self.n_i), dtype=np.int64)
        for i in range(self.rows):
            r = row - self.rows + i
            if r < 0 or r >= self.height:
                continue
            slot = (base + r) % self.rows
            if self.tags[slot, x, g] != base + r:
                raise LineBufferViolation(
                    f"row {r} column {x} group {g} not resident (slot holds {self.tags[slot, x, g]})")
            out[i] = self.data[slot, x, gs]
        return out

    def write(self, abs_row, x, g, gs, values):
        if not self.rows:
            return
        slot = abs_row % self.rows
        old = self.tags[slot, x, g]
        if old < 0:
            self.occupancy += self.n_i
        elif old > abs_row - self.rows:
            raise LineBufferViolation(f"row {abs_row} would evict still-needed row {old}")
        self.tags[slot, x, g] = abs_row
        self.data[slot, x, gs] = values
        if self.occupancy > self.capacity:
            raise LineBufferViolation(
                f"occupancy {self.occupancy} exceeds {self.capacity} values")
        if self.occupancy > self.peak:
            self.peak = self.occupancy


class BlockStats:
    __slots__ = ("layer", "tokens_in", "tokens_out", "windows", "macs", "group_macs",
                 "lb_peak", "lb_capacity", "accum_adds_ok", "first_pop", "last_pop",
                 "out_buffer_pixels", "compute", "output", "frame_start", "frame_end")

    def __init__(self, layer):
        self.layer = layer
        self.tokens_in = 0
        self.tokens_out = 0
        self.windows = 0
        self.macs = 0
        self.group_macs = None
        self.lb_peak = 0
        self.lb_capacity = 0
        self.accum_adds_ok = True
        self.first_pop = None
        self.last_pop = None
        self.out_buffer_pixels = 0
        self.compute = None
        self.output = None
        self.frame_start = []
        self.frame_end = []


class LayerBlock:
    """Static description of one block plus its generator processes."""

    def __init__(self, layer, in_shape, out_shape, cfg, weights, in_exp, bits, frames,
                 engine):
        self.layer = layer
        self.cfg = cfg
        self.h, self.w, self.n = in_shape.height, in_shape.width, in_shape.channels
        self.oh, self.ow = output_hw(layer, self.h, self.w)
        self.m = out_shape.channels
        self.pt, self.pb, self.pl, self.pr = padding_amounts(layer, self.h, self.w)
        self.bits = bits
        self.frames = frames
        self.engine = engine
        self.stats = BlockStats(layer.id)
        k, n_i, g_i = layer.kernel, cfg.n_i, cfg.g_i
        self.lb = LineBuffer(k, self.w, n_i, g_i, self.h)
        self.stats.lb_capacity = self.lb.capacity
        self.slices = [slice(g * n_i, (g + 1) * n_i) for g in range(g_i)]
        self.in_exp = in_exp
        if layer.has_weights:
            self.acc_exp = in_exp + weights.scale_exp
            self.out_exp = weights.out_scale_exp
            w = weights.values.astype(np.int64)
            bias = weights.bias_or_zero(self.m).astype(np.int64)
            self.bias = bias
            if layer.kind == "Conv":
                self.wg = [np.ascontiguousarray(w[:, s]) for s in self.slices]
            else:
                self.wg = [np.ascontiguousarray(w[s]) for s in self.slices]
            self.nnz = [int(np.count_nonzero(x)) for x in self.wg]
        else:
            self.acc_exp = self.out_exp = in_exp
        # valid masks along each axis for every output row / column
        self.row_valid = [self._valid(y, self.pt, self.h) for y in range(self.oh)]
        self.col_valid = [self._valid(x, self.pl, self.w) for x in range(self.ow)]
        hp = self.h + self.pt + self.pb
        self.trigger_rows = [any(self._trigger(py, px) is not None
                                 for px in range(self.w + self.pl + self.pr)) for py in range(hp)]

    def _valid(self, o, pad, size):
        k, s = self.layer.kernel, self.layer.stride
        return np.array([0 <= o * s + i - pad < size for i in range(k)], dtype=np.uint8)

    def _trigger(self, py, px):
        """Output (Y, X) whose window ends at padded (py, px), or None."""
        k, s = self.layer.kernel, self.layer.stride
        ry, rx = py - k + 1, px - k + 1
        if ry < 0 or rx < 0 or ry % s or rx % s:
            return None
        oy, ox = ry // s, rx // s
        if oy >= self.oh or ox >= self.ow:
            return None
        return oy, ox

    def _finish(self, vals, oy, ox):
        layer = self.layer
        kind = layer.kind
        if kind == "AvgPool":
            cnt = int(self.row_valid[oy].sum()) * int(self.col_valid[ox].sum())
            q = np.abs(vals) // cnt
            vals = np.where(vals < 0, -q, q)
        elif kind != "MaxPool":
            if vals.size and (vals.min() < ACC_MIN or vals.max() > ACC_MAX):
                raise AccumulatorOverflow(f"layer {layer.id}: accumulator exceeds 32 bits")
        return requantize(vals, self.acc_exp, self.out_exp, self.bits, layer.activation)

    def compute_proc(self, in_fifo, out_queue):
        """Input side: consume tokens, maintain line buffer and windows, emit pixels."""
        layer = self.layer
        kind = layer.kind
        cfg = self.cfg
        k = layer.kernel
        g_i, i_i = cfg.g_i, cfg.i_i
        slot_cost = g_i * i_i
        h, w, n = self.h, self.w, self.n
        hp = h + self.pt + self.pb
        wp = w + self.pl + self.pr
        pt, pl = self.pt, self.pl
        lb = self.lb
        st = self.stats
        slices = self.slices
        window = np.zeros((n, k, k), dtype=np.int64)
        rows_above = k - 1
        zero_above = np.zeros((k - 1, cfg.n_i), dtype=np.int64)
        is_conv = kind == "Conv"
        is_dw = kind == "DepthwiseConv"
        for frame in range(self.frames):
            base = frame * h
            for py in range(pt, hp):
                y = py - pt
                if y >= h and not self.trigger_rows[py]:
                    continue
                window[:] = 0
                for px in range(pl, wp):
                    x = px - pl
                    trig = self._trigger(py, px)
                    real = y < h and x < w
                    if trig is not None:
                        oy, ox = trig
                        valid = np.outer(self.row_valid[oy], self.col_valid[ox])
                        if is_conv:
                            acc = self.bias.copy()
                            adds = 0
                        else:
                            acc = np.empty(self.m, dtype=np.int64)
                        group_macs = []
                    for g in range(g_i):
                        gs = slices[g]
                        if real:
                            tok = yield in_fifo
                            if tok[0] != frame or tok[1] != y or tok[2] != x or tok[3] != g:
                                raise StreamOrderViolation(
                                    f"layer {layer.id}: got token {tok[:4]}, expected "
                                    f"{(frame, y, x, g)}")
                            now = self.engine.now
                            if st.first_pop is None:
                                st.first_pop = now
                            if len(st.frame_start) == frame:
                                st.frame_start.append(now)
                            st.last_pop = now
                            st.tokens_in += 1
                            cur = tok[4]
                        else:
                            cur = None
                        if rows_above:
                            col_above = lb.column(y, x, g, gs, base) if x < w else zero_above
                            window[gs, :, :-1] = window[gs, :, 1:]
                            window[gs, :rows_above, -1] = col_above.T
                            window[gs, rows_above, -1] = cur if cur is not None else 0
                            if real:
                                lb.write(base + y, x, g, gs, cur)
                        else:
                            window[gs, 0, 0] = cur if cur is not None else 0
                        if trig is not None:
                            if is_conv:
                                kernels.window_conv(self.wg[g], window[gs], acc)
                                adds += 1
                                group_macs.append(self.nnz[g])
                            elif is_dw:
                                acc[gs] = kernels.window_depthwise(self.wg[g], window[gs]) \
                                    + self.bias[gs]
                                group_macs.append(self.nnz[g])
                            elif kind == "MaxPool":
                                acc[gs] = kernels.window_max(window[gs], valid)
                            else:
                                acc[gs] = kernels.window_sum(window[gs], valid)
                        if real:
                            yield i_i
                    if trig is None:
                        continue
                    if not real:
                        yield slot_cost
                    if is_conv and adds != g_i:
                        st.accum_adds_ok = False
                    st.windows += 1
                    if group_macs:
                        st.macs += sum(group_macs)
                        if st.group_macs is None:
                            st.group_macs = group_macs
                    out_push = ([out_queue], (frame, oy, ox, self._finish(acc, oy, ox)))
                    yield out_push
            st.lb_peak = lb.peak

    def output_proc(self, out_queue, fifos, sinks):
        """Output side: split each finished pixel into G_o groups, one per I_o cycles."""
        cfg = self.cfg
        m_o, g_o, i_o = cfg.m_o, cfg.g_o, cfg.i_o
        st = self.stats
        total = self.frames * self.oh * self.ow
        for _ in range(total):
            frame, oy, ox, vals = yield out_queue
            for sink in sinks:
                sink(frame, oy, ox, vals)
            for go in range(g_o):
                if fifos:
                    yield (fifos, (frame, oy, ox, go, vals[go * m_o:(go + 1) * m_o]))
                st.tokens_out += 1
                yield i_o
            if oy == self.oh - 1 and ox == self.ow - 1:
                st.frame_end.append(self.engine.now)
