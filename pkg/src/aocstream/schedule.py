"""Per-layer stream parameters, PE counts and whole-pipeline balancing.

A layer with ``N`` input channels receives ``g_i`` groups of ``n_i`` channels
per spatial location, one group every ``i_i`` cycles, and emits ``g_o``
groups of ``m_o`` channels, one every ``i_o`` cycles.  The consumer of an
edge always uses the producer's output grouping as its input grouping.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

from .compress import DENSE, is_prunable
from .errors import Infeasible, NonIntegralPEs, ParseError
from .netspec import INPUT, atomic_write, output_hw, padding_amounts

FORMAT_VERSION = "aocstream-schedule/1"
ALIGN = 8


def divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


@dataclass(frozen=True)
class StreamConfig:
    n_i: int
    g_i: int
    i_i: int
    m_o: int
    g_o: int
    i_o: int

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def in_channels(self):
        return self.n_i * self.g_i

    @property
    def out_channels(self):
        return self.m_o * self.g_o

    @property
    def pixel_period(self):
        """Cycles the block spends per input spatial location."""
        return self.g_i * self.i_i


@dataclass(frozen=True)
class PEConfig:
    pe_count: int
    multipliers_per_pe: int
    pruning_ratio: Fraction = Fraction(0)

    @property
    def multipliers(self):
        return self.pe_count * self.multipliers_per_pe


@dataclass(frozen=True)
class LayerSchedule:
    stream: StreamConfig
    pe: PEConfig


@dataclass(frozen=True)
class MacRequirement:
    macs_per_group: int
    multipliers_needed: int
    pe_count: int


def _ratio(r):
    r = Fraction(r) if not isinstance(r, float) else Fraction(str(r))
    if not 0 <= r < 1:
        raise ValueError(f"pruning ratio must be in [0, 1), got {r}")
    return r


def _ceil(x):
    return math.ceil(Fraction(x))


def required_macs_conv(layer, cfg, r=0):
    """MACs of one input group and the multipliers needed to finish it in ``i_i`` cycles."""
    r = _ratio(r)
    m = layer.out_channels
    if m % cfg.i_i:
        raise NonIntegralPEs(f"layer {layer.id}: I_i={cfg.i_i} does not divide M={m}")
    m_i = m // cfg.i_i
    k2 = layer.kernel * layer.kernel
    return MacRequirement(
        macs_per_group=_ceil(k2 * cfg.n_i * m * (1 - r)),
        multipliers_needed=_ceil(k2 * cfg.n_i * m_i * (1 - r)),
        pe_count=m_i,
    )


def required_pes_depthwise(layer, cfg):
    return -(-layer.kernel * layer.kernel * cfg.n_i // cfg.i_i)


@dataclass(frozen=True)
class RateCheck:
    ok: bool
    lhs: Fraction
    rhs: Fraction

    def __bool__(self):
        return self.ok


def check_rate(layer, cfg):
    """Input groups x interval must cover output groups x interval per S^2 locations."""
    lhs = Fraction(cfg.g_i * cfg.i_i)
    rhs = Fraction(cfg.g_o * cfg.i_o, layer.stride * layer.stride)
    return RateCheck(lhs >= rhs, lhs, rhs)


def pe_config(layer, cfg, r=0):
    r = _ratio(r) if layer.kind == "Conv" else Fraction(0)
    if layer.kind == "Conv":
        req = required_macs_conv(layer, cfg, r)
        per_pe = -(-req.multipliers_needed // req.pe_count)
        return PEConfig(req.pe_count, per_pe, r)
    if layer.kind == "DepthwiseConv":
        return PEConfig(required_pes_depthwise(layer, cfg), 1, r)
    return PEConfig(required_pes_depthwise(layer, cfg), 0, r)


def layer_multipliers(layer, cfg, r=0):
    if layer.kind == "Conv":
        return required_macs_conv(layer, cfg, r).multipliers_needed
    if layer.kind == "DepthwiseConv":
        return required_pes_depthwise(layer, cfg)
    return 0


# geometry --------------------------------------------------------------------

def window_slots(layer, in_shape):
    """Input locations plus windows triggered at bottom/right padding positions.

    Each slot costs the block ``g_i * i_i`` cycles.
    """
    h, w = in_shape.height, in_shape.width
    oh, ow = output_hw(layer, h, w)
    pt, _, pl, _ = padding_amounts(layer, h, w)
    k, s = layer.kernel, layer.stride
    rows_in = sum(1 for y in range(oh) if y * s + k - 1 - pt < h)
    cols_in = sum(1 for x in range(ow) if x * s + k - 1 - pl < w)
    return h * w + oh * ow - rows_in * cols_in


def layer_period(layer, in_shape, out_shape, cfg):
    """Cycles per frame of one block: the slower of its input and output ports."""
    inp = window_slots(layer, in_shape) * cfg.g_i * cfg.i_i
    out = out_shape.height * out_shape.width * cfg.g_o * cfg.i_o
    return max(inp, out)


def output_interval(layer, in_shape, out_shape, g_i, i_i, g_o):
    """Largest I_o that passes check_rate and keeps the output port off the critical path."""
    s2 = layer.stride * layer.stride
    by_rate = (s2 * g_i * i_i) // g_o
    by_frame = (window_slots(layer, in_shape) * g_i * i_i) // (out_shape.pixels * g_o)
    return max(1, min(by_rate, by_frame))


def output_buffer_pixels(layer, cfg, out_width):
    """Pixels of M accumulators a block needs in flight.

    One for the pixel being accumulated plus enough to cover the output port
    being slower than the window rate; strided layers produce their windows in
    bursts of one output row and need to hold most of that row.
    """
    base = -(-(cfg.i_o * cfg.g_o) // (cfg.i_i * cfg.g_i)) + 1
    s = layer.stride
    if s > 1:
        base += -(-out_width * (s - 1) // s)
    return base


def accumulation_bytes(net, schedule, bits=8):
    """Bytes of all blocks' accumulation/output buffers (outputs at ``bits``)."""
    total = 0
    for lid in net.topo_order:
        layer = net.by_id[lid]
        _, out = net.shapes[lid]
        px = output_buffer_pixels(layer, schedule[lid].stream, out.width)
        total += -(-px * out.channels * bits // 8)
    return total


# schedule container -------------------------------------------------------------

class Schedule(dict):
    """Mapping layer id -> LayerSchedule, plus the source stream's group size."""

    def __init__(self, layers=(), source_group=1):
        super().__init__(layers)
        self.source_group = source_group

    def total_multipliers(self, net):
        return sum(layer_multipliers(net.by_id[lid], ls.stream, ls.pe.pruning_ratio)
                   for lid, ls in self.items())

    def validate(self, net, rates=True):
        """Channel counts, grouping agreement on every edge, and (with ``rates``) check_rate."""
        errors = []
        for lid in net.topo_order:
            layer = net.by_id[lid]
            if lid not in self:
                errors.append(f"{lid}: missing from schedule")
                continue
            st = self[lid].stream
            i, o = net.shapes[lid]
            if st.in_channels != i.channels:
                errors.append(f"{lid}: n_i*g_i={st.in_channels} but N={i.channels}")
            if st.out_channels != o.channels:
                errors.append(f"{lid}: m_o*g_o={st.out_channels} but M={o.channels}")
            src = net.producer_of[lid]
            want = self.source_group if src == INPUT else self[src].stream.m_o if src in self else None
            if want is not None and st.n_i != want:
                errors.append(f"{lid}: n_i={st.n_i} but producer {src} emits groups of {want}")
            if layer.kind == "Conv" and layer.out_channels % st.i_i:
                errors.append(f"{lid}: I_i={st.i_i} does not divide M={layer.out_channels}")
            rc = check_rate(layer, st)
            if rates and not rc:
                errors.append(f"{lid}: rate violation {rc.lhs} < {rc.rhs}")
        return errors

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "source_group": self.source_group,
            "layers": {
                lid: {**asdict(ls.stream), "pe_count": ls.pe.pe_count,
                      "multipliers_per_pe": ls.pe.multipliers_per_pe,
                      "pruning_ratio": str(ls.pe.pruning_ratio)}
                for lid, ls in self.items()
            },
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != FORMAT_VERSION:
            raise ParseError(f"unsupported schedule version {doc.get('version')!r}", field="version")
        layers = {}
        for lid, d in doc["layers"].items():
            try:
                st = StreamConfig(*(int(d[k]) for k in ("n_i", "g_i", "i_i", "m_o", "g_o", "i_o")))
                pe = PEConfig(int(d["pe_count"]), int(d["multipliers_per_pe"]),
                              Fraction(d.get("pruning_ratio", "0")))
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"layer {lid}: {exc}", field=lid) from None
            layers[lid] = LayerSchedule(st, pe)
        return cls(layers, int(doc.get("source_group", 1)))


def loads_schedule(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return Schedule.from_dict(doc)


def load_schedule(path):
    with open(path) as f:
        return loads_schedule(f.read())


def save_schedule(schedule, path):
    atomic_write(path, schedule.dumps())


# construction ---------------------------------------------------------------------

def make_layer_schedule(net, lid, g_i, i_i, g_o, r=0):
    """Assemble a LayerSchedule from group counts; I_o is derived."""
    layer = net.by_id[lid]
    i, o = net.shapes[lid]
    i_o = output_interval(layer, i, o, g_i, i_i, g_o)
    st = StreamConfig(i.channels // g_i, g_i, i_i, o.channels // g_o, g_o, i_o)
    return LayerSchedule(st, pe_config(layer, st, r))


def _ratio_for(layer, n, prune):
    if layer.kind != "Conv" or not is_prunable(layer, n, prune):
        return Fraction(0)
    return Fraction(1) - prune.keep_for(layer.id) / Fraction(prune.group_size)


def _candidates(layer, n, r, prune):
    """(g_i, i_i) choices; pruned Conv layers keep input groups aligned to the pruning group."""
    gs = divisors(n)
    if layer.kind == "Conv" and r and n % prune.group_size == 0:
        gs = [g for g in gs if (n // g) % prune.group_size == 0]
    if layer.kind == "Conv":
        iis = divisors(layer.out_channels)
    else:
        iis = None
    return gs, iis


def _best_for(layer, i, o, r, prune, period, g_fixed=None):
    """Cheapest (multipliers, -cycles, g_i, i_i) with frame cycles <= period, or None."""
    n = i.channels
    gs, iis = _candidates(layer, n, r, prune)
    if g_fixed is not None:
        gs = [g for g in gs if g == g_fixed]
    slots = window_slots(layer, i)
    best = None
    for g in gs:
        if iis is None:
            top = max(1, period // (slots * g))
            opts = [top] if slots * g * top <= period else []
        else:
            opts = [d for d in iis if slots * g * d <= period]
            opts = opts[-1:]
        for ii in opts:
            cfg = StreamConfig(n // g, g, ii, o.channels, 1, 1)
            mult = layer_multipliers(layer, cfg, r)
            key = (mult, -(slots * g * ii), g, ii)
            if best is None or key < best:
                best = key
    return best


def _fanout_groups(net):
    groups = {}
    for lid in net.topo_order:
        groups.setdefault(net.producer_of[lid], []).append(lid)
    return groups


def _plan(net, prune, period):
    """Choose (g_i, i_i) for every layer at a common frame period; None if some layer cannot meet it."""
    plan = {}
    for src, consumers in _fanout_groups(net).items():
        n = net.shapes[consumers[0]][0].channels
        choice = None
        for g in divisors(n):
            picks, total = {}, 0
            for lid in consumers:
                layer = net.by_id[lid]
                i, o = net.shapes[lid]
                b = _best_for(layer, i, o, _ratio_for(layer, n, prune), prune, period, g)
                if b is None:
                    break
                picks[lid] = b
                total += b[0]
            else:
                if choice is None or total < choice[0]:
                    choice = (total, picks)
        if choice is None:
            return None
        for lid, b in choice[1].items():
            plan[lid] = (b[2], b[3])
    return plan


def _assemble(net, prune, plan):
    layers = {}
    groups = _fanout_groups(net)
    for lid in net.topo_order:
        layer = net.by_id[lid]
        g_i, i_i = plan[lid]
        kids = groups.get(lid)
        g_o = plan[kids[0]][0] if kids else 1
        s2 = layer.stride * layer.stride
        if s2 * g_i * i_i < g_o:
            # consumers split the stream finer than this block can emit it
            if layer.kind == "Conv":
                i_i = next(d for d in divisors(layer.out_channels) if s2 * g_i * d >= g_o)
            else:
                i_i = -(-g_o // (s2 * g_i))
        r = _ratio_for(layer, net.shapes[lid][0].channels, prune)
        layers[lid] = make_layer_schedule(net, lid, g_i, i_i, g_o, r)
    first = groups[INPUT][0]
    return Schedule(layers, layers[first].stream.n_i)


def _fastest_period(net, prune):
    """Frame cycles of the slowest layer when every layer runs as fast as it can."""
    worst = 0
    for lid in net.topo_order:
        layer = net.by_id[lid]
        i, _ = net.shapes[lid]
        worst = max(worst, window_slots(layer, i))
    return worst


def _slowest_period(net, prune):
    worst = 0
    for lid in net.topo_order:
        layer = net.by_id[lid]
        i, o = net.shapes[lid]
        top = layer.out_channels if layer.kind == "Conv" else 9 * i.channels
        worst = max(worst, window_slots(layer, i) * i.channels * top)
    return worst


def schedule_for_period(net, period, prune=DENSE):
    """Cheapest schedule whose every block finishes a frame within ``period`` cycles."""
    plan = _plan(net, prune, period)
    if plan is None:
        raise Infeasible(f"no schedule meets {period} cycles per frame")
    return _assemble(net, prune, plan)


def auto_schedule(net, prune=DENSE, budget=None, period=None):
    """Balanced schedule: min multipliers at a fixed frame period, or max speed within a budget.

    With ``budget`` (total multipliers) the smallest frame period whose
    cheapest schedule fits is found by bisection.  Without either argument
    every layer runs at its fastest configuration (I_i = 1 and one group).
    """
    if not net.layers:
        return Schedule({}, 1)
    if period is not None:
        return schedule_for_period(net, period, prune)
    lo = _fastest_period(net, prune)
    if budget is None:
        return schedule_for_period(net, lo, prune)
    hi = _slowest_period(net, prune)
    top = schedule_for_period(net, hi, prune)
    if top.total_multipliers(net) > budget:
        worst = max(top, key=lambda lid: (layer_multipliers(net.by_id[lid], top[lid].stream,
                                                            top[lid].pe.pruning_ratio), lid))
        raise Infeasible(
            f"budget {budget} below the minimum of {top.total_multipliers(net)} multipliers",
            layer=worst)
    while lo < hi:
        mid = (lo + hi) // 2
        plan = _plan(net, prune, mid)
        if plan is not None and _assemble(net, prune, plan).total_multipliers(net) <= budget:
            hi = mid
        else:
            lo = mid + 1
    return schedule_for_period(net, hi, prune)


def schedule_period(net, schedule):
    """Frame cycles of the slowest block."""
    return max((layer_period(net.by_id[lid], *net.shapes[lid], schedule[lid].stream)
                for lid in net.topo_order), default=0)
