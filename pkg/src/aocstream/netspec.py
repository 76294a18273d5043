"""CNN graph description: layer specs, shape inference, builders and file I/O.

A network is a DAG of single-input layers rooted at the pseudo-node
``"input"``.  Fan-out is allowed (detection-head branches); re-joining is
not, since none of the supported layer kinds has a second input port.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

from .errors import CycleDetected, ParseError, ShapeMismatch, UnsupportedSize

INPUT = "input"
FORMAT_VERSION = "aocstream-net/1"

KINDS = ("Conv", "DepthwiseConv", "MaxPool", "AvgPool")
POOL_KINDS = ("MaxPool", "AvgPool")
PADDINGS = ("same", "valid")
ACTIVATIONS = ("none", "relu", "relu6")


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        for name in ("height", "width", "channels"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"TensorShape.{name} must be a positive integer, got {v!r}")

    @property
    def pixels(self):
        return self.height * self.width

    @property
    def size(self):
        return self.height * self.width * self.channels


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    kernel: int
    stride: int = 1
    padding: str = "same"
    out_channels: int | None = None
    has_bias: bool = True
    activation: str = "none"
    tag: str = ""

    def __post_init__(self):
        if not self.id or self.id == INPUT:
            raise ValueError(f"invalid layer id {self.id!r}")
        if self.kind not in KINDS:
            raise ValueError(f"layer {self.id}: unknown kind {self.kind!r}")
        if not isinstance(self.kernel, int) or self.kernel < 1:
            raise ValueError(f"layer {self.id}: kernel must be >= 1")
        if self.kind == "DepthwiseConv" and self.kernel < 2:
            raise ValueError(f"layer {self.id}: 1x1 depthwise convolution is degenerate")
        if self.stride not in (1, 2):
            raise ValueError(f"layer {self.id}: stride must be 1 or 2, got {self.stride!r}")
        if self.padding not in PADDINGS:
            raise ValueError(f"layer {self.id}: padding must be one of {PADDINGS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"layer {self.id}: activation must be one of {ACTIVATIONS}")
        if self.kind == "Conv":
            if not isinstance(self.out_channels, int) or self.out_channels < 1:
                raise ValueError(f"layer {self.id}: Conv needs a positive out_channels")
        elif self.out_channels is not None:
            raise ValueError(f"layer {self.id}: out_channels is only valid for Conv")

    @property
    def is_pool(self):
        return self.kind in POOL_KINDS

    @property
    def has_weights(self):
        return self.kind in ("Conv", "DepthwiseConv")

    def out_channels_for(self, in_channels):
        return self.out_channels if self.kind == "Conv" else in_channels


def padding_amounts(layer, height, width):
    """Return ``(top, bottom, left, right)`` zero padding for an input map.

    Same padding follows the usual convention: output = ceil(in / S), total
    padding split with the extra row/column at the bottom/right.
    """
    if layer.padding == "valid":
        return 0, 0, 0, 0
    k, s = layer.kernel, layer.stride
    out_h, out_w = -(-height // s), -(-width // s)
    pad_h = max((out_h - 1) * s + k - height, 0)
    pad_w = max((out_w - 1) * s + k - width, 0)
    return pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2


def output_hw(layer, height, width):
    if layer.padding == "same":
        return -(-height // layer.stride), -(-width // layer.stride)
    k, s = layer.kernel, layer.stride
    if height < k or width < k:
        return 0, 0
    return (height - k) // s + 1, (width - k) // s + 1


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: TensorShape
    layers: tuple
    edges: tuple
    taps: tuple = ()
    name: str = ""
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        object.__setattr__(self, "taps", tuple(tuple(t) for t in self.taps))
        object.__setattr__(self, "notes", tuple(self.notes))
        ids = [l.id for l in self.layers]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate layer ids: {dup}")
        known = set(ids)
        seen_consumer = {}
        for src, dst in self.edges:
            if src != INPUT and src not in known:
                raise ShapeMismatch(f"edge {src}->{dst}: unknown producer {src!r}")
            if dst not in known:
                raise ShapeMismatch(f"edge {src}->{dst}: unknown consumer {dst!r}")
            if dst in seen_consumer:
                raise ShapeMismatch(
                    f"layer {dst!r} has two producers ({seen_consumer[dst]!r}, {src!r})")
            seen_consumer[dst] = src
        missing = known - set(seen_consumer)
        if missing:
            raise ShapeMismatch(f"layers without a producer: {sorted(missing)}")
        for layer_id, _head in self.taps:
            if layer_id not in known:
                raise ShapeMismatch(f"tap on unknown layer {layer_id!r}")

    # graph helpers ---------------------------------------------------------

    @cached_property
    def by_id(self):
        return {l.id: l for l in self.layers}

    @cached_property
    def producer_of(self):
        return {dst: src for src, dst in self.edges}

    @cached_property
    def consumers_of(self):
        out = {INPUT: []}
        for l in self.layers:
            out[l.id] = []
        for src, dst in self.edges:
            out[src].append(dst)
        return out

    @cached_property
    def topo_order(self):
        return topological_order(self)

    @property
    def sinks(self):
        return [l.id for l in self.layers if not self.consumers_of[l.id]]

    def output_ids(self):
        """Keys of the forward-pass result: tap head ids, then sink layer ids."""
        keys = [head for _, head in self.taps]
        keys += [s for s in self.sinks if s not in keys]
        return keys

    def output_sources(self):
        src = {head: layer_id for layer_id, head in self.taps}
        for s in self.sinks:
            src.setdefault(s, s)
        return src

    @cached_property
    def shapes(self):
        return infer_shapes(self)


def topological_order(net, order_hint=None):
    """Kahn's algorithm; ``order_hint`` chooses among ready layers (tests)."""
    indeg = {l.id: 1 for l in net.layers}
    ready = list(net.consumers_of[INPUT])
    order = []
    while ready:
        if order_hint is not None:
            ready.sort(key=order_hint)
        cur = ready.pop(0)
        order.append(cur)
        for nxt in net.consumers_of[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(net.layers):
        stuck = sorted(set(indeg) - set(order))
        raise CycleDetected(f"cycle through layers {stuck}")
    return order


def infer_shapes(net, order_hint=None):
    """Map layer id -> (input TensorShape, output TensorShape)."""
    out_shape = {INPUT: net.input_shape}
    result = {}
    for lid in topological_order(net, order_hint):
        layer = net.by_id[lid]
        src = net.producer_of[lid]
        ishape = out_shape[src]
        oh, ow = output_hw(layer, ishape.height, ishape.width)
        if oh < 1 or ow < 1:
            raise ShapeMismatch(
                f"edge {src}->{lid}: {ishape.height}x{ishape.width} input too small "
                f"for {layer.kernel}x{layer.kernel} valid window")
        oshape = TensorShape(oh, ow, layer.out_channels_for(ishape.channels))
        result[lid] = (ishape, oshape)
        out_shape[lid] = oshape
    return result


def chain(input_shape, layers, taps=(), name=""):
    """Build a linear network (each layer feeds the next)."""
    layers = list(layers)
    edges = []
    prev = INPUT
    for l in layers:
        edges.append((prev, l.id))
        prev = l.id
    return NetworkSpec(input_shape, layers, edges, taps, name=name)


# MobileNetV1 + SSDLiteX ---------------------------------------------------

SSDLITEX_STAGES = {320: 4, 384: 4, 448: 5, 512: 5, 640: 6}

# (pointwise output channels, depthwise stride) for the 13 separable blocks
MOBILENET_V1_BLOCKS = (
    (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1),
)
AUX_STAGE_CHANNELS = (512, 256, 256, 128, 128, 128)
NUM_ANCHORS = 6
NUM_CLASSES = 91  # COCO label space incl. background
HEAD_CHANNELS = NUM_ANCHORS * (NUM_CLASSES + 4)
STRIDE8_HEAD_EXPAND = 704

SSDLITEX_NOTES = (
    "backbone: MobileNetV1 1.0 (3x3/S2 conv to 32, 13 depthwise-separable blocks), same padding",
    "taps: block 5 (stride 8), block 11 (stride 16), every auxiliary stage output",
    "aux stage: 1x1 conv to C/2, 3x3/S2 depthwise, 1x1 conv to C; C = 512,256,256,128,128,128",
    f"head: [1x1 expand to {STRIDE8_HEAD_EXPAND} on the stride-8 tap] + 3x3 depthwise + "
    f"1x1 conv to {NUM_ANCHORS}x({NUM_CLASSES}+4) = {HEAD_CHANNELS}",
    "head layout is an assumption sized to the expected MAC count",
)


def _sep(prefix, stride, out_c, tag, act="relu6", last_act="relu6"):
    return [
        LayerSpec(f"{prefix}_dw", "DepthwiseConv", 3, stride, "same", None, True, act, tag),
        LayerSpec(f"{prefix}_pw", "Conv", 1, 1, "same", out_c, True, last_act, tag),
    ]


def build_ssdlitex(input_size, aux_stages):
    """MobileNetV1 + SSDLiteX for any input size divisible by 32."""
    if input_size < 32 or input_size % 32:
        raise UnsupportedSize(f"input size {input_size} must be a positive multiple of 32")
    if not 0 <= aux_stages <= len(AUX_STAGE_CHANNELS):
        raise UnsupportedSize(f"aux_stages must be within 0..{len(AUX_STAGE_CHANNELS)}")
    layers = [LayerSpec("conv0", "Conv", 3, 2, "same", 32, True, "relu6", "backbone")]
    edges = [(INPUT, "conv0")]
    prev = "conv0"

    def add(seq):
        nonlocal prev
        for l in seq:
            layers.append(l)
            edges.append((prev, l.id))
            prev = l.id

    for i, (out_c, stride) in enumerate(MOBILENET_V1_BLOCKS, start=1):
        add(_sep(f"b{i}", stride, out_c, "backbone"))

    tap_layers = ["b5_pw", "b11_pw"]
    for k in range(1, aux_stages + 1):
        c = AUX_STAGE_CHANNELS[k - 1]
        tag = f"aux{k}"
        add([
            LayerSpec(f"aux{k}_pw1", "Conv", 1, 1, "same", c // 2, True, "relu6", tag),
            LayerSpec(f"aux{k}_dw", "DepthwiseConv", 3, 2, "same", None, True, "relu6", tag),
            LayerSpec(f"aux{k}_pw2", "Conv", 1, 1, "same", c, True, "relu6", tag),
        ])
        tap_layers.append(f"aux{k}_pw2")

    taps = []
    for j, src in enumerate(tap_layers):
        head = f"head{j}"
        seq = []
        if j == 0:
            seq.append(LayerSpec(f"{head}_expand", "Conv", 1, 1, "same",
                                 STRIDE8_HEAD_EXPAND, True, "relu6", head))
        seq.append(LayerSpec(f"{head}_dw", "DepthwiseConv", 3, 1, "same", None, True, "relu6", head))
        seq.append(LayerSpec(f"{head}_pred", "Conv", 1, 1, "same", HEAD_CHANNELS, True, "none", head))
        p = src
        for l in seq:
            layers.append(l)
            edges.append((p, l.id))
            p = l.id
        taps.append((src, head))

    return NetworkSpec(TensorShape(input_size, input_size, 3), layers, edges, taps,
                       name=f"mobilenet-ssdlitex:{input_size}", notes=SSDLITEX_NOTES)


def build_mobilenet_ssdlitex(input_size):
    if input_size not in SSDLITEX_STAGES:
        raise UnsupportedSize(
            f"input size {input_size} not in {sorted(SSDLITEX_STAGES)}")
    return build_ssdlitex(input_size, SSDLITEX_STAGES[input_size])


def aux_stage_count(net):
    return len({l.tag for l in net.layers if l.tag.startswith("aux")})


def describe(net):
    """Human-readable layer list with inferred shapes."""
    shapes = net.shapes
    lines = [f"# {net.name or 'network'}"]
    lines += [f"# {n}" for n in net.notes]
    lines.append("id,kind,K,S,padding,in(HxWxN),out(HxWxM),producer")
    for lid in net.topo_order:
        l = net.by_id[lid]
        i, o = shapes[lid]
        lines.append(
            f"{lid},{l.kind},{l.kernel},{l.stride},{l.padding},"
            f"{i.height}x{i.width}x{i.channels},{o.height}x{o.width}x{o.channels},"
            f"{net.producer_of[lid]}")
    return "\n".join(lines) + "\n"


# file format ---------------------------------------------------------------

def to_dict(net):
    layers = []
    for l in net.layers:
        d = {"id": l.id, "kind": l.kind, "kernel": l.kernel, "stride": l.stride,
             "padding": l.padding, "out_channels": l.out_channels,
             "has_bias": l.has_bias, "activation": l.activation}
        if l.tag:
            d["tag"] = l.tag
        layers.append(d)
    s = net.input_shape
    return {
        "version": FORMAT_VERSION,
        "name": net.name,
        "input_shape": {"height": s.height, "width": s.width, "channels": s.channels},
        "layers": layers,
        "edges": [list(e) for e in net.edges],
        "taps": [list(t) for t in net.taps],
    }


def dumps(net):
    return json.dumps(to_dict(net), indent=1) + "\n"


def atomic_write(path, data, mode="w"):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def save_network(net, path):
    atomic_write(path, dumps(net))


def _line_of(text, needle):
    idx = text.find(needle)
    return None if idx < 0 else text.count("\n", 0, idx) + 1


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, line=e.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", line=1)
    if doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"expected version {FORMAT_VERSION!r}", line=_line_of(text, '"version"'),
                         field="version")
    for key in ("input_shape", "layers", "edges"):
        if key not in doc:
            raise ParseError("missing required field", field=key)
    try:
        s = doc["input_shape"]
        shape = TensorShape(int(s["height"]), int(s["width"]), int(s["channels"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(str(e), line=_line_of(text, '"input_shape"'), field="input_shape") from None

    allowed = {"id", "kind", "kernel", "stride", "padding", "out_channels", "has_bias",
               "activation", "tag"}
    layers = []
    for idx, d in enumerate(doc["layers"]):
        fname = f"layers[{idx}]"
        if not isinstance(d, dict) or "id" not in d:
            raise ParseError("layer entry needs an id", field=fname)
        line = _line_of(text, json.dumps(d["id"]))
        extra = set(d) - allowed
        if extra:
            raise ParseError(f"unknown keys {sorted(extra)}", line=line, field=fname)
        try:
            layers.append(LayerSpec(
                id=d["id"], kind=d["kind"], kernel=d["kernel"], stride=d.get("stride", 1),
                padding=d.get("padding", "same"), out_channels=d.get("out_channels"),
                has_bias=bool(d.get("has_bias", True)), activation=d.get("activation", "none"),
                tag=d.get("tag", "")))
        except (KeyError, ValueError, TypeError) as e:
            raise ParseError(str(e), line=line, field=fname) from None
    try:
        net = NetworkSpec(shape, layers, [tuple(e) for e in doc["edges"]],
                          [tuple(t) for t in doc.get("taps", [])], name=doc.get("name", ""))
        infer_shapes(net)
    except (ShapeMismatch, CycleDetected, ValueError, TypeError) as e:
        raise ParseError(str(e), line=_line_of(text, '"edges"'), field="edges") from None
    return net


def load_network(path):
    with open(path) as f:
        return loads(f.read())
