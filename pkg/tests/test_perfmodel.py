from fractions import Fraction

from hypothesis import given, strategies as st

from aocstream.compress import PruneConfig, prune_network
from aocstream.netspec import LayerSpec, TensorShape, build_mobilenet_ssdlitex, chain
from aocstream.perfmodel import (analytic_fps, bottleneck, dsp_efficiency, ops_per_frame,
                                 perf_csv, perf_report)
from aocstream.schedule import Schedule, make_layer_schedule
from aocstream.testkit import gen_random_weights


def conv(lid, k=3, m=8):
    return LayerSpec(lid, "Conv", k, 1, "same", m, False, "relu")


def test_single_pointwise_ops():
    net = chain(TensorShape(2, 2, 4), [conv("a", k=1, m=8)])
    assert ops_per_frame(net).dense == 256


def test_pruned_pure_conv_is_quarter():
    net = chain(TensorShape(6, 6, 16), [conv("a", m=16), conv("b", k=1, m=24)])
    ops = ops_per_frame(net, prune=PruneConfig())
    assert 4 * ops.pruned == ops.dense
    _, masks = prune_network(net, gen_random_weights(net, 0), PruneConfig())
    assert ops_per_frame(net, masks=masks) == ops


def test_ssdlitex_320_mac_count():
    ops = ops_per_frame(build_mobilenet_ssdlitex(320))
    assert abs(ops.dense / 2 - 2.2e9) <= 0.15 * 2.2e9


def one_layer(h=320, g=2, i_i=2):
    net = chain(TensorShape(h, h, 4), [LayerSpec("a", "Conv", 1, 1, "same", 8, False, "none")])
    return net, Schedule({"a": make_layer_schedule(net, "a", g, i_i, 1)}, 4 // g)


def test_single_layer_fps():
    net, sch = one_layer()
    fps = analytic_fps(net, sch, 400_000_000)
    assert fps == Fraction(400_000_000, 4 * 320 * 320)
    assert round(float(fps), 1) == 976.6
    assert bottleneck(net, sch) == ("a", 4 * 320 * 320)


def test_pipelined_equal_layers_same_fps():
    net = chain(TensorShape(64, 64, 4), [LayerSpec(x, "Conv", 1, 1, "same", 4, False, "none")
                                         for x in ("a", "b")])
    sch = Schedule({lid: make_layer_schedule(net, lid, 2, 2, 2) for lid in ("a", "b")}, 2)
    single, _ = one_layer(64)
    assert analytic_fps(net, sch, 1e8) == analytic_fps(single, one_layer(64)[1], 1e8)


def test_efficiency_examples():
    assert dsp_efficiency(10 ** 9, 100, 500, 200_000_000) == Fraction(1, 2)
    assert dsp_efficiency(10 ** 9, 0, 500, 200_000_000) == 0


@given(st.integers(1, 10 ** 10), st.integers(1, 1000), st.integers(1, 5000),
       st.integers(10 ** 6, 10 ** 9), st.integers(2, 5))
def test_efficiency_algebra(ops, fps, dsps, clock, k):
    e = dsp_efficiency(ops, fps, dsps, clock)
    assert dsp_efficiency(k * ops, fps, dsps, clock) == k * e
    assert dsp_efficiency(ops, k * fps, dsps, clock) == k * e
    assert dsp_efficiency(ops, fps, k * dsps, clock) == e / k
    assert dsp_efficiency(ops, fps, dsps, k * clock) == e / k


def test_report_ratio_identity_and_csv():
    ops = ops_per_frame(build_mobilenet_ssdlitex(320), prune=PruneConfig())
    rep = perf_report(ops, 260.9, 464, 428_000_000)
    assert rep.efficiency_2 / rep.efficiency_1 == ops.ratio
    text = perf_csv([rep])
    assert text.splitlines()[0].split(",")[0] == "ops_per_frame_pruned"
    assert len(text.splitlines()) == 2
