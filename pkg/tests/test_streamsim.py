import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aocstream.compress import PruneConfig, prune_network
from aocstream.errors import Deadlock, LineBufferViolation
from aocstream.netspec import LayerSpec, TensorShape, chain
from aocstream.oracle import network_forward_ref
from aocstream.schedule import (Schedule, make_layer_schedule, required_macs_conv,
                                required_pes_depthwise, window_slots)
from aocstream.streamsim import Engine, Fifo, LineBuffer, run_pipeline
from aocstream.tensors import ActivationTensor, WeightTensor
from aocstream.testkit import (RandomNetSpec, gen_random_image, gen_random_net,
                               gen_random_schedule, gen_random_weights)


def layer(lid, kind="Conv", k=3, s=1, pad="same", m=None, act="none"):
    return LayerSpec(lid, kind, k, s, pad, m if kind == "Conv" else None, False, act)


def uniform_schedule(net, g=1, i_i=1, r=0):
    """Every layer split into ``g`` groups with input interval ``i_i``."""
    first = net.shapes[net.topo_order[0]][0].channels
    return Schedule({lid: make_layer_schedule(net, lid, g, i_i, g, r) for lid in net.topo_order},
                    first // g)


def test_identity_1x1_passes_tokens_through():
    net = chain(TensorShape(5, 7, 4), [layer("a", k=1, m=4)])
    img = gen_random_image(net.input_shape, 0)
    eye = WeightTensor(np.eye(4, dtype=np.int64).reshape(4, 4, 1, 1), None, 0, img.scale_exp)
    for g, i_i in [(1, 1), (2, 2), (4, 1)]:
        res = run_pipeline(net, uniform_schedule(net, g, i_i), {"a": eye}, img)
        assert res.outputs["a"] == img
        assert res.stats.layers["a"].tokens_out == 5 * 7 * g


def test_all_ones_kernel_constant_input():
    net = chain(TensorShape(6, 6, 1), [layer("a", pad="valid", m=1)])
    img = ActivationTensor(np.full((1, 6, 6), 3), 8, 0)
    w = WeightTensor(np.ones((1, 1, 3, 3), dtype=np.int64), None, 0, 0)
    res = run_pipeline(net, uniform_schedule(net), {"a": w}, img)
    assert (res.outputs["a"].values == 27).all()


def test_depthwise_delta_and_sum():
    net = chain(TensorShape(6, 6, 3), [layer("d", "DepthwiseConv")])
    img = gen_random_image(net.input_shape, 1)
    delta = np.zeros((3, 3, 3), dtype=np.int64)
    delta[:, 1, 1] = 1
    w = WeightTensor(delta, None, 0, img.scale_exp)
    assert run_pipeline(net, uniform_schedule(net, 3, 2), {"d": w}, img).outputs["d"] == img
    net = chain(TensorShape(5, 5, 2), [layer("d", "DepthwiseConv", pad="valid")])
    img = ActivationTensor(np.stack([np.full((5, 5), 2), np.full((5, 5), -1)]), 8, 0)
    w = WeightTensor(np.ones((2, 3, 3), dtype=np.int64), None, 0, 0)
    out = run_pipeline(net, uniform_schedule(net), {"d": w}, img).outputs["d"].values
    assert (out[0] == 18).all() and (out[1] == -9).all()


def test_pools():
    net = chain(TensorShape(2, 2, 1), [layer("p", "MaxPool", k=2, s=2, pad="valid")])
    img = ActivationTensor(np.array([[[1, 2], [3, 4]]]), 8, 0)
    assert run_pipeline(net, uniform_schedule(net), {}, img).outputs["p"].values.item() == 4
    for kind in ("MaxPool", "AvgPool"):
        net = chain(TensorShape(7, 7, 2), [layer("p", kind, k=3, s=2)])
        img = ActivationTensor(np.full((2, 7, 7), -5), 8, 0)
        assert (run_pipeline(net, uniform_schedule(net), {}, img).outputs["p"].values == -5).all()


def small_case(seed, **kw):
    net = gen_random_net(RandomNetSpec(seed=seed, **kw))
    return net, gen_random_weights(net, seed), gen_random_image(net.input_shape, seed)


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_random_nets_bit_exact_and_bounded(seed):
    net, w, img = small_case(seed, max_depth=5, branch_prob=0.4)
    res = run_pipeline(net, gen_random_schedule(net, seed), w, img)
    assert res.outputs == network_forward_ref(net, w, img)
    for lid, lc in res.stats.layers.items():
        assert lc.lb_peak <= lc.lb_capacity
        i, o = net.shapes[lid]
        assert lc.lb_capacity == (net.by_id[lid].kernel - 1) * i.width * i.channels
        assert lc.tokens_out == o.pixels * res.blocks[lid].cfg.g_o
        assert lc.busy + lc.stall + lc.idle == res.stats.total_cycles
        assert res.blocks[lid].stats.accum_adds_ok


def test_schedule_obliviousness():
    net, w, img = small_case(3, min_depth=4, max_depth=4, branch_prob=0.3)
    runs = [run_pipeline(net, gen_random_schedule(net, s), w, img) for s in range(4)]
    assert all(r.outputs == runs[0].outputs for r in runs)
    assert len({r.stats.total_cycles for r in runs}) > 1


def test_pruned_weights_stream_bit_exact():
    net = chain(TensorShape(9, 9, 16), [layer("a", m=16, act="relu"), layer("b", k=1, m=8)])
    w, _ = prune_network(net, gen_random_weights(net, 5), PruneConfig())
    img = gen_random_image(net.input_shape, 5)
    res = run_pipeline(net, uniform_schedule(net, 2, 2, 0.75), w, img)
    assert res.outputs == network_forward_ref(net, w, img)


def test_deterministic_stats():
    net, w, img = small_case(8, min_depth=3)
    s = gen_random_schedule(net, 8)
    assert run_pipeline(net, s, w, img).stats == run_pipeline(net, s, w, img).stats


def test_single_layer_cycle_bound():
    net = chain(TensorShape(32, 32, 8), [layer("a", m=8)])
    w, img = gen_random_weights(net, 0), gen_random_image(net.input_shape, 0)
    res = run_pipeline(net, uniform_schedule(net, 2, 2), w, img)
    ideal = window_slots(net.by_id["a"], net.input_shape) * 2 * 2
    assert ideal <= res.stats.total_cycles <= 1.1 * ideal


def stall_for(height):
    net = chain(TensorShape(height, 8, 4), [layer("p", k=1, m=4), layer("a", k=1, m=4)])
    s = uniform_schedule(net)
    st_a = s["a"].stream
    s["a"] = type(s["a"])(type(st_a)(st_a.n_i, 1, 1, st_a.m_o, 1, 3), s["a"].pe)
    assert s.validate(net) and not s.validate(net, rates=False)
    w, img = gen_random_weights(net, 1), gen_random_image(net.input_shape, 1)
    res = run_pipeline(net, s, w, img, allow_rate_violations=True)
    assert res.outputs == network_forward_ref(net, w, img)
    return res.stats.layers["p"].stall + res.stats.layers["p"].output_stall


def test_rate_violation_backpressure_grows_with_rows():
    with pytest.raises(ValueError):
        net = chain(TensorShape(4, 4, 4), [layer("a", k=1, m=4)])
        s = uniform_schedule(net)
        st_a = s["a"].stream
        s["a"] = type(s["a"])(type(st_a)(4, 1, 1, 4, 1, 3), s["a"].pe)
        run_pipeline(net, s, gen_random_weights(net, 0), gen_random_image(net.input_shape, 0))
    one, two = stall_for(16), stall_for(32)
    assert one > 16 * 8
    assert 1.8 <= two / one <= 2.2


def test_trace_mode():
    net, w, img = small_case(2, max_depth=2)
    trace = []
    run_pipeline(net, gen_random_schedule(net, 2), w, img, trace=trace)
    assert trace
    t, proc, verb = trace[0].split()[:3]
    assert int(t) >= 0 and verb in ("push", "pop", "block")
    assert all(int(line.split()[0]) <= int(nxt.split()[0]) for line, nxt in zip(trace, trace[1:]))


def test_multi_frame_outputs_and_steady_rate():
    net = chain(TensorShape(12, 12, 4), [layer("a", m=4), layer("b", k=1, m=4)])
    w = gen_random_weights(net, 6)
    imgs = [gen_random_image(net.input_shape, s) for s in (1, 2, 3)]
    res = run_pipeline(net, uniform_schedule(net, 2, 1), w, imgs)
    for img, out in zip(imgs, res.frame_outputs):
        assert out == network_forward_ref(net, w, img)
    period = window_slots(net.by_id["a"], net.input_shape) * 2
    assert period <= res.stats.cycles_per_frame <= 1.1 * period


def test_fifo_order_capacity_and_deadlock():
    eng = Engine()
    fifo = Fifo("f", 2)
    got = []

    def producer():
        for i in range(5):
            yield ([fifo], (i,))

    def consumer():
        for _ in range(5):
            tok = yield fifo
            got.append(tok[0])
            yield 3

    eng.spawn("p", producer())
    eng.spawn("c", consumer())
    eng.run()
    assert got == [0, 1, 2, 3, 4]
    assert fifo.peak == 2 and fifo.pushed == fifo.popped == 5

    eng = Engine()
    a, b = Fifo("a"), Fifo("b")

    def waits(f):
        yield f

    eng.spawn("x", waits(a))
    eng.spawn("y", waits(b))
    with pytest.raises(Deadlock) as e:
        eng.run()
    assert {w[0] for w in e.value.wait_set} == {"x", "y"}


def test_line_buffer_guards():
    lb = LineBuffer(3, 4, 2, 1, 10)
    assert lb.capacity == 2 * 4 * 2
    lb.write(0, 0, 0, slice(0, 2), [1, 2])
    with pytest.raises(LineBufferViolation):
        lb.column(2, 1, 0, slice(0, 2), 0)  # row 0 column 1 never written
    lb.write(1, 0, 0, slice(0, 2), [3, 4])
    assert lb.column(2, 0, 0, slice(0, 2), 0).tolist() == [[1, 2], [3, 4]]
    lb.write(2, 0, 0, slice(0, 2), [5, 6])  # row 0 is dead once row 2's window was read
    assert lb.column(3, 0, 0, slice(0, 2), 0).tolist() == [[3, 4], [5, 6]]
    with pytest.raises(LineBufferViolation):
        lb.write(0, 0, 0, slice(0, 2), [7, 8])  # out of order: would evict row 2
    # reading outside the frame yields padding zeros
    assert not lb.column(0, 0, 0, slice(0, 2), 0).any()


def test_executed_macs_match_pe_formulas():
    net = chain(TensorShape(6, 6, 8), [layer("c", m=64)])
    w, _ = prune_network(net, gen_random_weights(net, 0), PruneConfig())
    sched = uniform_schedule(net, 1, 4, 0.75)
    res = run_pipeline(net, sched, w, gen_random_image(net.input_shape, 0))
    cfg = sched["c"].stream
    executed = res.blocks["c"].stats.group_macs[0]
    assert executed // cfg.i_i == required_macs_conv(net.by_id["c"], cfg, 0.75).multipliers_needed
    assert executed // cfg.i_i == 288

    net = chain(TensorShape(6, 6, 8), [layer("d", "DepthwiseConv")])
    sched = uniform_schedule(net, 1, 4)
    res = run_pipeline(net, sched, gen_random_weights(net, 0), gen_random_image(net.input_shape, 0))
    executed = res.blocks["d"].stats.group_macs[0]
    assert -(-executed // 4) == required_pes_depthwise(net.by_id["d"], sched["d"].stream) == 18
