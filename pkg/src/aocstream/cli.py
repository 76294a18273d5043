"""Command line: analyze, fit, sweep, schedule and simulate.

Exit codes: 0 ok, 1 usage, 2 validation error, 3 simulation mismatch.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import memmodel, perfmodel
from .compress import PruneConfig, QuantConfig, prune_network
from .errors import AocStreamError
from .netspec import atomic_write, build_mobilenet_ssdlitex, build_ssdlitex, load_network
from .oracle import network_forward_ref
from .plots import bar_chart, line_chart
from .schedule import (accumulation_bytes, auto_schedule, load_schedule, save_schedule,
                       schedule_period)
from .tensors import load_activation, load_weights, save_activation, save_weights
from .testkit import (RandomNetSpec, gen_random_image, gen_random_net, gen_random_schedule,
                      gen_random_weights)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_MISMATCH = 0, 1, 2, 3
FAMILIES = ("mobilenet-ssdlitex", "ssdlitex")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    command: str
    net: str
    prune: PruneConfig
    quant: QuantConfig
    schedule: str
    device: str
    out: str
    seed: int
    clock_hz: float
    svg: bool


def family_builder(spec):
    """``mobilenet-ssdlitex`` or ``ssdlitex[:stages]`` -> size -> NetworkSpec."""
    name, *rest = spec.split(":")
    if name == "mobilenet-ssdlitex" and not rest:
        return build_mobilenet_ssdlitex
    if name == "ssdlitex" and len(rest) <= 1:
        stages = int(rest[0]) if rest else 1
        return lambda size: build_ssdlitex(size, stages)
    raise UsageError(f"unknown network family {spec!r}; use one of {FAMILIES}")


def resolve_net(spec):
    """``mobilenet-ssdlitex:SIZE``, ``ssdlitex:SIZE[:STAGES]``, ``random:SEED`` or a file."""
    if os.path.exists(spec):
        return load_network(spec)
    name, _, rest = spec.partition(":")
    if name == "random" and rest:
        return gen_random_net(RandomNetSpec(seed=int(rest)))
    if name in FAMILIES and rest:
        size, _, stages = rest.partition(":")
        fam = name + (":" + stages if stages else "")
        return family_builder(fam)(int(size))
    raise UsageError(f"--net {spec!r} is neither a file nor a known builder")


def load_overrides(path):
    if not path:
        return {}
    with open(path) as f:
        return {k: int(v) for k, v in json.load(f).items()}


def make_config(args):
    try:
        prune = PruneConfig.parse(args.prune, load_overrides(getattr(args, "prune_overrides", None)))
        quant = QuantConfig(args.bits, args.weight_bits)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return RunConfig(args.command, args.net, prune, quant, getattr(args, "schedule", "auto"),
                     getattr(args, "device", "XCKU5P"), args.out, args.seed,
                     args.clock_mhz * 1e6, args.svg)


def emit(cfg, name, text):
    """Write ``text`` to the output directory atomically, or print it."""
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        atomic_write(os.path.join(cfg.out, name), text)
    else:
        sys.stdout.write(text)


# commands ----------------------------------------------------------------------

def analyze_totals(report):
    return {"weight_bytes": report.weight_total, "pruned_weight_bytes": report.weight_pruned_total,
            "activation_bytes": report.frame_buffer_max, "line_buffer_bytes": report.line_buffer_sum}


def cmd_analyze(cfg):
    net = resolve_net(cfg.net)
    rep = memmodel.memory_report(net, cfg.prune, cfg.quant)
    emit(cfg, "memory.csv", memmodel.report_csv(rep))
    if cfg.svg:
        labels = [r.layer for r in rep.rows]
        emit(cfg, "memory.svg", bar_chart(
            f"{net.name}: per-layer activation storage (bytes)", labels,
            {"frame (output map)": [r.frame_out_bytes for r in rep.rows],
             "line buffer": [r.line_buffer_bytes for r in rep.rows]}))
    print(f"network {net.name}: {len(net.layers)} layers")
    print(f"weights dense {rep.weight_total} B, pruned {cfg.prune.label} {rep.weight_pruned_total} B")
    print(f"frame buffer max {rep.frame_buffer_max} B at {rep.frame_buffer_layer}")
    print(f"line buffer sum {rep.line_buffer_sum} B ({rep.line_to_frame:.4f} of frame buffer)")
    return EXIT_OK


def cmd_fit(cfg, arch):
    net = resolve_net(cfg.net)
    device = memmodel.get_device(cfg.device)
    accum = 0
    if cfg.schedule not in ("auto", "none") and arch == "line":
        accum = accumulation_bytes(net, load_schedule(cfg.schedule), cfg.quant.activation_bits)
    prune = cfg.prune if arch == "line" else None
    v = memmodel.fits_on_chip(net, prune, cfg.quant, device, arch, accum)
    print(v.line(device.name))
    print(f"  weights {v.breakdown['weights']} B, activations {v.breakdown['activations']} B "
          f"({arch}-based)")
    return EXIT_OK


SWEEP_FIELDS = memmodel.SWEEP_FIELDS + ("ops_per_frame_dense", "ops_per_frame_pruned",
                                        "multipliers", "analytic_fps")


def cmd_sweep(cfg, sizes, budget):
    if not sizes:
        raise UsageError("sweep needs at least one size")
    builder = family_builder(cfg.net)
    rows = []
    for s in sizes:
        net = builder(s)
        row = memmodel.sweep_row(s, net, cfg.prune, cfg.quant)
        ops = perfmodel.ops_per_frame(net, prune=cfg.prune)
        sch = auto_schedule(net, cfg.prune, budget=budget)
        row.update(ops_per_frame_dense=ops.dense, ops_per_frame_pruned=ops.pruned,
                   multipliers=sch.total_multipliers(net),
                   analytic_fps=f"{float(perfmodel.analytic_fps(net, sch, cfg.clock_hz)):.3f}")
        rows.append(row)
    emit(cfg, "sweep.csv", memmodel.rows_csv(rows, SWEEP_FIELDS))
    if cfg.svg:
        emit(cfg, "sweep.svg", line_chart(
            f"{cfg.net}: memory vs input size (bytes)", sizes,
            {f: [r[f] for r in rows] for f in ("weight_bytes", "pruned_weight_bytes",
                                                "activation_bytes", "line_buffer_bytes")}))
    return EXIT_OK


def cmd_schedule(cfg, budget, period):
    net = resolve_net(cfg.net)
    sch = auto_schedule(net, cfg.prune, budget=budget, period=period)
    name = "schedule.json"
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        save_schedule(sch, os.path.join(cfg.out, name))
    else:
        sys.stdout.write(sch.dumps())
    fps = perfmodel.analytic_fps(net, sch, cfg.clock_hz)
    print(f"multipliers {sch.total_multipliers(net)}, period {schedule_period(net, sch)} cycles, "
          f"{float(fps):.2f} fps at {cfg.clock_hz / 1e6:g} MHz", file=sys.stderr)
    return EXIT_OK


def load_weight_dir(net, path):
    return {lid: load_weights(os.path.join(path, f"{lid}.w"))
            for lid in net.topo_order if net.by_id[lid].has_weights}


def first_mismatch(ref, got):
    for key in sorted(ref):
        diff = np.argwhere(ref[key].values != got[key].values)
        if len(diff):
            c, y, x = (int(v) for v in diff[0])
            return key, c, y, x, int(ref[key].values[c, y, x]), int(got[key].values[c, y, x])
    return None


def cmd_simulate(cfg, args):
    from .streamsim import run_pipeline

    net = resolve_net(cfg.net)
    if args.weights:
        weights = load_weight_dir(net, args.weights)
    else:
        weights = gen_random_weights(net, cfg.seed, cfg.quant)
        if args.prune != "none":
            weights, _ = prune_network(net, weights, cfg.prune)
    rom = load_weight_dir(net, args.rom) if args.rom else weights
    if args.save_weights:
        os.makedirs(args.save_weights, exist_ok=True)
        for lid, w in weights.items():
            save_weights(w, os.path.join(args.save_weights, f"{lid}.w"))
    if args.image:
        image = load_activation(args.image)
    else:
        image = gen_random_image(net.input_shape, cfg.seed + 1, cfg.quant.activation_bits)

    if cfg.schedule == "auto":
        sch = auto_schedule(net, cfg.prune if args.prune != "none" else PruneConfig.parse("none"),
                            budget=args.budget)
    elif cfg.schedule == "random":
        sch = gen_random_schedule(net, cfg.seed)
    else:
        sch = load_schedule(cfg.schedule)

    ref = network_forward_ref(net, weights, image)
    res = run_pipeline(net, sch, rom, image, fifo_capacity=args.fifo, frames=args.frames)
    stats = res.stats
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        for key, t in res.outputs.items():
            save_activation(t, os.path.join(cfg.out, f"{key}.act"))
        atomic_write(os.path.join(cfg.out, "cycles.json"), stats.to_text())
    print(f"cycles/frame {stats.steady_cycles_per_frame:.0f} (analytic {schedule_period(net, sch)}), "
          f"latency {stats.latency}, {stats.fps(cfg.clock_hz):.2f} fps at "
          f"{cfg.clock_hz / 1e6:g} MHz")
    bad = first_mismatch(ref, res.outputs)
    if bad:
        key, c, y, x, want, got = bad
        print(f"FAIL: {key} channel {c} row {y} col {x}: expected {want}, got {got}")
        return EXIT_MISMATCH
    print(f"PASS: {len(ref)} outputs bit-exact")
    return EXIT_OK


# parser -------------------------------------------------------------------------

def _common(p, net_default=None):
    p.add_argument("--net", required=net_default is None, default=net_default,
                   help="builder (mobilenet-ssdlitex:512, ssdlitex:320:1, random:SEED) or file")
    p.add_argument("--bits", type=int, default=8, help="activation bits (8..10)")
    p.add_argument("--weight-bits", type=int, default=8)
    p.add_argument("--prune", default="8:2", help="G:K, or 'none'")
    p.add_argument("--prune-overrides", help="JSON file {layer id: keep}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clock-mhz", type=float, default=200.0)
    p.add_argument("--out", help="output directory (default: stdout)")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")


def build_parser():
    p = _Parser(prog="aocstream", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="per-layer memory report")
    _common(a)

    f = sub.add_parser("fit", help="on-chip fit verdict")
    _common(f)
    f.add_argument("--device", default="XCKU5P")
    f.add_argument("--arch", choices=("line", "frame"), default="line")
    f.add_argument("--schedule", default="none", help="schedule file adds accumulation buffers")

    s = sub.add_parser("sweep", help="memory and perf over input sizes")
    _common(s, net_default="mobilenet-ssdlitex")
    s.add_argument("--sizes", default="", help="comma-separated input sizes")
    s.add_argument("--budget", type=int, default=464, help="multiplier budget for perf columns")

    c = sub.add_parser("schedule", help="auto-balanced schedule")
    _common(c)
    c.add_argument("--budget", type=int, help="total multiplier budget")
    c.add_argument("--period", type=int, help="target cycles per frame")

    m = sub.add_parser("simulate", help="stream simulation checked against the oracle")
    _common(m)
    m.add_argument("--schedule", default="auto", help="'auto', 'random' or a schedule file")
    m.add_argument("--budget", type=int, help="multiplier budget for the auto schedule")
    m.add_argument("--weights", help="directory of <layer>.w dumps (default: synthetic from seed)")
    m.add_argument("--rom", help="weights loaded into the simulated blocks (default: --weights)")
    m.add_argument("--save-weights", help="write the reference weights to this directory")
    m.add_argument("--image", help="input tensor dump (default: synthetic from seed)")
    m.add_argument("--frames", type=int, default=1)
    m.add_argument("--fifo", type=int, default=4, help="FIFO capacity in tokens")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = make_config(args)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.arch)
        if args.command == "sweep":
            try:
                sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
            except ValueError:
                raise UsageError(f"bad --sizes {args.sizes!r}") from None
            return cmd_sweep(cfg, sizes, args.budget)
        if args.command == "schedule":
            return cmd_schedule(cfg, args.budget, args.period)
        return cmd_simulate(cfg, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (AocStreamError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
