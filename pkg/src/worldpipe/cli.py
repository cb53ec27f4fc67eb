"""Command-line entry point.

Subcommands: plan, train-sim, infer-sim, replay, sweep, validate.
Artifacts (trace.json, gantt.svg, metrics.csv, summary.txt) are written to
--out (default $WORLDPIPE_OUT or ./out) and are byte-stable for identical
inputs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import streamsim, trainpipe
from .config import ConfigError, RunConfig, ValidationError, load_config
from .mmpl import (ChainMode, autoregressive_depth, build_macro_chain,
                   frame_ar_depth, unique_frame_count, validate_graph)
from .sched import BASELINE, GREEDY, SLOTTED, Policy, metrics, simulate
from .tracefmt import (csv_text, render_gantt_svg, validate_chrome_trace,
                       write_chrome_trace)

_POLICIES = {"greedy": GREEDY, "slotted": SLOTTED, "baseline": BASELINE}
_CHAINS = {"terminal": ChainMode.TERMINAL, "minmem": ChainMode.MIN_MEMORY_PEAK}


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("WORLDPIPE_OUT", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "chain", None):
        from dataclasses import replace
        cfg.generation = replace(cfg.generation, chain_mode=_CHAINS[args.chain])
    return cfg


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def cmd_plan(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    graph = build_macro_chain(cfg.generation)
    violations = validate_graph(graph)
    counts = unique_frame_count(cfg.generation.total_segments,
                                cfg.generation.anchors,
                                cfg.generation.chain_mode)
    _write(out / "graph.json", graph.to_json() + "\n")
    lines = [
        f"segments={cfg.generation.total_segments}",
        f"frames_per_segment={cfg.generation.frames_per_segment}",
        f"anchors={cfg.generation.anchors.as_tuple()}",
        f"chain_mode={cfg.generation.chain_mode.value}",
        f"tasks={len(graph)}",
        f"unique_frames={counts.unique}",
        f"generated_frames={counts.generated}",
        f"reuse_ratio={counts.reuse_ratio:.4f}",
        f"segment_ar_depth={autoregressive_depth(graph)}",
        f"frame_ar_depth={frame_ar_depth(counts.unique)}",
    ]
    _write(out / "summary.txt", "\n".join(lines) + "\n")
    if violations:
        print("graph violations:", *map(str, violations), sep="\n  ")
        return 1
    print("\n".join(lines))
    return 0


def cmd_train_sim(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    cost = cfg.train
    resources = cfg.train_groups
    graph = trainpipe.generator_step_graph(cost)
    policy = _POLICIES[args.policy or "greedy"]
    pipe = simulate(graph, resources, policy)
    base = simulate(graph, resources, BASELINE)
    gen_report = trainpipe.step_speedup(graph, resources)
    e2e = trainpipe.speedup(cost, resources)
    m = metrics(pipe, graph, resources)

    write_chrome_trace(out / "trace.json", pipe, graph, resources)
    write_chrome_trace(out / "trace_baseline.json", base, graph, resources)
    _write(out / "gantt.svg", render_gantt_svg(pipe, graph, resources))
    row = trainpipe.metrics_row(cost, resources)
    _write(out / "metrics.csv",
           csv_text(list(row), [[row[k] for k in row]]))
    lines = [
        f"gen_microbatches={cost.gen_microbatches}",
        f"baseline_ms={gen_report.baseline_ms}",
        f"pipelined_ms={gen_report.pipelined_ms}",
        f"speedup={gen_report.speedup:g}",
        f"end_to_end_baseline_ms={e2e.baseline_ms}",
        f"end_to_end_pipelined_ms={e2e.pipelined_ms}",
        f"end_to_end_speedup={e2e.speedup:.4f}",
        f"gen_bubble={m.per_group[trainpipe.GENERATOR].bubble_ratio:g}",
    ]
    _write(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_infer_sim(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    cost = cfg.inference
    resources = streamsim.default_inference_groups(cost)
    trace = streamsim.streaming_timeline(cfg.generation, cost, resources)
    fps = streamsim.throughput_fps(trace)
    latency = streamsim.feedback_latency(cost, fps)
    m = metrics(trace.schedule, trace.graph, resources,
                frames_per_chunk=cost.vae_chunk_frames)

    write_chrome_trace(out / "trace.json", trace.schedule, trace.graph, resources)
    _write(out / "gantt.svg", render_gantt_svg(trace.schedule, trace.graph,
                                               resources))
    rows = []
    for k in range(1, trace.n_chunks + 1):
        rows.append([k,
                     trace.schedule.end(f"vae_chunk/c{k}"),
                     trace.schedule.end(f"sr_chunk/c{k}"),
                     trace.schedule.end(f"display/c{k}")])
    _write(out / "metrics.csv",
           csv_text(["chunk", "vae_done_ms", "sr_done_ms", "display_ms"], rows))
    lines = [
        f"chunks={trace.n_chunks}",
        f"fps={fps:.1f}",
        f"latency_s={latency:.2f}",
        f"sr_stage_fps={cost.sr_stage_fps():.1f}",
        f"peak_mem_bytes={m.peak_memory_total}",
        f"reuse_ratio={trace.reuse_ratio:.4f}",
        f"makespan_ms={m.makespan_ms}",
    ]
    _write(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_replay(cfg: RunConfig | None, args) -> int:
    from .guidance import parse_key_trace, replay_key_trace
    out = _out_dir(args)
    text = Path(args.keys).read_text()
    events = parse_key_trace(text)
    log = replay_key_trace(events)
    rows = [[t, f"{p.x:.6f}", f"{p.y:.6f}", f"{p.z:.6f}",
             f"{p.yaw:.6f}", f"{p.pitch:.6f}"] for t, p in log]
    _write(out / "pose_log.csv",
           csv_text(["t_ms", "x", "y", "z", "yaw", "pitch"], rows))
    final = log[-1][1] if log else None
    summary = f"events={len(events)}\nfinal_pose={final}\n"
    _write(out / "summary.txt", summary)
    print(summary, end="")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    from dataclasses import replace
    out = _out_dir(args)
    values = [v for v in args.values.split(",") if v]
    rows: list[list] = []
    if args.param == "ratio":
        header = ["ratio", "slot_ms", "imbalance"]
        for v in values:
            g, c, t = (int(x) for x in v.split(":"))
            slot = trainpipe.slot_time(cfg.work, g, c, t)
            imb = slot - min((cfg.work.gen_fwd_work + cfg.work.gen_bwd_work) / g,
                             cfg.work.critic_work / c, cfg.work.teacher_work / t)
            rows.append([v, f"{slot:g}", f"{imb:g}"])
    elif args.param == "gen_microbatches":
        header = ["gen_microbatches", "baseline_ms", "pipelined_ms", "speedup"]
        for v in values:
            cost = replace(cfg.train, gen_microbatches=int(v))
            rep = trainpipe.step_speedup(
                trainpipe.generator_step_graph(cost), cfg.train_groups)
            rows.append([int(v), rep.baseline_ms, rep.pipelined_ms,
                         f"{rep.speedup:.6f}"])
    else:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    _write(out / "metrics.csv", csv_text(header, rows))
    print(csv_text(header, rows), end="")
    return 0


def cmd_validate(args) -> int:
    path = Path(args.trace)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read trace: {exc}", file=sys.stderr)
        return 2
    events = doc.get("traceEvents", doc if isinstance(doc, list) else [])
    violations = validate_chrome_trace(events)
    if violations:
        for v in violations:
            print(f"violation: {v}")
        return 1
    print(f"ok: {len(events)} events")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worldpipe",
        description="Discrete-event simulator for pipelined world-model "
                    "training and streaming inference schedules.")
    parser.add_argument("--config", default=None, help="TOML fixture path")
    parser.add_argument("--out", default=None,
                        help="output directory (default $WORLDPIPE_OUT or ./out)")
    sub = parser.add_subparsers(dest="scenario", required=True)

    for name in ("plan", "train-sim", "infer-sim"):
        p = sub.add_parser(name)
        p.add_argument("--policy", choices=sorted(_POLICIES), default=None)
        p.add_argument("--chain", choices=sorted(_CHAINS), default=None)

    replay = sub.add_parser("replay")
    replay.add_argument("--keys", required=True, help="key-trace file")

    sweep = sub.add_parser("sweep")
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")

    val = sub.add_parser("validate")
    val.add_argument("trace", help="trace.json to check")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.scenario == "validate":
            return cmd_validate(args)
        if args.scenario == "replay":
            return cmd_replay(None, args)
        if args.config is None:
            raise ConfigError("--config is required for this scenario")
        cfg = _apply_overrides(load_config(args.config), args)
        handler = {"plan": cmd_plan, "train-sim": cmd_train_sim,
                   "infer-sim": cmd_infer_sim, "sweep": cmd_sweep}[args.scenario]
        return handler(cfg, args)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # simulation errors carry module-qualified names
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
