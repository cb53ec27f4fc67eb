"""Trace artifacts: Chrome trace-event JSON, SVG Gantt charts, CSV rows.

All emitters are deterministic: identical inputs produce byte-identical
output.
"""
from __future__ import annotations

import json

from .mmpl import TaskGraph, Violation
from .resources import GpuGroup
from .sched import Schedule


def chrome_trace_events(schedule: Schedule, graph: TaskGraph,
                        resources: list[GpuGroup]) -> list[dict]:
    """Complete ("ph": "X") events, timestamps in microseconds."""
    pids = {g.role: i for i, g in enumerate(resources)}
    events: list[dict] = []
    for role, pid in pids.items():
        events.append({"name": "process_name", "ph": "M", "pid": pid, "tid": 0,
                       "args": {"name": role}})
    for e in schedule.entries:
        task = graph[e.task_id]
        for gpu in e.gpu_ids:
            events.append({
                "name": e.task_id,
                "ph": "X",
                "ts": e.start_ms * 1000,
                "dur": (e.end_ms - e.start_ms) * 1000,
                "pid": pids[e.group],
                "tid": gpu,
                "args": {
                    "kind": task.kind.value,
                    "segment": task.segment,
                    "micro_batch": task.micro_batch,
                },
            })
    return events


def write_chrome_trace(path, schedule: Schedule, graph: TaskGraph,
                       resources: list[GpuGroup]) -> None:
    events = chrome_trace_events(schedule, graph, resources)
    with open(path, "w") as fh:
        json.dump({"traceEvents": events, "displayTimeUnit": "ms"}, fh, indent=1)
        fh.write("\n")


def validate_chrome_trace(events: list[dict]) -> list[Violation]:
    """Structural checks on a (re-)ingested trace: shape, durations,
    per-thread exclusivity."""
    out: list[Violation] = []
    lanes: dict[tuple, list[tuple[int, int, str]]] = {}
    for i, ev in enumerate(events):
        ph = ev.get("ph")
        if ph == "M":
            continue
        if ph != "X":
            out.append(Violation("UnknownPhase", f"event {i}: {ph!r}"))
            continue
        ts, dur = ev.get("ts"), ev.get("dur")
        if not isinstance(ts, int) or not isinstance(dur, int):
            out.append(Violation("MalformedEvent", f"event {i}"))
            continue
        if dur < 0:
            out.append(Violation("NegativeDuration", str(ev.get("name", i))))
            continue
        lanes.setdefault((ev.get("pid"), ev.get("tid")), []).append(
            (ts, ts + dur, str(ev.get("name", i))))
    for key, ivals in sorted(lanes.items(), key=str):
        ivals.sort()
        for (s1, e1, n1), (s2, e2, n2) in zip(ivals, ivals[1:]):
            if s2 < e1:
                out.append(Violation(
                    "ExclusivityViolation",
                    f"pid={key[0]} tid={key[1]}: {n1} overlaps {n2}"))
    return out


_PALETTE = [
    "#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#eeca3b",
    "#b279a2", "#ff9da6", "#9d755d", "#bab0ac", "#637939", "#843c39",
    "#7b4173", "#3182bd",
]


def render_gantt_svg(schedule: Schedule, graph: TaskGraph,
                     resources: list[GpuGroup], *, width: int = 1000) -> str:
    """Self-contained SVG: one row per GPU, one rectangle per entry,
    colored by task kind with an embedded legend."""
    makespan = max(schedule.horizon_ms, 1)
    row_h, pad, label_w = 22, 4, 140
    kinds = sorted({graph[e.task_id].kind.value for e in schedule.entries})
    colors = {k: _PALETTE[i % len(_PALETTE)] for i, k in enumerate(kinds)}

    rows: list[tuple[str, int]] = []  # (label, lane) in resource order
    lane_of: dict[tuple[str, int], int] = {}
    for g in resources:
        for gpu in range(g.gpu_count):
            lane_of[(g.role, gpu)] = len(rows)
            rows.append((f"{g.role}/gpu{gpu}", len(rows)))

    legend_h = 18 * len(kinds) + 8
    height = row_h * len(rows) + 2 * pad + 24 + legend_h
    scale = (width - label_w - 2 * pad) / makespan

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for label, lane in rows:
        y = pad + lane * row_h
        parts.append(f'<text x="{pad}" y="{y + 15}">{label}</text>')
        parts.append(
            f'<line x1="{label_w}" y1="{y + row_h}" x2="{width - pad}" '
            f'y2="{y + row_h}" stroke="#ddd"/>')
    for e in schedule.entries:
        task = graph[e.task_id]
        if e.end_ms == e.start_ms:
            continue
        x = label_w + e.start_ms * scale
        w = max(1.0, (e.end_ms - e.start_ms) * scale)
        tag = task.kind.value
        sub = task.micro_batch if task.micro_batch is not None else task.segment
        text = f"{tag}" + (f" {sub}" if sub is not None else "")
        for gpu in e.gpu_ids:
            y = pad + lane_of[(e.group, gpu)] * row_h + 2
            parts.append(
                f'<rect x="{x:.2f}" y="{y}" width="{w:.2f}" height="{row_h - 6}" '
                f'fill="{colors[tag]}" stroke="#333" stroke-width="0.5">'
                f'<title>{e.task_id} [{e.start_ms},{e.end_ms}]ms</title></rect>')
            if w > 8 * len(text):
                parts.append(
                    f'<text x="{x + 2:.2f}" y="{y + 12}" fill="white">{text}</text>')
    y0 = row_h * len(rows) + 2 * pad + 16
    parts.append(f'<text x="{pad}" y="{y0}">makespan: {schedule.horizon_ms} ms</text>')
    for i, k in enumerate(kinds):
        y = y0 + 10 + 18 * i
        parts.append(f'<rect x="{pad}" y="{y}" width="12" height="12" '
                     f'fill="{colors[k]}"/>')
        parts.append(f'<text x="{pad + 18}" y="{y + 10}">{k}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def csv_text(header: list[str], rows: list[list]) -> str:
    """RFC-4180 CSV with \\r\\n line endings."""
    import csv
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
