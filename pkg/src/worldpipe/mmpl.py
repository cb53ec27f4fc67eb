"""Segment-level generation task graphs.

Builds the hierarchical planning structure used by the generator: per-segment
anchor prediction (micro planning), an autoregressive chain of segments
(macro planning), two-stage content population between anchors, and the
optional reconstruction/guidance closed loop.  Graphs are plain data; costs
and placement are attached later by the schedulers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable


class InvalidSegmentLength(ValueError):
    pass


class InvalidAnchors(ValueError):
    pass


class TaskKind(str, Enum):
    MICRO_PLAN = "micro_plan"
    POPULATE_A = "populate_a"
    POPULATE_B = "populate_b"
    BOUNDARY_REENCODE = "boundary_reencode"
    RECON = "recon"
    GUIDE_RENDER = "guide_render"
    GEN_FWD = "gen_fwd"
    GEN_BWD = "gen_bwd"
    CRITIC_TEACHER = "critic_teacher"
    CRITIC_TRAIN = "critic_train"
    ROLLOUT = "rollout"
    VAE_CHUNK = "vae_chunk"
    SR_CHUNK = "sr_chunk"
    DISPLAY = "display"


class AnchorRule(str, Enum):
    PAPER_ILLUSTRATION = "paper-illustration"
    MIDPOINT = "midpoint"
    CUSTOM = "custom"


class ChainMode(str, Enum):
    TERMINAL = "terminal"
    MIN_MEMORY_PEAK = "minmem"


@dataclass(frozen=True)
class AnchorSet:
    t_a: int
    t_b: int
    t_c: int

    def __post_init__(self):
        if not (1 < self.t_a < self.t_b < self.t_c):
            raise InvalidAnchors(
                f"anchors must satisfy 1 < t_a < t_b < t_c, got "
                f"({self.t_a}, {self.t_b}, {self.t_c})"
            )

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.t_a, self.t_b, self.t_c)


@dataclass(frozen=True)
class GenerationConfig:
    total_segments: int
    frames_per_segment: int
    anchor_rule: AnchorRule = AnchorRule.PAPER_ILLUSTRATION
    custom_anchors: tuple[int, int, int] | None = None
    chain_mode: ChainMode = ChainMode.TERMINAL
    include_loop_tasks: bool = False
    # Open-question toggles, defaults per the shipped behaviour:
    # population stage B waits for stage A; boundary re-encode does not gate
    # the next segment's planning.
    populate_b_waits_for_a: bool = True
    reencode_gates_next_plan: bool = False

    def __post_init__(self):
        if self.total_segments < 1:
            raise ValueError("total_segments must be >= 1")
        if self.frames_per_segment < 4:
            raise InvalidSegmentLength(
                f"frames_per_segment must be >= 4, got {self.frames_per_segment}"
            )

    @property
    def anchors(self) -> AnchorSet:
        return micro_anchors(self.frames_per_segment, self.anchor_rule,
                             self.custom_anchors)


@dataclass(frozen=True)
class Task:
    id: str
    kind: TaskKind
    segment: int | None = None
    micro_batch: int | None = None
    deps: frozenset[str] = frozenset()
    duration_ms: int = 0
    group: str = "inference"
    gpus_required: int | None = 1  # None means the whole group (collective stage)
    memory_delta: int = 0
    frames: tuple[int, int] | None = None  # inclusive local frame range, may be empty

    def with_(self, **kw) -> "Task":
        return replace(self, **kw)


@dataclass
class TaskGraph:
    tasks: dict[str, Task] = field(default_factory=dict)
    config: GenerationConfig | None = None

    def add(self, task: Task) -> Task:
        if task.id in self.tasks:
            raise ValueError(f"duplicate task id {task.id!r}")
        self.tasks[task.id] = task
        return task

    def __len__(self) -> int:
        return len(self.tasks)

    def __contains__(self, tid: str) -> bool:
        return tid in self.tasks

    def __getitem__(self, tid: str) -> Task:
        return self.tasks[tid]

    def order(self) -> dict[str, int]:
        """Insertion index per task id; used as the final tie-break key."""
        return {tid: i for i, tid in enumerate(self.tasks)}

    def edge_count(self) -> int:
        return sum(len(t.deps) for t in self.tasks.values())

    def of_kind(self, kind: TaskKind) -> list[Task]:
        return [t for t in self.tasks.values() if t.kind is kind]

    def to_json(self) -> str:
        records = [
            {
                "id": t.id,
                "kind": t.kind.value,
                "segment": t.segment,
                "deps": sorted(t.deps),
                "duration_ms": t.duration_ms,
                "group": t.group,
                "gpus": t.gpus_required,
                "mem_delta_bytes": t.memory_delta,
            }
            for t in self.tasks.values()
        ]
        return json.dumps({"tasks": records}, indent=2)


def micro_anchors(n: int, rule: AnchorRule = AnchorRule.PAPER_ILLUSTRATION,
                  custom: tuple[int, int, int] | None = None) -> AnchorSet:
    """Anchor frame indices (t_a, t_b, t_c) for a segment of n frames."""
    if n < 4:
        raise InvalidSegmentLength(f"segment needs >= 4 frames, got {n}")
    if rule is AnchorRule.CUSTOM:
        if custom is None:
            raise InvalidAnchors("custom rule requires explicit anchors")
        anchors = AnchorSet(*custom)
        if anchors.t_c > n:
            raise InvalidAnchors(f"t_c={anchors.t_c} exceeds segment length {n}")
        return anchors
    if rule is AnchorRule.PAPER_ILLUSTRATION:
        return AnchorSet(2, n // 2 + 1, n)
    return AnchorSet(2, max(3, n // 2), n)


def _tid(kind: TaskKind, s: int) -> str:
    return f"{kind.value}/s{s}"


def build_segment_tasks(s: int, anchors: AnchorSet, *,
                        populate_b_waits_for_a: bool = True) -> list[Task]:
    """The four intra-segment tasks: plan, two population stages, re-encode.

    Population stage A covers frames t_a+1..t_b-1, stage B covers
    t_b+1..t_c-1.  Empty ranges still emit a task (duration 0) so schedule
    accounting stays uniform across segments.
    """
    plan = Task(_tid(TaskKind.MICRO_PLAN, s), TaskKind.MICRO_PLAN, segment=s)
    pop_a = Task(
        _tid(TaskKind.POPULATE_A, s), TaskKind.POPULATE_A, segment=s,
        deps=frozenset({plan.id}),
        frames=(anchors.t_a + 1, anchors.t_b - 1),
    )
    b_deps = {plan.id}
    if populate_b_waits_for_a:
        b_deps.add(pop_a.id)
    pop_b = Task(
        _tid(TaskKind.POPULATE_B, s), TaskKind.POPULATE_B, segment=s,
        deps=frozenset(b_deps),
        frames=(anchors.t_b + 1, anchors.t_c - 1),
    )
    reenc = Task(
        _tid(TaskKind.BOUNDARY_REENCODE, s), TaskKind.BOUNDARY_REENCODE,
        segment=s, deps=frozenset({plan.id}),
    )
    return [plan, pop_a, pop_b, reenc]


def build_macro_chain(config: GenerationConfig) -> TaskGraph:
    """Chain per-segment task groups autoregressively.

    MicroPlan(s) depends on MicroPlan(s-1) only (its initial frame is an
    anchor of the previous segment), never on the previous segment's
    population.  With loop tasks enabled, each segment also spawns a
    reconstruction task over its anchors whose rendering gates the next
    segment's planning.
    """
    graph = TaskGraph(config=config)
    anchors = config.anchors
    for s in range(config.total_segments):
        tasks = build_segment_tasks(
            s, anchors, populate_b_waits_for_a=config.populate_b_waits_for_a)
        plan = tasks[0]
        extra: set[str] = set()
        if s > 0:
            extra.add(_tid(TaskKind.MICRO_PLAN, s - 1))
            if config.reencode_gates_next_plan:
                extra.add(_tid(TaskKind.BOUNDARY_REENCODE, s - 1))
            if config.include_loop_tasks:
                extra.add(_tid(TaskKind.GUIDE_RENDER, s))
        if extra:
            tasks[0] = plan.with_(deps=plan.deps | extra)
        for t in tasks:
            graph.add(t)
        if config.include_loop_tasks:
            recon = Task(
                _tid(TaskKind.RECON, s), TaskKind.RECON, segment=s,
                deps=frozenset({_tid(TaskKind.MICRO_PLAN, s)}),
            )
            graph.add(recon)
            if s + 1 < config.total_segments:
                graph.add(Task(
                    _tid(TaskKind.GUIDE_RENDER, s + 1), TaskKind.GUIDE_RENDER,
                    segment=s + 1, deps=frozenset({recon.id}),
                ))
    return graph


@dataclass(frozen=True)
class FrameCount:
    unique: int
    generated: int

    @property
    def reuse_ratio(self) -> float:
        return 1.0 - self.unique / self.generated


def unique_frame_count(total_segments: int, anchors: AnchorSet,
                       chain_mode: ChainMode) -> FrameCount:
    """Unique vs generated frame totals under the chosen chaining rule.

    Terminal chaining shares one boundary frame per junction; min-memory-peak
    chaining restarts each segment at t_b, re-generating the tail of the
    previous segment (frame reuse).
    """
    s, n = total_segments, anchors.t_c
    generated = s * (n - 1) + 1
    if chain_mode is ChainMode.TERMINAL:
        unique = generated
    else:
        # Each added segment is offset t_b - 1 frames from its predecessor,
        # so it contributes exactly t_b - 1 frames not covered before.
        unique = n + (s - 1) * (anchors.t_b - 1)
    return FrameCount(unique=unique, generated=generated)


def segment_frame_offset(anchors: AnchorSet, chain_mode: ChainMode) -> int:
    """Global-index offset between consecutive segments' local frame 1."""
    if chain_mode is ChainMode.TERMINAL:
        return anchors.t_c - 1
    return anchors.t_b - 1


def autoregressive_depth(graph: TaskGraph) -> int:
    """Longest dependency chain counted in MicroPlan tasks."""
    memo: dict[str, int] = {}

    def depth(tid: str) -> int:
        if tid in memo:
            return memo[tid]
        task = graph[tid]
        memo[tid] = 0  # cycle guard; validate_graph reports real cycles
        d = max((depth(d) for d in task.deps if d in graph.tasks), default=0)
        memo[tid] = d + (1 if task.kind is TaskKind.MICRO_PLAN else 0)
        return memo[tid]

    return max((depth(t.id) for t in graph.of_kind(TaskKind.MICRO_PLAN)),
               default=0)


def frame_ar_depth(total_frames: int) -> int:
    """Depth of the frame-by-frame autoregressive baseline: one per frame."""
    return total_frames


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code}({self.detail})" if self.detail else self.code


def validate_graph(graph: TaskGraph) -> list[Violation]:
    """Structural checks: cycles, dangling deps, missing plans, durations."""
    out: list[Violation] = []
    for t in graph.tasks.values():
        for d in t.deps:
            if d not in graph.tasks:
                out.append(Violation("DanglingDep", f"{t.id}->{d}"))
        if t.duration_ms < 0:
            out.append(Violation("NegativeDuration", t.id))
        if t.gpus_required is not None and t.gpus_required < 1:
            out.append(Violation("InvalidGpuCount", t.id))

    # Kahn's algorithm over resolvable edges; leftovers are on a cycle.
    indeg = {tid: sum(1 for d in t.deps if d in graph.tasks)
             for tid, t in graph.tasks.items()}
    stack = [tid for tid, d in indeg.items() if d == 0]
    seen = 0
    dependents: dict[str, list[str]] = {tid: [] for tid in graph.tasks}
    for t in graph.tasks.values():
        for d in t.deps:
            if d in dependents:
                dependents[d].append(t.id)
    while stack:
        tid = stack.pop()
        seen += 1
        for nxt in dependents[tid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                stack.append(nxt)
    if seen != len(graph.tasks):
        cyclic = sorted(tid for tid, d in indeg.items() if d > 0)
        out.append(Violation("CycleDetected", ",".join(cyclic)))

    if graph.config is not None:
        have = {t.segment for t in graph.of_kind(TaskKind.MICRO_PLAN)}
        for s in range(graph.config.total_segments):
            if s not in have:
                out.append(Violation("MissingPlanTask", str(s)))
    return out


def topo_order(graph: TaskGraph) -> list[str]:
    """Deterministic topological order (insertion order among ready tasks)."""
    indeg = {tid: len(t.deps) for tid, t in graph.tasks.items()}
    dependents: dict[str, list[str]] = {tid: [] for tid in graph.tasks}
    for t in graph.tasks.values():
        for d in t.deps:
            dependents[d].append(t.id)
    order: list[str] = []
    ready = [tid for tid in graph.tasks if indeg[tid] == 0]
    while ready:
        tid = ready.pop(0)
        order.append(tid)
        for nxt in dependents[tid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(graph.tasks):
        raise ValueError("graph has a cycle")
    return order
