"""Deterministic discrete-event scheduler.

Places a task graph onto GPU groups under dependency, exclusivity, and
(optionally) memory constraints.  Time is integer milliseconds.  Also
provides schedule validation, trace metrics, and an exhaustive
branch-and-bound oracle for tiny instances.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

from .mmpl import Task, TaskGraph, TaskKind, Violation, validate_graph
from .resources import GpuGroup


class PlacementError(ValueError):
    pass


class MemoryExceeded(RuntimeError):
    pass


class OracleSizeExceeded(ValueError):
    pass


class PolicyKind(str, Enum):
    GREEDY = "greedy"
    SLOTTED = "slotted"
    BASELINE = "baseline"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind = PolicyKind.GREEDY
    # Slotted: GenFwd(j) may start only after CriticTeacher(j - lookahead)
    # has started, reproducing the stable-phase interleaving.
    lookahead_limit: int = 1


GREEDY = Policy(PolicyKind.GREEDY)
SLOTTED = Policy(PolicyKind.SLOTTED)
BASELINE = Policy(PolicyKind.BASELINE)


@dataclass(frozen=True)
class ScheduleEntry:
    task_id: str
    group: str
    gpu_ids: tuple[int, ...]
    start_ms: int
    end_ms: int


@dataclass
class Schedule:
    entries: list[ScheduleEntry] = field(default_factory=list)

    @property
    def horizon_ms(self) -> int:
        return max((e.end_ms for e in self.entries), default=0)

    def entry(self, task_id: str) -> ScheduleEntry:
        for e in self.entries:
            if e.task_id == task_id:
                return e
        raise KeyError(task_id)

    def start(self, task_id: str) -> int:
        return self.entry(task_id).start_ms

    def end(self, task_id: str) -> int:
        return self.entry(task_id).end_ms


def _tie_key(task: Task, order: dict[str, int]) -> tuple:
    # Lower micro-batch first, backward before forward, then creation order.
    mb = task.micro_batch if task.micro_batch is not None else 1 << 30
    bwd = 0 if task.kind is TaskKind.GEN_BWD else 1
    return (mb, bwd, order[task.id])


def _resolve_gpus(task: Task, group: GpuGroup) -> int:
    need = group.gpu_count if task.gpus_required is None else task.gpus_required
    if need > group.gpu_count:
        raise PlacementError(
            f"task {task.id} needs {need} GPUs but group "
            f"{group.role!r} has {group.gpu_count}")
    return need


def simulate(graph: TaskGraph, resources: list[GpuGroup],
             policy: Policy = GREEDY, *, enforce_memory: bool = False) -> Schedule:
    """Run the graph to completion; deterministic for identical inputs.

    Work-conserving: at each event time, ready tasks are started in
    tie-break order on the lowest-numbered free GPUs of their group
    (later tasks may backfill around one that does not fit).
    """
    groups = {g.role: g for g in resources}
    for t in graph.tasks.values():
        if t.group not in groups:
            raise PlacementError(f"task {t.id} targets unknown group {t.group!r}")
        _resolve_gpus(t, groups[t.group])

    order = graph.order()
    pending = {tid: set(t.deps) for tid, t in graph.tasks.items()}
    dependents: dict[str, list[str]] = {tid: [] for tid in graph.tasks}
    for t in graph.tasks.values():
        for d in t.deps:
            dependents[d].append(t.id)

    free: dict[str, list[int]] = {g.role: list(range(g.gpu_count)) for g in resources}
    mem: dict[tuple[str, int], int] = {}  # (group, gpu) -> resident bytes
    ready: set[str] = {tid for tid, deps in pending.items() if not deps}
    running: list[tuple[int, int, str, tuple[int, ...]]] = []  # (end, seq, tid, gpus)
    started: dict[str, int] = {}
    finished: dict[str, int] = {}
    entries: list[ScheduleEntry] = []
    seq = 0
    now = 0

    # Per-micro-batch bookkeeping for the slotted and baseline gates.
    ct_started: dict[int, bool] = {}
    mb_tasks: dict[int, set[str]] = {}
    for t in graph.tasks.values():
        if t.micro_batch is not None:
            mb_tasks.setdefault(t.micro_batch, set()).add(t.id)

    def gate_open(task: Task) -> bool:
        if policy.kind is PolicyKind.SLOTTED and task.kind is TaskKind.GEN_FWD \
                and task.micro_batch is not None:
            prev = task.micro_batch - policy.lookahead_limit
            if prev in mb_tasks and not ct_started.get(prev, False):
                return False
        if policy.kind is PolicyKind.BASELINE and task.micro_batch is not None:
            for mb, tids in mb_tasks.items():
                if mb < task.micro_batch and any(t not in finished for t in tids):
                    return False
        return True

    def try_start() -> bool:
        nonlocal seq
        progressed = False
        candidates = sorted((graph[tid] for tid in ready),
                            key=lambda t: _tie_key(t, order))
        for task in candidates:
            if not gate_open(task):
                continue
            group = groups[task.group]
            need = _resolve_gpus(task, group)
            if len(free[task.group]) < need:
                continue
            gpus = tuple(free[task.group][:need])
            if enforce_memory and group.hbm_bytes is not None and task.memory_delta > 0:
                for gpu in gpus:
                    if mem.get((task.group, gpu), 0) + task.memory_delta > group.hbm_bytes:
                        raise MemoryExceeded(
                            f"gpu {task.group}/{gpu} over capacity at t={now} "
                            f"starting {task.id}")
            free[task.group] = free[task.group][need:]
            for gpu in gpus:
                mem[(task.group, gpu)] = mem.get((task.group, gpu), 0) + task.memory_delta
            started[task.id] = now
            end = now + task.duration_ms
            heapq.heappush(running, (end, seq, task.id, gpus))
            seq += 1
            ready.discard(task.id)
            entries.append(ScheduleEntry(task.id, task.group, gpus, now, end))
            if task.kind is TaskKind.CRITIC_TEACHER and task.micro_batch is not None:
                ct_started[task.micro_batch] = True
            progressed = True
        return progressed

    def complete_until(t_end: int):
        while running and running[0][0] <= t_end:
            end, _, tid, gpus = heapq.heappop(running)
            finished[tid] = end
            task = graph[tid]
            free[task.group] = sorted(free[task.group] + list(gpus))
            for nxt in dependents[tid]:
                pending[nxt].discard(tid)
                if not pending[nxt] and nxt not in started:
                    ready.add(nxt)

    while len(finished) < len(graph.tasks):
        # Start everything possible at the current instant (zero-duration
        # tasks may cascade, so iterate to a fixpoint).
        while try_start():
            complete_until(now)
        if len(finished) == len(graph.tasks):
            break
        if not running:
            stuck = sorted(set(graph.tasks) - set(finished))
            raise PlacementError(f"schedule deadlocked; unfinished: {stuck}")
        now = running[0][0]
        complete_until(now)

    entries.sort(key=lambda e: (e.start_ms, order[e.task_id]))
    return Schedule(entries=entries)


def validate_schedule(schedule: Schedule, graph: TaskGraph,
                      resources: list[GpuGroup]) -> list[Violation]:
    """Dependency, exclusivity, affinity, memory, and completeness checks."""
    out: list[Violation] = []
    groups = {g.role: g for g in resources}
    seen: dict[str, ScheduleEntry] = {}
    for e in schedule.entries:
        if e.task_id not in graph.tasks:
            out.append(Violation("UnknownTask", e.task_id))
            continue
        if e.task_id in seen:
            out.append(Violation("DuplicateEntry", e.task_id))
        seen[e.task_id] = e
        task = graph[e.task_id]
        if e.end_ms - e.start_ms != task.duration_ms:
            out.append(Violation("DurationMismatch", e.task_id))
        if task.group != e.group or e.group not in groups:
            out.append(Violation("GroupAffinityViolation", e.task_id))
        elif any(g >= groups[e.group].gpu_count or g < 0 for g in e.gpu_ids):
            out.append(Violation("UnknownGpu", e.task_id))
    for tid in graph.tasks:
        if tid not in seen:
            out.append(Violation("MissingTask", tid))

    for e in schedule.entries:
        if e.task_id not in graph.tasks:
            continue
        for d in graph[e.task_id].deps:
            if d in seen and e.start_ms < seen[d].end_ms:
                out.append(Violation("DependencyViolation",
                                     f"{e.task_id} before {d} finished"))

    # Exclusivity: per physical GPU, busy intervals must not overlap.
    per_gpu: dict[tuple[str, int], list[tuple[int, int, str]]] = {}
    for e in schedule.entries:
        for g in e.gpu_ids:
            per_gpu.setdefault((e.group, g), []).append(
                (e.start_ms, e.end_ms, e.task_id))
    for (grp, g), ivals in sorted(per_gpu.items()):
        ivals.sort()
        for (s1, e1, t1), (s2, e2, t2) in zip(ivals, ivals[1:]):
            if s2 < e1:
                out.append(Violation("ExclusivityViolation",
                                     f"{grp}/gpu{g}: {t1} overlaps {t2}"))

    # Memory: running sum of deltas applied at task start, per GPU.
    for (grp, g), ivals in sorted(per_gpu.items()):
        cap = groups[grp].hbm_bytes if grp in groups else None
        if cap is None:
            continue
        level = 0
        for s1, _, tid in sorted(ivals):
            if tid in graph.tasks:
                level += graph[tid].memory_delta
                if level > cap:
                    out.append(Violation("MemoryViolation",
                                         f"{grp}/gpu{g} at t={s1}"))
    return out


@dataclass
class GroupUsage:
    busy_gpu_ms: int
    bubble_ratio: float


@dataclass
class TraceMetrics:
    makespan_ms: int
    per_group: dict[str, GroupUsage]
    peak_memory_bytes: dict[tuple[str, int], int]
    peak_memory_total: int
    throughput_fps: float | None = None
    feedback_latency_s: float | None = None


def metrics(schedule: Schedule, graph: TaskGraph, resources: list[GpuGroup],
            frames_per_chunk: int | None = None) -> TraceMetrics:
    """Makespan, per-group bubble ratios, and peak memory.

    Bubble ratio is measured over the full [0, makespan] horizon for every
    group.  An empty horizon yields bubble ratio 0 by convention.
    """
    makespan = schedule.horizon_ms
    per_group: dict[str, GroupUsage] = {}
    for g in resources:
        busy = sum((e.end_ms - e.start_ms) * len(e.gpu_ids)
                   for e in schedule.entries if e.group == g.role)
        denom = g.gpu_count * makespan
        ratio = 0.0 if denom == 0 else 1.0 - busy / denom
        per_group[g.role] = GroupUsage(busy_gpu_ms=busy, bubble_ratio=ratio)

    peaks: dict[tuple[str, int], int] = {}
    level: dict[tuple[str, int], int] = {}
    total_level = 0
    total_peak = 0
    for e in sorted(schedule.entries, key=lambda e: e.start_ms):
        delta = graph[e.task_id].memory_delta if e.task_id in graph.tasks else 0
        total_level += delta
        total_peak = max(total_peak, total_level)
        for g in e.gpu_ids:
            key = (e.group, g)
            level[key] = level.get(key, 0) + delta
            peaks[key] = max(peaks.get(key, 0), level[key])

    fps = None
    displays = sorted(e.end_ms for e in schedule.entries
                      if e.task_id in graph.tasks
                      and graph[e.task_id].kind is TaskKind.DISPLAY)
    if frames_per_chunk and len(displays) >= 2 and displays[-1] > displays[0]:
        fps = frames_per_chunk * (len(displays) - 1) * 1000.0 / (displays[-1] - displays[0])

    return TraceMetrics(makespan_ms=makespan, per_group=per_group,
                        peak_memory_bytes=peaks, peak_memory_total=total_peak,
                        throughput_fps=fps)


def critical_path_ms(graph: TaskGraph) -> int:
    memo: dict[str, int] = {}

    def down(tid: str) -> int:  # longest path starting at tid, inclusive
        if tid not in memo:
            memo[tid] = graph[tid].duration_ms + max(
                (down(n) for n in _dependents(graph)[tid]), default=0)
        return memo[tid]

    return max((down(tid) for tid in graph.tasks), default=0)


def _dependents(graph: TaskGraph) -> dict[str, list[str]]:
    if not hasattr(graph, "_dependents_cache"):
        dep: dict[str, list[str]] = {tid: [] for tid in graph.tasks}
        for t in graph.tasks.values():
            for d in t.deps:
                dep[d].append(t.id)
        graph._dependents_cache = dep
    return graph._dependents_cache


ORACLE_LIMIT = 12


def optimal_schedule_bruteforce(graph: TaskGraph,
                                resources: list[GpuGroup]) -> Schedule:
    """Provably minimum-makespan schedule via branch and bound.

    Branches on which ready tasks to start at each event time (including
    deliberate idling), bounded by the remaining critical path.  Enforced
    size cap keeps this an oracle for tiny instances only.
    """
    if len(graph.tasks) > ORACLE_LIMIT:
        raise OracleSizeExceeded(
            f"{len(graph.tasks)} tasks exceeds oracle limit {ORACLE_LIMIT}")
    bad = validate_graph(graph)
    if bad:
        raise ValueError(f"invalid graph: {bad}")

    groups = {g.role: g for g in resources}
    order = graph.order()
    ids = list(graph.tasks)
    idx = {tid: i for i, tid in enumerate(ids)}
    need = {tid: _resolve_gpus(graph[tid], groups[graph[tid].group])
            for tid in ids}

    # Longest path from each task to a sink (inclusive of own duration).
    dependents = _dependents(graph)
    cp: dict[str, int] = {}

    def cp_of(tid: str) -> int:
        if tid not in cp:
            cp[tid] = graph[tid].duration_ms + max(
                (cp_of(n) for n in dependents[tid]), default=0)
        return cp[tid]

    for tid in ids:
        cp_of(tid)

    best_schedule = simulate(graph, resources, GREEDY)
    best = [best_schedule.horizon_ms, best_schedule.entries]

    def lower_bound(now: int, running: tuple, unstarted: frozenset) -> int:
        lb = max((end for end, *_ in running), default=now)
        for tid in unstarted:
            lb = max(lb, now + cp[tid])
        for end, tid in ((e, t) for e, t, _ in running):
            for n in dependents[tid]:
                if n in unstarted:
                    lb = max(lb, end + cp[n])
        return lb

    seen_states: set = set()

    def dfs(now: int, running: tuple, done: frozenset, unstarted: frozenset,
            entries: tuple):
        if not running and not unstarted:
            if now < best[0]:
                best[0] = now
                best[1] = list(entries)
            return
        if lower_bound(now, running, unstarted) >= best[0]:
            return
        state = (now, running, unstarted)
        if state in seen_states:
            return
        seen_states.add(state)

        busy: dict[str, int] = {}
        for _, tid, gpus in running:
            busy[graph[tid].group] = busy.get(graph[tid].group, 0) + len(gpus)
        ready = sorted(
            (tid for tid in unstarted
             if all(d in done for d in graph[tid].deps)
             and need[tid] <= groups[graph[tid].group].gpu_count - busy.get(graph[tid].group, 0)),
            key=lambda t: order[t])

        def advance(running_, done_, unstarted_, entries_):
            t_next = min(end for end, *_ in running_)
            newly = frozenset(tid for end, tid, _ in running_ if end <= t_next)
            dfs(t_next,
                tuple(r for r in running_ if r[0] > t_next),
                done_ | newly, unstarted_, entries_)

        # Subset enumeration without permutations: at each position either
        # start ready[i] now or skip it for good at this instant.
        def choose(i: int, running_, busy_, unstarted_, entries_, started_any):
            if i == len(ready):
                if running_:
                    advance(running_, done, unstarted_, entries_)
                return
            tid = ready[i]
            grp = graph[tid].group
            # Branch 1: start it.
            if need[tid] <= groups[grp].gpu_count - busy_.get(grp, 0):
                taken = sorted(set(range(groups[grp].gpu_count)) -
                               {g for _, t2, gp in running_
                                if graph[t2].group == grp for g in gp})[:need[tid]]
                entry = ScheduleEntry(tid, grp, tuple(taken), now,
                                      now + graph[tid].duration_ms)
                nb = dict(busy_)
                nb[grp] = nb.get(grp, 0) + need[tid]
                choose(i + 1,
                       tuple(sorted(running_ + ((entry.end_ms, tid, entry.gpu_ids),))),
                       nb, unstarted_ - {tid}, entries_ + (entry,), True)
            # Branch 2: leave it idle at this instant.
            choose(i + 1, running_, busy_, unstarted_, entries_, started_any)

        choose(0, running, busy, unstarted, entries, False)

    dfs(0, tuple(), frozenset(), frozenset(ids), tuple())
    sched = Schedule(entries=sorted(best[1], key=lambda e: (e.start_ms, order[e.task_id])))
    return sched
