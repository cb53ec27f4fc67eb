"""Distillation training pipelines: generator-step and critic-step graphs.

The generator step runs, per micro-batch, a generator forward, a merged
critic/teacher forward (duration = max of the two), and a generator
backward.  The critic step freezes the generator and follows a simple
producer-consumer pattern (rollout then critic update).
"""
from __future__ import annotations

from dataclasses import dataclass

from .mmpl import Task, TaskGraph, TaskKind
from .resources import GpuGroup
from .sched import (BASELINE, GREEDY, Policy, Schedule, metrics, simulate)


class PatternNotApplicable(ValueError):
    pass


class InsufficientGpus(ValueError):
    pass


GENERATOR = "generator"
CRITIC_TEACHER_GROUP = "critic_teacher"
CRITIC = "critic"


@dataclass(frozen=True)
class TrainCostModel:
    gen_fwd_ms: int = 1
    gen_bwd_ms: int = 1
    critic_fwd_ms: int = 2
    teacher_fwd_ms: int = 2
    rollout_ms: int = 1
    critic_train_ms: int = 1
    denoising_steps: int = 4  # fixed per step for predictable stage durations
    gen_microbatches: int = 7
    critic_microbatches: int = 4

    def __post_init__(self):
        for f_ in ("gen_fwd_ms", "gen_bwd_ms", "critic_fwd_ms", "teacher_fwd_ms",
                   "rollout_ms", "critic_train_ms"):
            if getattr(self, f_) < 0:
                raise ValueError(f"{f_} must be >= 0")
        if self.denoising_steps < 1:
            raise ValueError("denoising_steps must be >= 1")

    @property
    def critic_teacher_ms(self) -> int:
        return max(self.critic_fwd_ms, self.teacher_fwd_ms)


@dataclass(frozen=True)
class WorkModel:
    gen_fwd_work: float
    gen_bwd_work: float
    critic_work: float
    teacher_work: float

    def __post_init__(self):
        for f_ in ("gen_fwd_work", "gen_bwd_work", "critic_work", "teacher_work"):
            if getattr(self, f_) <= 0:
                raise ValueError(f"{f_} must be > 0")


def generator_step_graph(cost: TrainCostModel) -> TaskGraph:
    """Per micro-batch i: GenFwd(i) -> CriticTeacher(i) -> GenBwd(i)."""
    graph = TaskGraph()
    for i in range(1, cost.gen_microbatches + 1):
        fwd = graph.add(Task(
            f"gen_fwd/m{i}", TaskKind.GEN_FWD, micro_batch=i,
            duration_ms=cost.gen_fwd_ms, group=GENERATOR, gpus_required=None))
        ct = graph.add(Task(
            f"critic_teacher/m{i}", TaskKind.CRITIC_TEACHER, micro_batch=i,
            deps=frozenset({fwd.id}), duration_ms=cost.critic_teacher_ms,
            group=CRITIC_TEACHER_GROUP, gpus_required=None))
        graph.add(Task(
            f"gen_bwd/m{i}", TaskKind.GEN_BWD, micro_batch=i,
            deps=frozenset({ct.id}), duration_ms=cost.gen_bwd_ms,
            group=GENERATOR, gpus_required=None))
    return graph


def critic_step_graph(cost: TrainCostModel) -> TaskGraph:
    """Per micro-batch i: Rollout(i) on the (frozen) generator group feeding
    CriticTrain(i) on the critic group; no other cross-dependencies."""
    graph = TaskGraph()
    for i in range(1, cost.critic_microbatches + 1):
        roll = graph.add(Task(
            f"rollout/m{i}", TaskKind.ROLLOUT, micro_batch=i,
            duration_ms=cost.rollout_ms, group=GENERATOR, gpus_required=None))
        graph.add(Task(
            f"critic_train/m{i}", TaskKind.CRITIC_TRAIN, micro_batch=i,
            deps=frozenset({roll.id}), duration_ms=cost.critic_train_ms,
            group=CRITIC, gpus_required=None))
    return graph


def default_train_groups(gen_gpus: int = 4, ct_gpus: int = 2) -> list[GpuGroup]:
    return [GpuGroup(GENERATOR, gen_gpus),
            GpuGroup(CRITIC_TEACHER_GROUP, ct_gpus),
            GpuGroup(CRITIC, max(1, ct_gpus // 2))]


def stable_phase_pattern(schedule: Schedule, m: int) -> int | None:
    """Check the stable-phase interleaving of a generator-step schedule.

    For every stable index i (1..m-2) the critic/teacher interval of
    micro-batch i+1 must contain both GenBwd(i) and GenFwd(i+2).  Returns
    None when the pattern holds, else the first mismatching i.
    """
    try:
        for i in range(1, m - 1):
            ct = schedule.entry(f"critic_teacher/m{i + 1}")
            bwd = schedule.entry(f"gen_bwd/m{i}")
            fwd = schedule.entry(f"gen_fwd/m{i + 2}")
            for inner in (bwd, fwd):
                if inner.start_ms < ct.start_ms or inner.end_ms > ct.end_ms:
                    return i
    except KeyError as exc:
        raise PatternNotApplicable(
            f"schedule is not a generator-step pipeline: missing {exc}") from exc
    return None


@dataclass(frozen=True)
class SpeedupReport:
    baseline_ms: int
    pipelined_ms: int

    @property
    def speedup(self) -> float:
        if self.pipelined_ms == 0:
            return 1.0
        return self.baseline_ms / self.pipelined_ms


def step_speedup(graph: TaskGraph, resources: list[GpuGroup]) -> SpeedupReport:
    base = simulate(graph, resources, BASELINE)
    pipe = simulate(graph, resources, GREEDY)
    return SpeedupReport(base.horizon_ms, pipe.horizon_ms)


def speedup(cost: TrainCostModel, resources: list[GpuGroup] | None = None,
            *, end_to_end: bool = True) -> SpeedupReport:
    """Baseline vs pipelined makespan.

    End-to-end mode alternates one generator step and one critic step per
    iteration; the optimizer update acts as a barrier between the two, so
    the iteration time is the sum of the two step makespans.
    """
    resources = resources or default_train_groups()
    gen = step_speedup(generator_step_graph(cost), resources)
    if not end_to_end:
        return gen
    critic = step_speedup(critic_step_graph(cost), resources)
    return SpeedupReport(gen.baseline_ms + critic.baseline_ms,
                         gen.pipelined_ms + critic.pipelined_ms)


@dataclass(frozen=True)
class AllocationResult:
    generator: int
    critic: int
    teacher: int
    slot_ms: float
    slot_imbalance: float

    @property
    def ratio(self) -> tuple[int, int, int]:
        from math import gcd
        g = gcd(gcd(self.generator, self.critic), self.teacher)
        return (self.generator // g, self.critic // g, self.teacher // g)


def slot_time(work: WorkModel, g: int, c: int, t: int) -> float:
    return max((work.gen_fwd_work + work.gen_bwd_work) / g,
               work.critic_work / c, work.teacher_work / t)


def balance_allocation(total_gpus: int, work: WorkModel) -> AllocationResult:
    """Exhaustive search over GPU compositions minimizing the slot time.

    The slot time is the pacing interval of the steady-state pipeline: the
    max of generator fwd+bwd time and the critic/teacher forward times at
    the candidate GPU counts.  Ties break toward a larger generator group.
    """
    if total_gpus < 3:
        raise InsufficientGpus(f"need >= 3 GPUs, got {total_gpus}")
    best: AllocationResult | None = None
    for g in range(1, total_gpus - 1):
        for c in range(1, total_gpus - g):
            t = total_gpus - g - c
            slot = slot_time(work, g, c, t)
            if best is None or slot < best.slot_ms or \
                    (slot == best.slot_ms and g > best.generator):
                best = AllocationResult(g, c, t, slot, slot - min(
                    (work.gen_fwd_work + work.gen_bwd_work) / g,
                    work.critic_work / c, work.teacher_work / t))
    assert best is not None
    return best


def metrics_row(cost: TrainCostModel,
                resources: list[GpuGroup] | None = None) -> dict:
    """One CSV row for the generator-step pipeline at this cost model."""
    resources = resources or default_train_groups()
    graph = generator_step_graph(cost)
    base = simulate(graph, resources, BASELINE)
    pipe = simulate(graph, resources, GREEDY)
    m = metrics(pipe, graph, resources)
    return {
        "m": cost.gen_microbatches,
        "gf": cost.gen_fwd_ms,
        "gb": cost.gen_bwd_ms,
        "ct": cost.critic_teacher_ms,
        "baseline_ms": base.horizon_ms,
        "pipelined_ms": pipe.horizon_ms,
        "speedup": round(base.horizon_ms / pipe.horizon_ms, 6)
        if pipe.horizon_ms else 1.0,
        "gen_bubble": round(m.per_group[GENERATOR].bubble_ratio, 6),
        "ct_bubble": round(m.per_group[CRITIC_TEACHER_GROUP].bubble_ratio, 6),
    }
