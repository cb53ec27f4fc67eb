import random

import pytest

from worldpipe.mmpl import Task, TaskGraph, TaskKind
from worldpipe.resources import GpuGroup
from worldpipe.sched import (BASELINE, GREEDY, ORACLE_LIMIT, MemoryExceeded,
                             OracleSizeExceeded, PlacementError, critical_path_ms,
                             metrics, optimal_schedule_bruteforce, simulate,
                             validate_schedule)


def chain(durations, group="g", gpus=1):
    graph = TaskGraph()
    prev = None
    for i, d in enumerate(durations):
        t = Task(f"t{i}", TaskKind.MICRO_PLAN, duration_ms=d, group=group,
                 gpus_required=gpus,
                 deps=frozenset({prev}) if prev else frozenset())
        graph.add(t)
        prev = t.id
    return graph


class TestSimulateBasics:
    def test_serial_chain(self):
        graph = chain([3, 4, 5])
        sched = simulate(graph, [GpuGroup("g", 1)])
        assert sched.horizon_ms == 12
        assert sched.start("t1") == 3 and sched.end("t2") == 12

    def test_independent_tasks_pack_across_gpus(self):
        graph = TaskGraph()
        for i in range(4):
            graph.add(Task(f"t{i}", TaskKind.MICRO_PLAN, duration_ms=5, group="g"))
        sched = simulate(graph, [GpuGroup("g", 2)])
        assert sched.horizon_ms == 10

    def test_collective_task_takes_whole_group(self):
        graph = TaskGraph()
        graph.add(Task("a", TaskKind.GEN_FWD, duration_ms=5, group="g",
                       gpus_required=None))
        graph.add(Task("b", TaskKind.MICRO_PLAN, duration_ms=5, group="g"))
        sched = simulate(graph, [GpuGroup("g", 3)])
        assert sched.entry("a").gpu_ids == (0, 1, 2)
        assert sched.horizon_ms == 10  # b cannot overlap the collective

    def test_backfill_around_wide_task(self):
        graph = TaskGraph()
        graph.add(Task("wide", TaskKind.MICRO_PLAN, duration_ms=10, group="g",
                       gpus_required=2))
        graph.add(Task("narrow", TaskKind.MICRO_PLAN, duration_ms=3, group="g"))
        sched = simulate(graph, [GpuGroup("g", 3)])
        assert sched.start("narrow") == 0  # fits beside the wide task

    def test_zero_duration_cascade(self):
        graph = chain([0, 0, 0, 5])
        sched = simulate(graph, [GpuGroup("g", 1)])
        assert sched.start("t3") == 0 and sched.horizon_ms == 5

    def test_unknown_group(self):
        graph = chain([1], group="ghost")
        with pytest.raises(PlacementError):
            simulate(graph, [GpuGroup("g", 1)])

    def test_oversized_task(self):
        graph = chain([1], gpus=5)
        with pytest.raises(PlacementError):
            simulate(graph, [GpuGroup("g", 2)])

    def test_memory_enforcement(self):
        graph = TaskGraph()
        graph.add(Task("a", TaskKind.MICRO_PLAN, duration_ms=1, group="g",
                       memory_delta=200))
        with pytest.raises(MemoryExceeded):
            simulate(graph, [GpuGroup("g", 1, hbm_bytes=100)],
                     enforce_memory=True)

    def test_determinism(self):
        graph = random_graph(random.Random(7))
        groups = [GpuGroup("g", 2), GpuGroup("h", 2)]
        a = simulate(graph, groups)
        b = simulate(graph, groups)
        assert a.entries == b.entries


class TestValidateSchedule:
    def test_clean_schedule(self):
        graph = chain([2, 3])
        groups = [GpuGroup("g", 1)]
        assert validate_schedule(simulate(graph, groups), graph, groups) == []

    def test_detects_tampering(self):
        from worldpipe.sched import Schedule, ScheduleEntry
        graph = chain([2, 3])
        groups = [GpuGroup("g", 1)]
        sched = simulate(graph, groups)
        # Move the dependent task before its dependency completes.
        bad = Schedule(entries=[sched.entries[0],
                                ScheduleEntry("t1", "g", (0,), 1, 4)])
        codes = {v.code for v in validate_schedule(bad, graph, groups)}
        assert "DependencyViolation" in codes
        assert "ExclusivityViolation" in codes

    def test_detects_missing_and_duplicate(self):
        from worldpipe.sched import Schedule
        graph = chain([2, 3])
        groups = [GpuGroup("g", 1)]
        sched = simulate(graph, groups)
        codes = {v.code for v in validate_schedule(
            Schedule(entries=[sched.entries[0], sched.entries[0]]),
            graph, groups)}
        assert {"MissingTask", "DuplicateEntry"} <= codes


class TestMetrics:
    def test_bubble_over_full_horizon(self):
        graph = TaskGraph()
        graph.add(Task("a", TaskKind.MICRO_PLAN, duration_ms=4, group="g"))
        graph.add(Task("b", TaskKind.MICRO_PLAN, deps=frozenset({"a"}),
                       duration_ms=4, group="h"))
        groups = [GpuGroup("g", 1), GpuGroup("h", 1)]
        m = metrics(simulate(graph, groups), graph, groups)
        assert m.makespan_ms == 8
        assert m.per_group["g"].bubble_ratio == pytest.approx(0.5)
        assert m.per_group["h"].bubble_ratio == pytest.approx(0.5)

    def test_peak_memory_tracks_deltas(self):
        graph = TaskGraph()
        graph.add(Task("a", TaskKind.MICRO_PLAN, duration_ms=1, group="g",
                       memory_delta=100))
        graph.add(Task("b", TaskKind.MICRO_PLAN, deps=frozenset({"a"}),
                       duration_ms=1, group="g", memory_delta=50))
        graph.add(Task("c", TaskKind.DISPLAY, deps=frozenset({"b"}),
                       duration_ms=0, group="g", memory_delta=-100))
        groups = [GpuGroup("g", 1)]
        m = metrics(simulate(graph, groups), graph, groups)
        assert m.peak_memory_total == 150
        assert m.peak_memory_bytes[("g", 0)] == 150

    def test_critical_path(self):
        assert critical_path_ms(chain([3, 4, 5])) == 12


def random_graph(rng: random.Random, max_tasks: int = 14) -> TaskGraph:
    """Random DAG over two groups; deps only point at earlier tasks so the
    result is valid by construction.  Micro-batch indices are non-decreasing
    in creation order, keeping dependency order consistent with micro-batch
    order (the shape the baseline policy's gate is defined for)."""
    graph = TaskGraph()
    n = rng.randint(1, max_tasks)
    ids = []
    mb = 1
    for i in range(n):
        k = rng.randint(0, min(3, len(ids)))
        deps = frozenset(rng.sample(ids, k)) if k else frozenset()
        group = rng.choice(["g", "h"])
        mb += rng.randint(0, 1)
        graph.add(Task(f"t{i}", rng.choice(list(TaskKind)), deps=deps,
                       duration_ms=rng.randint(0, 9), group=group,
                       gpus_required=rng.choice([1, 2, None]),
                       micro_batch=rng.choice([None, mb]),
                       memory_delta=rng.randint(-5, 20)))
        ids.append(f"t{i}")
    return graph


class TestFuzz:
    def test_simulate_always_validates(self):
        rng = random.Random(20250825)
        groups = [GpuGroup("g", 2), GpuGroup("h", 2)]
        for _ in range(300):
            graph = random_graph(rng)
            for policy in (GREEDY, BASELINE):
                sched = simulate(graph, groups, policy)
                assert validate_schedule(sched, graph, groups) == []


class TestGreedyLimits:
    def test_short_critic_stage_is_outside_the_5pct_family(self):
        # With ct < gf + gb the pinned backward-before-forward tie-break
        # delays the last forward: on m=3 all-unit durations greedy takes 7
        # while the optimum is 6.  Documented limitation, not a regression.
        from worldpipe.trainpipe import (TrainCostModel, default_train_groups,
                                         generator_step_graph)
        cost = TrainCostModel(gen_fwd_ms=1, gen_bwd_ms=1, critic_fwd_ms=1,
                              teacher_fwd_ms=1, gen_microbatches=3)
        graph = generator_step_graph(cost)
        groups = default_train_groups()
        greedy = simulate(graph, groups, GREEDY)
        best = optimal_schedule_bruteforce(graph, groups)
        assert (greedy.horizon_ms, best.horizon_ms) == (7, 6)


class TestOracle:
    def test_matches_hand_optimum(self):
        # Two 3-long chains on one GPU interleave to 2x the chain length.
        graph = TaskGraph()
        for c in range(2):
            prev = None
            for i in range(3):
                t = Task(f"c{c}t{i}", TaskKind.MICRO_PLAN, duration_ms=2,
                         group="g",
                         deps=frozenset({prev}) if prev else frozenset())
                graph.add(t)
                prev = t.id
        sched = optimal_schedule_bruteforce(graph, [GpuGroup("g", 1)])
        assert sched.horizon_ms == 12

    def test_idling_can_beat_greedy(self):
        # Greedy grabs the long independent task first on one of the GPUs
        # only if it helps; the oracle must never be worse than greedy.
        rng = random.Random(99)
        groups = [GpuGroup("g", 2), GpuGroup("h", 2)]
        for _ in range(40):
            graph = random_graph(rng, max_tasks=8)
            greedy = simulate(graph, groups)
            best = optimal_schedule_bruteforce(graph, groups)
            assert best.horizon_ms <= greedy.horizon_ms
            assert validate_schedule(best, graph, groups) == []
            assert best.horizon_ms >= max(
                critical_path_ms(graph) if graph.tasks else 0, 0)

    def test_size_cap(self):
        graph = chain([1] * (ORACLE_LIMIT + 1))
        with pytest.raises(OracleSizeExceeded):
            optimal_schedule_bruteforce(graph, [GpuGroup("g", 1)])
