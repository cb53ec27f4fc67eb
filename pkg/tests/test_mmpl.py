import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from worldpipe.mmpl import (AnchorRule, AnchorSet, ChainMode, GenerationConfig,
                            InvalidAnchors, InvalidSegmentLength, Task,
                            TaskGraph, TaskKind, autoregressive_depth,
                            build_macro_chain, build_segment_tasks,
                            frame_ar_depth, micro_anchors, topo_order,
                            unique_frame_count, validate_graph)


class TestMicroAnchors:
    @pytest.mark.parametrize("n,expected", [
        (10, (2, 6, 10)),
        (4, (2, 3, 4)),
        (8, (2, 5, 8)),
    ])
    def test_paper_illustration_rule(self, n, expected):
        assert micro_anchors(n).as_tuple() == expected

    def test_midpoint_rule(self):
        assert micro_anchors(10, AnchorRule.MIDPOINT).as_tuple() == (2, 5, 10)
        assert micro_anchors(4, AnchorRule.MIDPOINT).as_tuple() == (2, 3, 4)

    def test_too_short_segment(self):
        with pytest.raises(InvalidSegmentLength):
            micro_anchors(3)

    def test_custom_must_be_ordered(self):
        with pytest.raises(InvalidAnchors):
            micro_anchors(10, AnchorRule.CUSTOM, (2, 8, 5))
        with pytest.raises(InvalidAnchors):
            micro_anchors(10, AnchorRule.CUSTOM, (2, 5, 11))
        assert micro_anchors(10, AnchorRule.CUSTOM, (2, 5, 9)).as_tuple() == (2, 5, 9)


class TestSegmentTasks:
    def test_shape_and_ranges(self):
        tasks = build_segment_tasks(0, AnchorSet(2, 6, 10))
        assert len(tasks) == 4
        by_kind = {t.kind: t for t in tasks}
        assert by_kind[TaskKind.POPULATE_A].frames == (3, 5)
        assert by_kind[TaskKind.POPULATE_B].frames == (7, 9)
        assert by_kind[TaskKind.MICRO_PLAN].deps == frozenset()
        assert by_kind[TaskKind.POPULATE_A].deps == {by_kind[TaskKind.MICRO_PLAN].id}
        assert by_kind[TaskKind.POPULATE_B].deps == {
            by_kind[TaskKind.MICRO_PLAN].id, by_kind[TaskKind.POPULATE_A].id}
        assert by_kind[TaskKind.BOUNDARY_REENCODE].deps == {
            by_kind[TaskKind.MICRO_PLAN].id}

    def test_degenerate_ranges_still_emitted(self):
        tasks = build_segment_tasks(0, AnchorSet(2, 3, 4))
        pop_a = next(t for t in tasks if t.kind is TaskKind.POPULATE_A)
        lo, hi = pop_a.frames
        assert hi < lo  # empty range
        assert pop_a.duration_ms == 0

    def test_shift_invariance(self):
        t0 = build_segment_tasks(0, AnchorSet(2, 6, 10))
        t2 = build_segment_tasks(2, AnchorSet(2, 6, 10))
        assert [t.kind for t in t0] == [t.kind for t in t2]
        assert all(t.segment == 2 for t in t2)

    def test_populate_b_gate_configurable(self):
        tasks = build_segment_tasks(0, AnchorSet(2, 6, 10),
                                    populate_b_waits_for_a=False)
        pop_b = next(t for t in tasks if t.kind is TaskKind.POPULATE_B)
        assert pop_b.deps == {"micro_plan/s0"}


class TestMacroChain:
    def test_terminal_chain_no_loop(self):
        graph = build_macro_chain(GenerationConfig(2, 10))
        assert len(graph) == 8
        assert graph["micro_plan/s1"].deps == {"micro_plan/s0"}
        # planning never waits on the previous segment's population
        assert not graph["micro_plan/s1"].deps & {
            "populate_a/s0", "populate_b/s0"}

    def test_single_segment_has_no_cross_edges(self):
        graph = build_macro_chain(GenerationConfig(1, 10))
        segments = {graph[d].segment for t in graph.tasks.values() for d in t.deps}
        assert segments <= {0}

    def test_loop_tasks_expand_dependencies(self):
        graph = build_macro_chain(GenerationConfig(3, 10, include_loop_tasks=True))
        assert {"micro_plan/s1", "guide_render/s2"} <= graph["micro_plan/s2"].deps
        assert graph["guide_render/s2"].deps == {"recon/s1"}
        assert graph["recon/s1"].deps == {"micro_plan/s1"}

    def test_reencode_gate_option(self):
        graph = build_macro_chain(
            GenerationConfig(2, 10, reencode_gates_next_plan=True))
        assert "boundary_reencode/s0" in graph["micro_plan/s1"].deps

    def test_population_tasks_of_distinct_segments_independent(self):
        graph = build_macro_chain(GenerationConfig(4, 10))
        order = topo_order(graph)
        reach = {tid: {tid} for tid in order}
        for tid in order:
            for d in graph[tid].deps:
                reach[tid] |= reach[d]
        pops = [t.id for t in graph.tasks.values()
                if t.kind in (TaskKind.POPULATE_A, TaskKind.POPULATE_B)]
        for a in pops:
            for b in pops:
                if graph[a].segment != graph[b].segment:
                    assert a not in reach[b] and b not in reach[a]

    def test_all_tasks_reachable_from_first_plan(self):
        graph = build_macro_chain(GenerationConfig(3, 10, include_loop_tasks=True))
        order = topo_order(graph)
        reach = {tid: set(graph[tid].deps) for tid in order}
        for tid in order:
            for d in graph[tid].deps:
                reach[tid] |= reach[d]
        for tid in graph.tasks:
            if tid != "micro_plan/s0":
                assert "micro_plan/s0" in reach[tid]


def _count_unique_by_enumeration(s, anchors, mode):
    # Independent oracle: union-find over (segment, local_index) pairs with
    # boundary identification per the chaining rule.
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        parent[find(a)] = find(b)

    n = anchors.t_c
    for seg in range(s):
        for j in range(1, n + 1):
            find((seg, j))
    for seg in range(s - 1):
        if mode is ChainMode.TERMINAL:
            union((seg + 1, 1), (seg, anchors.t_c))
        else:
            for j in range(1, n - anchors.t_b + 2):
                union((seg + 1, j), (seg, anchors.t_b - 1 + j))
    return len({find(x) for x in list(parent)})


class TestFrameCounting:
    def test_terminal_eleven_segments(self):
        fc = unique_frame_count(11, AnchorSet(2, 6, 10), ChainMode.TERMINAL)
        assert fc.unique == 100
        assert fc.unique == _count_unique_by_enumeration(
            11, AnchorSet(2, 6, 10), ChainMode.TERMINAL)

    def test_single_segment(self):
        for mode in ChainMode:
            assert unique_frame_count(1, AnchorSet(2, 6, 10), mode).unique == 10

    def test_minmem_reuse(self):
        fc = unique_frame_count(3, AnchorSet(2, 6, 10), ChainMode.MIN_MEMORY_PEAK)
        assert fc.unique == 20
        assert fc.generated == 28
        assert fc.reuse_ratio == pytest.approx(1 - 20 / 28)
        assert fc.unique == _count_unique_by_enumeration(
            3, AnchorSet(2, 6, 10), ChainMode.MIN_MEMORY_PEAK)

    @given(s=st.integers(1, 20), n=st.integers(4, 30))
    @settings(max_examples=60, deadline=None)
    def test_formula_matches_enumeration(self, s, n):
        anchors = micro_anchors(n)
        for mode in ChainMode:
            assert unique_frame_count(s, anchors, mode).unique == \
                _count_unique_by_enumeration(s, anchors, mode)

    @given(s=st.integers(2, 15), n=st.integers(4, 20))
    @settings(max_examples=40, deadline=None)
    def test_minmem_strictly_fewer_frames(self, s, n):
        anchors = micro_anchors(n)
        term = unique_frame_count(s, anchors, ChainMode.TERMINAL).unique
        minmem = unique_frame_count(s, anchors, ChainMode.MIN_MEMORY_PEAK).unique
        assert minmem < term


class TestDepth:
    @given(s=st.integers(1, 12), n=st.integers(4, 20))
    @settings(max_examples=40, deadline=None)
    def test_depth_equals_segment_count(self, s, n):
        graph = build_macro_chain(GenerationConfig(s, n))
        assert autoregressive_depth(graph) == s

    def test_loop_tasks_do_not_change_depth(self):
        graph = build_macro_chain(GenerationConfig(5, 10, include_loop_tasks=True))
        assert autoregressive_depth(graph) == 5

    def test_frame_level_baseline(self):
        assert frame_ar_depth(100) == 100


class TestValidation:
    def test_well_formed(self):
        assert validate_graph(build_macro_chain(GenerationConfig(3, 10))) == []

    def test_self_dependency_cycle(self):
        graph = TaskGraph()
        graph.add(Task("a", TaskKind.MICRO_PLAN, deps=frozenset({"a"})))
        codes = [v.code for v in validate_graph(graph)]
        assert "CycleDetected" in codes

    def test_missing_plan_task(self):
        graph = build_macro_chain(GenerationConfig(3, 10))
        del graph.tasks["micro_plan/s1"]
        # drop the dangling references to isolate the missing-plan check
        for tid, t in list(graph.tasks.items()):
            if "micro_plan/s1" in t.deps:
                graph.tasks[tid] = t.with_(deps=t.deps - {"micro_plan/s1"})
        violations = validate_graph(graph)
        assert any(v.code == "MissingPlanTask" and v.detail == "1"
                   for v in violations)

    def test_dangling_and_negative(self):
        graph = TaskGraph()
        graph.add(Task("a", TaskKind.MICRO_PLAN, deps=frozenset({"ghost"}),
                       duration_ms=-1))
        codes = {v.code for v in validate_graph(graph)}
        assert {"DanglingDep", "NegativeDuration"} <= codes


def test_json_export_field_names():
    import json
    graph = build_macro_chain(GenerationConfig(2, 10))
    doc = json.loads(graph.to_json())
    rec = doc["tasks"][0]
    assert set(rec) == {"id", "kind", "segment", "deps", "duration_ms",
                       "group", "gpus", "mem_delta_bytes"}
