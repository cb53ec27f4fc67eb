"""Streaming inference simulation.

Attaches denoise costs to the segment-generation graph, appends the
chunked VAE -> super-resolution -> display pipeline, and runs the whole
stream through the scheduler to obtain throughput, latency, and memory
figures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .mmpl import (ChainMode, GenerationConfig, Task, TaskGraph, TaskKind,
                   build_macro_chain, segment_frame_offset, unique_frame_count)
from .resources import GpuGroup
from .sched import GREEDY, Policy, Schedule, simulate

DENOISE = "denoise"
VAE = "vae"
SR = "sr"


class InsufficientStream(ValueError):
    pass


class InvalidRate(ValueError):
    pass


@dataclass(frozen=True)
class InferenceCostModel:
    denoise_step_ms: int = 100
    denoise_steps_per_chunk: int = 4
    vae_chunk_frames: int = 4
    vae_first_chunk_ms: int = 600
    vae_cached_chunk_ms: int = 500
    sr_chunk_frames: int = 5
    sr_chunk_ms: int = 294
    inference_gpus: int = 4
    denoise_gpus: int = 2
    buffer_chunks: int = 3
    output_resolution: str = "960x1760"
    reencode_ms: int = 100
    recon_ms: int = 50
    guide_render_ms: int = 50
    latent_frame_bytes: int = 2_000_000

    def __post_init__(self):
        if self.vae_cached_chunk_ms > self.vae_first_chunk_ms:
            raise ValueError("cached VAE chunk must not cost more than the first")
        if self.buffer_chunks < 0:
            raise ValueError("buffer_chunks must be >= 0")
        for f_ in ("denoise_steps_per_chunk", "vae_chunk_frames",
                   "sr_chunk_frames", "inference_gpus", "denoise_gpus"):
            if getattr(self, f_) < 1:
                raise ValueError(f"{f_} must be >= 1")

    @property
    def denoise_chunk_ms(self) -> int:
        return self.denoise_step_ms * self.denoise_steps_per_chunk

    def sr_stage_fps(self) -> float:
        """Nominal super-resolution stage throughput."""
        return self.sr_chunk_frames * 1000.0 / self.sr_chunk_ms


def default_inference_groups(cost: InferenceCostModel,
                             hbm_bytes: int | None = None) -> list[GpuGroup]:
    """Split the inference GPUs: denoise workers plus one VAE and one SR GPU."""
    return [GpuGroup(DENOISE, cost.denoise_gpus, hbm_bytes),
            GpuGroup(VAE, 1, hbm_bytes),
            GpuGroup(SR, 1, hbm_bytes)]


def _chunk_task_count(frames: tuple[int, int] | None, chunk_frames: int) -> int:
    if frames is None:
        return 1
    span = frames[1] - frames[0] + 1
    return max(0, math.ceil(span / chunk_frames)) if span > 0 else 0


def frame_producers(gen: GenerationConfig) -> dict[int, str]:
    """Earliest producing task id per global frame index.

    Planning owns the anchors (and any frames before t_a); the two
    population stages own the intermediate ranges.  Under min-memory-peak
    chaining later segments re-generate overlapping frames; the first
    producer wins.
    """
    anchors = gen.anchors
    offset = segment_frame_offset(anchors, gen.chain_mode)
    owners: dict[int, str] = {}
    for s in range(gen.total_segments):
        for j in range(1, anchors.t_c + 1):
            g = s * offset + j
            if g in owners:
                continue
            if j <= anchors.t_a or j in (anchors.t_b, anchors.t_c):
                owners[g] = f"{TaskKind.MICRO_PLAN.value}/s{s}"
            elif j < anchors.t_b:
                owners[g] = f"{TaskKind.POPULATE_A.value}/s{s}"
            else:
                owners[g] = f"{TaskKind.POPULATE_B.value}/s{s}"
    return owners


def attach_inference_costs(graph: TaskGraph, gen: GenerationConfig,
                           cost: InferenceCostModel) -> None:
    """Fill durations, groups, and memory deltas on a generation graph.

    Each denoise-stage task costs one denoise-chunk per latent chunk of
    frames it produces; its memory delta is the latents it adds (unique
    frames only, so re-generated overlap frames are not double counted).
    """
    producers = frame_producers(gen)
    new_frames: dict[str, int] = {}
    for tid in producers.values():
        new_frames[tid] = new_frames.get(tid, 0) + 1

    durations = {
        TaskKind.MICRO_PLAN: cost.denoise_chunk_ms,
        TaskKind.BOUNDARY_REENCODE: cost.reencode_ms,
        TaskKind.RECON: cost.recon_ms,
        TaskKind.GUIDE_RENDER: cost.guide_render_ms,
    }
    for tid, task in list(graph.tasks.items()):
        if task.kind in durations:
            dur = durations[task.kind]
        elif task.kind in (TaskKind.POPULATE_A, TaskKind.POPULATE_B):
            dur = _chunk_task_count(task.frames, cost.vae_chunk_frames) \
                * cost.denoise_chunk_ms
        else:
            continue
        graph.tasks[tid] = task.with_(
            duration_ms=dur, group=DENOISE, gpus_required=1,
            memory_delta=new_frames.get(tid, 0) * cost.latent_frame_bytes)


def chunk_pipeline_tasks(n_chunks: int, cost: InferenceCostModel,
                         denoise_deps: dict[int, set[str]] | None = None) -> list[Task]:
    """VAE -> SR -> display tasks for a stream of latent chunks.

    The first VAE chunk pays the cold cost; later chunks reuse cached
    temporal features and additionally depend on the previous chunk.
    """
    if n_chunks < 1:
        raise ValueError("need at least one chunk")
    tasks: list[Task] = []
    for k in range(1, n_chunks + 1):
        deps = set(denoise_deps.get(k, set())) if denoise_deps else set()
        if k > 1:
            deps.add(f"vae_chunk/c{k - 1}")
        vae = Task(f"vae_chunk/c{k}", TaskKind.VAE_CHUNK,
                   deps=frozenset(deps),
                   duration_ms=cost.vae_first_chunk_ms if k == 1
                   else cost.vae_cached_chunk_ms,
                   group=VAE)
        sr = Task(f"sr_chunk/c{k}", TaskKind.SR_CHUNK,
                  deps=frozenset({vae.id}), duration_ms=cost.sr_chunk_ms,
                  group=SR)
        disp = Task(f"display/c{k}", TaskKind.DISPLAY,
                    deps=frozenset({sr.id}), duration_ms=0, group=SR,
                    memory_delta=-cost.vae_chunk_frames * cost.latent_frame_bytes)
        tasks += [vae, sr, disp]
    return tasks


@dataclass
class StreamTrace:
    schedule: Schedule
    graph: TaskGraph
    n_chunks: int
    frames_per_chunk: int
    unique_frames: int
    generated_frames: int

    @property
    def display_times_ms(self) -> list[int]:
        return sorted(self.schedule.end(f"display/c{k}")
                      for k in range(1, self.n_chunks + 1))

    @property
    def reuse_ratio(self) -> float:
        return 1.0 - self.unique_frames / self.generated_frames


def build_stream_graph(gen: GenerationConfig,
                       cost: InferenceCostModel) -> tuple[TaskGraph, int]:
    """Generation graph plus decode pipeline; returns (graph, n_chunks)."""
    graph = build_macro_chain(gen)
    attach_inference_costs(graph, gen, cost)

    counts = unique_frame_count(gen.total_segments, gen.anchors, gen.chain_mode)
    n_chunks = counts.unique // cost.vae_chunk_frames  # full chunks only
    if n_chunks < 1:
        raise InsufficientStream("stream too short for a single latent chunk")

    producers = frame_producers(gen)
    denoise_deps: dict[int, set[str]] = {}
    for k in range(1, n_chunks + 1):
        frames = range((k - 1) * cost.vae_chunk_frames + 1,
                       k * cost.vae_chunk_frames + 1)
        denoise_deps[k] = {producers[g] for g in frames}
    for task in chunk_pipeline_tasks(n_chunks, cost, denoise_deps):
        graph.add(task)
    return graph, n_chunks


def streaming_timeline(gen: GenerationConfig, cost: InferenceCostModel,
                       resources: list[GpuGroup] | None = None,
                       policy: Policy = GREEDY) -> StreamTrace:
    resources = resources or default_inference_groups(cost)
    graph, n_chunks = build_stream_graph(gen, cost)
    schedule = simulate(graph, resources, policy)
    counts = unique_frame_count(gen.total_segments, gen.anchors, gen.chain_mode)
    return StreamTrace(schedule=schedule, graph=graph, n_chunks=n_chunks,
                       frames_per_chunk=cost.vae_chunk_frames,
                       unique_frames=counts.unique,
                       generated_frames=counts.generated)


def throughput_fps(trace: StreamTrace, frames_per_chunk: int | None = None) -> float:
    """Steady-state output rate from display cadence (warm-up excluded)."""
    fpc = frames_per_chunk or trace.frames_per_chunk
    times = trace.display_times_ms
    if len(times) < 2:
        raise InsufficientStream("need >= 2 display events for a rate")
    span_s = (times[-1] - times[0]) / 1000.0
    if span_s <= 0:
        raise InsufficientStream("display events are simultaneous")
    return fpc * (len(times) - 1) / span_s


def feedback_latency(cost: InferenceCostModel, fps: float) -> float:
    """Seconds until a user manipulation is visible: the pre-buffered
    chunks must drain through the output stream first."""
    if cost.buffer_chunks == 0:
        return 0.0
    if fps <= 0:
        raise InvalidRate(f"fps must be > 0, got {fps}")
    return cost.buffer_chunks * cost.vae_chunk_frames / fps
