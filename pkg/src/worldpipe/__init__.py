"""worldpipe: discrete-event simulation of pipelined world-model training
and streaming inference schedules."""

__version__ = "0.1.0"

from .mmpl import (AnchorRule, AnchorSet, ChainMode, GenerationConfig, Task,
                   TaskGraph, TaskKind, build_macro_chain, micro_anchors,
                   unique_frame_count, validate_graph)
from .resources import (GpuGroup, KvCacheConfig, ModelMemoryConfig, Placement,
                        check_feasibility, kv_cache_bytes_per_gpu,
                        placement_from_ratio)
from .sched import (BASELINE, GREEDY, SLOTTED, Policy, Schedule, metrics,
                    optimal_schedule_bruteforce, simulate, validate_schedule)

__all__ = [name for name in dir() if not name.startswith("_")]
