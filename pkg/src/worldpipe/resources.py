"""GPU groups, placements, and memory accounting.

Pure byte arithmetic: parameter/optimizer/activation footprints plus the
context-parallel-sharded KV cache, and a feasibility check over a placement.
All per-GPU figures round up; feasibility compares rounded values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field


class InvalidShardDegree(ValueError):
    pass


class IndivisibleRatio(ValueError):
    pass


@dataclass(frozen=True)
class GpuGroup:
    role: str  # "generator", "critic", "teacher", "inference", ...
    gpu_count: int
    hbm_bytes: int | None = None  # None = unlimited (no memory enforcement)
    cp_degree: int = 1
    fsdp_degree: int = 1

    def __post_init__(self):
        if self.gpu_count < 1:
            raise ValueError("gpu_count must be >= 1")
        for name in ("cp_degree", "fsdp_degree"):
            deg = getattr(self, name)
            if deg < 1 or self.gpu_count % deg:
                raise ValueError(f"{name}={deg} must divide gpu_count={self.gpu_count}")


@dataclass(frozen=True)
class ModelMemoryConfig:
    param_count: int
    bytes_per_param_weights: int
    bytes_per_param_grads: int = 0  # 0 when frozen
    bytes_per_param_optimizer: int = 0
    activation_bytes_per_microbatch: int = 0

    def __post_init__(self):
        for f_ in ("param_count", "bytes_per_param_weights", "bytes_per_param_grads",
                   "bytes_per_param_optimizer", "activation_bytes_per_microbatch"):
            if getattr(self, f_) < 0:
                raise ValueError(f"{f_} must be >= 0")


@dataclass(frozen=True)
class KvCacheConfig:
    latent_frames: int
    tokens_per_frame: int
    layers: int
    kv_width_bytes: int  # per token per layer, K and V jointly
    copies: int = 1  # 2 during backprop

    def __post_init__(self):
        for f_ in ("latent_frames", "tokens_per_frame", "layers", "kv_width_bytes"):
            if getattr(self, f_) < 1:
                raise ValueError(f"{f_} must be positive")
        if self.copies not in (1, 2):
            raise ValueError("copies must be 1 or 2")

    def total_bytes(self) -> int:
        return (self.latent_frames * self.tokens_per_frame * self.layers
                * self.kv_width_bytes * self.copies)


def kv_cache_bytes_per_gpu(kv: KvCacheConfig, cp_degree: int) -> int:
    """Sharded KV-cache bytes on each GPU, rounded up."""
    if cp_degree < 1:
        raise InvalidShardDegree(f"cp_degree must be >= 1, got {cp_degree}")
    return math.ceil(kv.total_bytes() / cp_degree)


@dataclass(frozen=True)
class MemoryBreakdown:
    weights: int
    grads: int
    optimizer: int
    activations: int
    kv_cache: int

    @property
    def total(self) -> int:
        return self.weights + self.grads + self.optimizer + self.activations + self.kv_cache

    def csv_row(self) -> list[int]:
        return [self.weights, self.grads, self.optimizer, self.activations,
                self.kv_cache, self.total]


def group_memory_per_gpu(group: GpuGroup, model: ModelMemoryConfig,
                         kv: KvCacheConfig | None = None,
                         microbatches_resident: int = 1) -> MemoryBreakdown:
    """Per-GPU footprint of one model hosted on a group."""
    shard = group.fsdp_degree
    return MemoryBreakdown(
        weights=math.ceil(model.param_count * model.bytes_per_param_weights / shard),
        grads=math.ceil(model.param_count * model.bytes_per_param_grads / shard),
        optimizer=math.ceil(model.param_count * model.bytes_per_param_optimizer / shard),
        activations=model.activation_bytes_per_microbatch * microbatches_resident,
        kv_cache=kv_cache_bytes_per_gpu(kv, group.cp_degree) if kv else 0,
    )


@dataclass(frozen=True)
class RoleAssignment:
    model: ModelMemoryConfig
    kv: KvCacheConfig | None = None
    microbatches_resident: int = 1


@dataclass(frozen=True)
class PlacementGroup:
    group: GpuGroup
    assignments: tuple[RoleAssignment, ...]

    def per_gpu_total(self) -> int:
        return sum(
            group_memory_per_gpu(self.group, a.model, a.kv,
                                 a.microbatches_resident).total
            for a in self.assignments)


@dataclass(frozen=True)
class Placement:
    groups: tuple[PlacementGroup, ...]
    style: str = "disaggregated"  # or "colocated"

    def __post_init__(self):
        if self.style == "colocated" and len(self.groups) != 1:
            raise ValueError("colocated placement must use a single shared group")


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    worst_group: str | None = None
    deficit_bytes: int = 0
    margins: dict = field(default_factory=dict, hash=False, compare=False)


def check_feasibility(placement: Placement) -> Feasibility:
    """Feasible iff every group's per-GPU total fits within its HBM."""
    worst: tuple[int, str] | None = None
    margins: dict[str, int] = {}
    for pg in placement.groups:
        total = pg.per_gpu_total()
        cap = pg.group.hbm_bytes
        if cap is None:
            continue
        margins[pg.group.role] = cap - total
        deficit = total - cap
        if deficit > 0 and (worst is None or deficit > worst[0]):
            worst = (deficit, pg.group.role)
    if worst is None:
        return Feasibility(True, margins=margins)
    return Feasibility(False, worst_group=worst[1], deficit_bytes=worst[0],
                       margins=margins)


def placement_from_ratio(total_gpus: int, ratio: tuple[int, int, int],
                         hbm_bytes: int | None = None) -> tuple[GpuGroup, GpuGroup, GpuGroup]:
    """Split a cluster into generator/critic/teacher groups by an exact ratio."""
    g, c, t = ratio
    parts = g + c + t
    sizes = []
    for part in ratio:
        if (total_gpus * part) % parts:
            raise IndivisibleRatio(
                f"{total_gpus} GPUs cannot be split {g}:{c}:{t} exactly")
        sizes.append(total_gpus * part // parts)
    roles = ("generator", "critic", "teacher")
    return tuple(GpuGroup(role, size, hbm_bytes)
                 for role, size in zip(roles, sizes))
