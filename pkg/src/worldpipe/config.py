"""Strict TOML configuration loading.

Unknown keys are rejected so fixtures stay honest; invariant violations
surface as ValidationError naming the offending field.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .mmpl import AnchorRule, ChainMode, GenerationConfig
from .resources import GpuGroup, KvCacheConfig, ModelMemoryConfig
from .streamsim import InferenceCostModel
from .trainpipe import TrainCostModel, WorkModel


class ConfigError(ValueError):
    pass


class ValidationError(ValueError):
    pass


_SCHEMA: dict[str, set[str]] = {
    "generation": {"total_segments", "frames_per_segment", "anchor_rule",
                   "custom_anchors", "chain_mode", "include_loop_tasks",
                   "populate_b_waits_for_a", "reencode_gates_next_plan"},
    "train": {"gen_fwd_ms", "gen_bwd_ms", "critic_fwd_ms", "teacher_fwd_ms",
              "rollout_ms", "critic_train_ms", "denoising_steps",
              "gen_microbatches", "critic_microbatches",
              "gen_fwd_work", "gen_bwd_work", "critic_work", "teacher_work",
              "generator_gpus", "critic_teacher_gpus", "critic_gpus"},
    "inference": {"denoise_step_ms", "denoise_steps_per_chunk",
                  "vae_chunk_frames", "vae_first_chunk_ms",
                  "vae_cached_chunk_ms", "sr_chunk_frames", "sr_chunk_ms",
                  "inference_gpus", "denoise_gpus", "buffer_chunks",
                  "output_resolution", "reencode_ms", "recon_ms",
                  "guide_render_ms", "latent_frame_bytes"},
    "cluster": {"total_gpus", "hbm_gb", "generator_gpus", "critic_gpus",
                "teacher_gpus", "generator_cp_degree"},
    "memory.generator": {"param_count", "bytes_per_param_weights",
                         "bytes_per_param_grads", "bytes_per_param_optimizer",
                         "activation_bytes_per_microbatch"},
    "memory.critic": {"param_count", "bytes_per_param_weights",
                      "bytes_per_param_grads", "bytes_per_param_optimizer",
                      "activation_bytes_per_microbatch"},
    "memory.teacher": {"param_count", "bytes_per_param_weights",
                       "bytes_per_param_grads", "bytes_per_param_optimizer",
                       "activation_bytes_per_microbatch"},
    "kv_cache": {"latent_frames", "tokens_per_frame", "layers",
                 "kv_width_bytes"},
}


@dataclass
class ClusterConfig:
    total_gpus: int = 32
    hbm_gb: int = 80
    generator_gpus: int = 20
    critic_gpus: int = 6
    teacher_gpus: int = 6
    generator_cp_degree: int = 20

    @property
    def hbm_bytes(self) -> int:
        return self.hbm_gb * 10**9


@dataclass
class RunConfig:
    path: Path
    generation: GenerationConfig
    train: TrainCostModel
    work: WorkModel
    inference: InferenceCostModel
    cluster: ClusterConfig
    memory: dict[str, ModelMemoryConfig]
    kv_cache: KvCacheConfig | None
    train_groups: list[GpuGroup]


def _check_unknown(raw: dict) -> None:
    for section, body in raw.items():
        if section == "memory":
            for sub, subbody in body.items():
                key = f"memory.{sub}"
                if key not in _SCHEMA:
                    raise ConfigError(f"unknown config section [{key}]")
                extra = set(subbody) - _SCHEMA[key]
                if extra:
                    raise ConfigError(
                        f"unknown key(s) in [{key}]: {sorted(extra)}")
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        extra = set(body) - _SCHEMA[section]
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(extra)}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _check_unknown(raw)

    gen_raw = dict(raw.get("generation", {}))
    try:
        custom = gen_raw.pop("custom_anchors", None)
        generation = GenerationConfig(
            total_segments=gen_raw.pop("total_segments", 4),
            frames_per_segment=gen_raw.pop("frames_per_segment", 10),
            anchor_rule=AnchorRule(gen_raw.pop("anchor_rule", "paper-illustration")),
            custom_anchors=tuple(custom) if custom else None,
            chain_mode=ChainMode(gen_raw.pop("chain_mode", "terminal")),
            include_loop_tasks=gen_raw.pop("include_loop_tasks", False),
            populate_b_waits_for_a=gen_raw.pop("populate_b_waits_for_a", True),
            reencode_gates_next_plan=gen_raw.pop("reencode_gates_next_plan", False),
        )
    except ValueError as exc:
        raise ValidationError(f"[generation] {exc}") from exc

    train_raw = dict(raw.get("train", {}))
    work = WorkModel(
        gen_fwd_work=train_raw.pop("gen_fwd_work", 2.0),
        gen_bwd_work=train_raw.pop("gen_bwd_work", 2.0),
        critic_work=train_raw.pop("critic_work", 1.0),
        teacher_work=train_raw.pop("teacher_work", 1.0),
    )
    gen_gpus = train_raw.pop("generator_gpus", 4)
    ct_gpus = train_raw.pop("critic_teacher_gpus", 2)
    critic_gpus = train_raw.pop("critic_gpus", 1)
    try:
        train = TrainCostModel(**train_raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"[train] {exc}") from exc

    try:
        inference = InferenceCostModel(**raw.get("inference", {}))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"[inference] {exc}") from exc

    cluster = ClusterConfig(**raw.get("cluster", {}))

    memory = {}
    for role, body in raw.get("memory", {}).items():
        try:
            memory[role] = ModelMemoryConfig(**body)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"[memory.{role}] {exc}") from exc

    kv = None
    if "kv_cache" in raw:
        try:
            kv = KvCacheConfig(**raw["kv_cache"])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"[kv_cache] {exc}") from exc

    from .trainpipe import CRITIC, CRITIC_TEACHER_GROUP, GENERATOR
    train_groups = [GpuGroup(GENERATOR, gen_gpus),
                    GpuGroup(CRITIC_TEACHER_GROUP, ct_gpus),
                    GpuGroup(CRITIC, critic_gpus)]

    return RunConfig(path=path, generation=generation, train=train, work=work,
                     inference=inference, cluster=cluster, memory=memory,
                     kv_cache=kv, train_groups=train_groups)


def colocated_placement(cfg: RunConfig, total_gpus: int = 64) -> "Placement":
    """All three training roles on one shared group, KV cache unsharded."""
    from dataclasses import replace

    from .resources import Placement, PlacementGroup, RoleAssignment
    if cfg.kv_cache is None:
        raise ValidationError("fixture lacks a [kv_cache] section")
    group = GpuGroup("colocated", total_gpus, cfg.cluster.hbm_bytes,
                     cp_degree=1, fsdp_degree=total_gpus)
    kv_train = replace(cfg.kv_cache, copies=2)
    assignments = (
        RoleAssignment(cfg.memory["generator"], kv_train),
        RoleAssignment(cfg.memory["critic"]),
        RoleAssignment(cfg.memory["teacher"]),
    )
    return Placement(groups=(PlacementGroup(group, assignments),),
                     style="colocated")


def disaggregated_placement(cfg: RunConfig) -> "Placement":
    """Role-per-group placement with the generator KV cache sharded by
    context parallelism (two copies for backprop)."""
    from dataclasses import replace

    from .resources import Placement, PlacementGroup, RoleAssignment
    if cfg.kv_cache is None:
        raise ValidationError("fixture lacks a [kv_cache] section")
    c = cfg.cluster
    kv_train = replace(cfg.kv_cache, copies=2)
    gen = GpuGroup("generator", c.generator_gpus, c.hbm_bytes,
                   cp_degree=c.generator_cp_degree, fsdp_degree=c.generator_gpus)
    critic = GpuGroup("critic", c.critic_gpus, c.hbm_bytes,
                      fsdp_degree=c.critic_gpus)
    teacher = GpuGroup("teacher", c.teacher_gpus, c.hbm_bytes,
                       fsdp_degree=c.teacher_gpus)
    return Placement(groups=(
        PlacementGroup(gen, (RoleAssignment(cfg.memory["generator"], kv_train),)),
        PlacementGroup(critic, (RoleAssignment(cfg.memory["critic"]),)),
        PlacementGroup(teacher, (RoleAssignment(cfg.memory["teacher"]),)),
    ))
