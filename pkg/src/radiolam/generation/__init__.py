from .checkpoint import load_moe, save_moe
from .conditioning import Conditioning, guide_map, make_conditioning, sample_channels
from .diffusion import DiffusionSchedule, ddim_reverse, ddim_timesteps, forward_diffuse, make_schedule
from .moe import (
    CandidateSet,
    ExpertConfig,
    ExpertParams,
    FineTuneConfig,
    MoEParams,
    RouterConfig,
    RouterParams,
    TrainingSet,
    build_moe,
    build_training_set,
    candidate_seed,
    cfg_fuse,
    condition_for,
    ddim_sample,
    fine_tune,
    fused_loss,
    generate_candidates,
    route,
    torch_threads,
    train_expert,
    train_router,
)
from .networks import Denoiser, Router, architecture_hash, init_uniform

__all__ = [
    "CandidateSet",
    "Conditioning",
    "Denoiser",
    "DiffusionSchedule",
    "ExpertConfig",
    "ExpertParams",
    "FineTuneConfig",
    "MoEParams",
    "Router",
    "RouterConfig",
    "RouterParams",
    "TrainingSet",
    "architecture_hash",
    "build_moe",
    "build_training_set",
    "candidate_seed",
    "cfg_fuse",
    "condition_for",
    "ddim_reverse",
    "ddim_sample",
    "ddim_timesteps",
    "fine_tune",
    "forward_diffuse",
    "fused_loss",
    "generate_candidates",
    "guide_map",
    "init_uniform",
    "load_moe",
    "make_conditioning",
    "make_schedule",
    "route",
    "sample_channels",
    "save_moe",
    "torch_threads",
    "train_expert",
    "train_router",
]
