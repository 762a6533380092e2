"""End-to-end wiring: run configuration, MoE training and map estimation."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentParams, SceneContext, augment, passthrough
from .election import ElectionReport, NoiseCtlState, run_election_loop, select_best, update_noise
from .generation import (
    ExpertConfig,
    FineTuneConfig,
    MoEParams,
    RouterConfig,
    build_moe,
    build_training_set,
    fine_tune,
    generate_candidates,
    make_conditioning,
    make_schedule,
    torch_threads,
    train_expert,
    train_router,
)
from .scene import ENV_LABELS, Scene, SceneGenConfig, SampleSet, draw_samples

log = logging.getLogger(__name__)


@dataclass
class GenerationConfig:
    t_max: int = 200
    beta_1: float = 1e-4
    beta_T: float = 0.02
    ddim_steps: int = 10
    guidance_scale: float = 1.0
    candidates: int = 16
    train_k: int = 16
    train_draws: int = 4
    shared: ExpertConfig = field(default_factory=ExpertConfig)
    domain: ExpertConfig = field(default_factory=ExpertConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    finetune: FineTuneConfig = field(default_factory=FineTuneConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        d = dict(d)
        for key, typ in (("shared", ExpertConfig), ("domain", ExpertConfig), ("router", RouterConfig), ("finetune", FineTuneConfig)):
            if key in d:
                d[key] = typ(**d[key])
        return cls(**d)


@dataclass
class ElectionConfig:
    rounds: int = 1
    sigma_0: float = 0.05
    delta_sigma: float = 0.05
    sigma_max: float = 0.3
    var_threshold: float | None = None

    def initial_state(self, var_threshold: float | None = None) -> NoiseCtlState:
        v = var_threshold if var_threshold is not None else (self.var_threshold or 1.0)
        return NoiseCtlState(self.sigma_0, self.delta_sigma, self.sigma_max, v)


@dataclass
class BaselineConfig:
    variogram: str = "exponential"
    rbf_width: float | None = None


@dataclass
class RunConfig:
    seed: int = 0
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    augment: AugmentParams = field(default_factory=AugmentParams)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    election: ElectionConfig = field(default_factory=ElectionConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    # dataset layout for gen-scenes
    scenes_per_env: int = 10
    samples_k: int = 16

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(
            seed=int(d.get("seed", 0)),
            scene=SceneGenConfig.from_dict(d.get("scene", {})),
            augment=AugmentParams.from_dict(d.get("augment", {})),
            generation=GenerationConfig.from_dict(d.get("generation", {})),
            election=ElectionConfig(**d.get("election", {})),
            baselines=BaselineConfig(**d.get("baselines", {})),
            scenes_per_env=int(d.get("scenes_per_env", 10)),
            samples_k=int(d.get("samples_k", 16)),
        )
        env_seed = os.environ.get("RADIOLAM_SEED")
        if env_seed is not None:
            cfg.seed = int(env_seed)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"]["grid"]["heights_m"] = list(self.scene.grid.heights_m)
        return d


# ---------------------------------------------------------------------------
# training


def training_items(scenes: list[Scene], k: int, draws: int, seed: int):
    items = []
    for i, scene in enumerate(scenes):
        for d in range(draws):
            samples = draw_samples(scene, k, seed=seed * 1_000_003 + i * 101 + d)
            for h in range(scene.grid.h_dim):
                items.append((scene, samples, h))
    return items


def train_moe(scenes: list[Scene], cfg: RunConfig, loss_log: dict | None = None) -> MoEParams:
    """Cold start (shared expert, one expert per label, router), then joint fine-tuning."""
    gen = cfg.generation
    labels = tuple(lab for lab in ENV_LABELS if any(s.env_label == lab for s in scenes))
    missing = [lab for lab in ENV_LABELS if lab not in labels]
    if missing:
        raise ValueError(f"training scenes lack labels: {missing}")
    schedule = make_schedule(gen.t_max, gen.beta_1, gen.beta_T)
    items = training_items(scenes, gen.train_k, gen.train_draws, cfg.seed)
    data = build_training_set(items, cfg.augment)
    log.info("training set: %d planes from %d scenes", len(data), len(scenes))

    shared = train_expert(data, gen.shared, cfg.seed, schedule=schedule)
    experts = [
        train_expert(data, gen.domain, cfg.seed + 1 + i, domain=lab, schedule=schedule)
        for i, lab in enumerate(labels)
    ]
    router = train_router(data, gen.router, cfg.seed + 11)
    moe = build_moe(shared, experts, router, schedule, gen.guidance_scale, seed=cfg.seed)
    if gen.finetune.epochs > 0:
        moe = fine_tune(moe, data, gen.finetune, cfg.seed + 13)
    if loss_log is not None:
        loss_log["shared"] = list(shared.losses)
        for e in experts:
            loss_log[e.domain] = list(e.losses)
        loss_log["router"] = list(router.losses)
        loss_log["finetune"] = list(moe.meta.get("finetune_losses", []))
    return moe


# ---------------------------------------------------------------------------
# estimation


@dataclass
class Estimate:
    map: np.ndarray
    report: ElectionReport | None
    projected: object
    candidates: object = None


def estimate_map(
    moe: MoEParams,
    ctx: SceneContext,
    samples: SampleSet,
    h_t: int,
    cfg: RunConfig | None = None,
    *,
    use_augment: bool = True,
    use_election: bool = True,
    candidates: int | None = None,
    seed: int | None = None,
    threads: int | None = None,
) -> Estimate:
    """Augment, generate and elect one target-plane map."""
    cfg = cfg or RunConfig()
    if not 0 <= h_t < ctx.grid.h_dim:
        raise ValueError(f"target height index {h_t} out of range")
    seed = cfg.seed if seed is None else seed
    M = candidates or cfg.generation.candidates
    projected = augment(samples, ctx, h_t, cfg.augment) if use_augment else passthrough(samples, h_t)
    cond = make_conditioning(projected, ctx.buildings, ctx.terrain, h_t, ctx.grid)
    steps = cfg.generation.ddim_steps
    state = cfg.election.initial_state()
    with torch_threads(threads):
        if not use_election:
            cands = generate_candidates(moe, cond, M, seed, state, steps)
            return Estimate(cands.candidates[0], None, projected, cands)
        if cfg.election.rounds == 1:
            cands = generate_candidates(moe, cond, M, seed, state, steps)
            best, report = select_best(cands, projected, samples)
            report.sigma_trace = [state.sigma_t]
            report.variance_trace = [report.variance]
            report.updated_sigma = update_noise(state, report.variance).sigma_t
            return Estimate(best, report, projected, cands)
        best, report, _ = run_election_loop(
            moe, cond, projected, samples, M, cfg.election.rounds, state, seed, steps
        )
        return Estimate(best, report, projected)
