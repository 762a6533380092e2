"""Mixture-of-experts diffusion generator: training, routing, fusion, sampling."""

from __future__ import annotations

import copy
import math
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from ..augment import AugmentParams, SceneContext, augment, passthrough
from ..scene import ENV_LABELS, Scene, SampleSet
from .conditioning import TERRAIN_SCALE_M, Conditioning, make_conditioning
from .diffusion import DiffusionSchedule, ddim_reverse, ddim_timesteps, forward_diffuse, make_schedule
from .networks import Denoiser, Router, architecture_hash, init_uniform

log = logging.getLogger(__name__)


@dataclass
class ExpertParams:
    net: Denoiser
    expert_id: str
    domain: str = "shared"
    losses: list[float] = field(default_factory=list)


@dataclass
class RouterParams:
    net: Router
    labels: tuple[str, ...] = ENV_LABELS
    losses: list[float] = field(default_factory=list)

    @property
    def n_experts(self) -> int:
        return self.net.head.out_features


@dataclass
class MoEParams:
    shared: ExpertParams
    domain_experts: list[ExpertParams]
    router: RouterParams
    schedule: DiffusionSchedule
    guidance_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.domain_experts:
            raise ValueError("need at least one domain expert")
        if self.router.n_experts != len(self.domain_experts):
            raise ValueError("router width must equal the number of domain experts")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.domain for e in self.domain_experts)

    @property
    def arch_hash(self) -> str:
        return architecture_hash(len(self.domain_experts))

    def parameters(self):
        for e in [self.shared, *self.domain_experts]:
            yield from e.net.parameters()
        yield from self.router.net.parameters()


@dataclass
class CandidateSet:
    candidates: np.ndarray  # (M, x, y)
    seeds: list[int]
    sigma_trace: list[float]
    etas: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class ExpertConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    dihedral: bool = True


@dataclass
class RouterConfig:
    epochs: int = 300
    lr: float = 1e-2


@dataclass
class FineTuneConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-4
    dihedral: bool = True


@contextmanager
def torch_threads(n: int | None):
    if n is None:
        yield
        return
    old = torch.get_num_threads()
    torch.set_num_threads(n)
    try:
        yield
    finally:
        torch.set_num_threads(old)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class TrainingSet:
    x0: np.ndarray  # (N, 1, x, y)
    static: np.ndarray  # (N, 5, x, y)
    route: np.ndarray  # (N, 2, x, y)
    labels: np.ndarray  # (N,) index into label_names
    label_names: tuple[str, ...] = ENV_LABELS

    def __len__(self) -> int:
        return len(self.x0)

    def subset(self, mask: np.ndarray) -> "TrainingSet":
        return TrainingSet(self.x0[mask], self.static[mask], self.route[mask], self.labels[mask], self.label_names)


def condition_for(
    scene: Scene,
    samples: SampleSet,
    target_h: int,
    params: AugmentParams | None = None,
    use_augment: bool = True,
) -> Conditioning:
    ctx = SceneContext.of(scene)
    if use_augment:
        projected = augment(samples, ctx, target_h, params)
    else:
        projected = passthrough(samples, target_h)
    return make_conditioning(projected, ctx.buildings, ctx.terrain, target_h, ctx.grid)


def build_training_set(
    items: Sequence[tuple[Scene, SampleSet, int]],
    augment_params: AugmentParams | None = None,
    use_augment: bool = True,
    label_names: tuple[str, ...] = ENV_LABELS,
) -> TrainingSet:
    if not items:
        raise ValueError("empty dataset")
    x0, static, route, labels = [], [], [], []
    for scene, samples, h_t in items:
        cond = condition_for(scene, samples, h_t, augment_params, use_augment)
        x0.append(scene.truth_maps[h_t][None])
        static.append(cond.static)
        route.append(cond.route)
        labels.append(label_names.index(scene.env_label))
    return TrainingSet(
        np.stack(x0).astype(np.float32),
        np.stack(static),
        np.stack(route),
        np.array(labels, dtype=int),
        label_names,
    )


def _as_training_set(dataset) -> TrainingSet:
    if isinstance(dataset, TrainingSet):
        return dataset
    return build_training_set(list(dataset))


def _dihedral(tensors: list[torch.Tensor], k: int, flip: bool) -> list[torch.Tensor]:
    out = []
    for x in tensors:
        x = torch.rot90(x, k, dims=(2, 3))
        out.append(torch.flip(x, dims=(3,)) if flip else x)
    return out


def _batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]


# ---------------------------------------------------------------------------
# training


def new_expert(seed: int, expert_id: str, domain: str = "shared") -> ExpertParams:
    net = Denoiser()
    init_uniform(net, torch.Generator().manual_seed(seed))
    return ExpertParams(net, expert_id, domain)


def train_expert(
    dataset,
    cfg: ExpertConfig | None = None,
    seed: int = 0,
    *,
    domain: str | None = None,
    schedule: DiffusionSchedule | None = None,
    init: ExpertParams | None = None,
) -> ExpertParams:
    """DDPM training of one expert; ``domain`` restricts the data to one label."""
    cfg = cfg or ExpertConfig()
    schedule = schedule or make_schedule()
    data = _as_training_set(dataset)
    if len(data) == 0:
        raise ValueError("empty dataset")
    if domain is not None:
        if domain not in data.label_names:
            raise ValueError(f"unknown domain {domain!r}")
        data = data.subset(data.labels == data.label_names.index(domain))
        if len(data) == 0:
            raise ValueError(f"no training scenes labelled {domain!r}")
    name = domain or "shared"
    expert = copy.deepcopy(init) if init is not None else new_expert(seed, name, name)
    expert.expert_id, expert.domain = name, name
    gen = torch.Generator().manual_seed(seed + 1)
    x0_all = torch.from_numpy(data.x0)
    cond_all = torch.from_numpy(data.static)
    opt = torch.optim.Adam(expert.net.parameters(), lr=cfg.lr)
    expert.net.train()
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(data), cfg.batch_size, gen):
            x0, cond = x0_all[idx], cond_all[idx]
            if cfg.dihedral:
                k = int(torch.randint(4, (1,), generator=gen))
                flip = bool(torch.randint(2, (1,), generator=gen))
                x0, cond = _dihedral([x0, cond], k, flip)
            t = torch.randint(schedule.t_max, (len(idx),), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            x_t = forward_diffuse(x0, t, eps, schedule)
            loss = F.mse_loss(expert.net(x_t, cond, t), eps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        expert.losses.append(total / count)
        log.debug("expert %s epoch %d loss %.5f", name, epoch, expert.losses[-1])
    expert.net.eval()
    return expert


def train_router(dataset, cfg: RouterConfig | None = None, seed: int = 0, labels=ENV_LABELS) -> RouterParams:
    """Cross-entropy training of the router on (building slice, terrain, label) triples."""
    cfg = cfg or RouterConfig()
    if isinstance(dataset, TrainingSet):
        x = torch.from_numpy(dataset.route)
        y = torch.from_numpy(dataset.labels)
        labels = dataset.label_names
    else:
        rows = list(dataset)
        if not rows:
            raise ValueError("empty router dataset")
        x = torch.stack([torch.from_numpy(_route_input(b, t)) for b, t, _ in rows])
        y = torch.tensor([labels.index(lab) for _, _, lab in rows])
    if len(torch.unique(y)) < 2:
        raise ValueError("router training needs at least two distinct labels")
    net = Router(len(labels))
    init_uniform(net, torch.Generator().manual_seed(seed))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    router = RouterParams(net, tuple(labels))
    for _ in range(cfg.epochs):
        loss = F.cross_entropy(net.logits(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        router.losses.append(loss.item())
    net.eval()
    return router


def _fused_eps(moe: MoEParams, x_t, cond, t, route_in) -> torch.Tensor:
    w = moe.router.net(route_in)
    eps_s = moe.shared.net(x_t, cond, t)
    fused = eps_s
    for e, expert in enumerate(moe.domain_experts):
        diff = expert.net(x_t, cond, t) - eps_s
        fused = fused + moe.guidance_scale * w[:, e, None, None, None] * diff
    return fused


def fused_loss(moe: MoEParams, dataset, seed: int = 0, batch_size: int = 64) -> float:
    """Mean fused DDPM loss over a dataset with a fixed noise draw."""
    data = _as_training_set(dataset)
    gen = torch.Generator().manual_seed(seed)
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            sl = slice(i, i + batch_size)
            x0 = torch.from_numpy(data.x0[sl])
            t = torch.randint(moe.schedule.t_max, (len(x0),), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            x_t = forward_diffuse(x0, t, eps, moe.schedule)
            pred = _fused_eps(moe, x_t, torch.from_numpy(data.static[sl]), t, torch.from_numpy(data.route[sl]))
            total += F.mse_loss(pred, eps, reduction="sum").item()
    return total / data.x0.size


def fine_tune(moe: MoEParams, dataset, cfg: FineTuneConfig | None = None, seed: int = 0) -> MoEParams:
    """Joint update of all experts and the router through the fused prediction."""
    cfg = cfg or FineTuneConfig()
    hashes = {architecture_hash(len(moe.domain_experts))}
    if any(not isinstance(e.net, Denoiser) for e in [moe.shared, *moe.domain_experts]) or len(hashes) != 1:
        raise ValueError("experts do not share one architecture")
    data = _as_training_set(dataset)
    moe = copy.deepcopy(moe)
    params = list(moe.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    gen = torch.Generator().manual_seed(seed + 7)
    x0_all = torch.from_numpy(data.x0)
    cond_all = torch.from_numpy(data.static)
    route_all = torch.from_numpy(data.route)
    nets = [moe.shared.net, *(e.net for e in moe.domain_experts), moe.router.net]
    for n in nets:
        n.train()
    losses = []
    for _ in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(data), cfg.batch_size, gen):
            x0, cond, route_in = x0_all[idx], cond_all[idx], route_all[idx]
            if cfg.dihedral:
                k = int(torch.randint(4, (1,), generator=gen))
                flip = bool(torch.randint(2, (1,), generator=gen))
                x0, cond, route_in = _dihedral([x0, cond, route_in], k, flip)
            t = torch.randint(moe.schedule.t_max, (len(idx),), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            x_t = forward_diffuse(x0, t, eps, moe.schedule)
            loss = F.mse_loss(_fused_eps(moe, x_t, cond, t, route_in), eps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        losses.append(total / count)
    for n in nets:
        n.eval()
    moe.meta.setdefault("finetune_losses", []).extend(losses)
    return moe


# ---------------------------------------------------------------------------
# inference


def _route_input(building_slice: np.ndarray, terrain: np.ndarray) -> np.ndarray:
    return np.stack([np.asarray(building_slice, float), np.asarray(terrain, float) / TERRAIN_SCALE_M]).astype(
        np.float32
    )


def route(router: RouterParams, building_slice, terrain=None) -> tuple[np.ndarray, int]:
    """Softmax expert weights and the top-1 index.

    ``building_slice`` may also be a prepared ``(2, x, y)`` router input.
    """
    x = np.asarray(building_slice, np.float32)
    if terrain is not None:
        if np.shape(terrain) != x.shape:
            raise ValueError(f"shape mismatch: buildings {x.shape} vs terrain {np.shape(terrain)}")
        x = _route_input(x, terrain)
    if x.ndim != 3 or x.shape[0] != 2:
        raise ValueError(f"router input must be (2, x, y), got {x.shape}")
    with torch.no_grad():
        w = router.net(torch.from_numpy(x)[None])[0].double().numpy()
    return w, int(np.argmax(w))


def cfg_fuse(eps_shared, eps_domain, w_top: float, g: float, eta: float = 0.0):
    """``eps_shared + (g + eta) * w_top * (eps_domain - eps_shared)``."""
    return eps_shared + (g + eta) * w_top * (eps_domain - eps_shared)


def candidate_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _start_noise(seed: int, shape) -> torch.Tensor:
    return torch.randn((1, 1, *shape), generator=torch.Generator().manual_seed(seed))


def _draw_eta(seed: int, sigma: float) -> float:
    if sigma <= 0:
        return 0.0
    return float(np.random.default_rng(seed).normal(0.0, sigma))


def _moe_eps_fn(moe: MoEParams, cond: Conditioning, etas: torch.Tensor):
    w, top = route(moe.router, cond.route)
    expert = moe.domain_experts[top].net
    static = torch.from_numpy(cond.static)[None]
    gain = (moe.guidance_scale + etas) * float(w[top])

    def eps_fn(x: torch.Tensor, t: int) -> torch.Tensor:
        c = static.expand(len(x), -1, -1, -1)
        tt = torch.full((len(x),), t, dtype=torch.long)
        eps_s = moe.shared.net(x, c, tt)
        eps_d = expert(x, c, tt)
        return eps_s + gain[:, None, None, None] * (eps_d - eps_s)

    return eps_fn, top


def _start_state(seeds: list[int], cond: Conditioning, schedule: DiffusionSchedule, steps: int) -> torch.Tensor:
    """Noisy guide map at the first strided timestep.

    With T=200 and beta up to 0.02 the last alpha_bar is about 0.13, so the
    training-time x_T still holds a third of x0; pure noise would not match.
    """
    shape = cond.static.shape[1:]
    z = torch.cat([_start_noise(s, shape) for s in seeds])
    ab = float(schedule.alpha_bars[ddim_timesteps(schedule.t_max, steps)[0]])
    guide = torch.from_numpy(cond.static[0]).to(z.dtype)
    return math.sqrt(ab) * guide + math.sqrt(1.0 - ab) * z


def _sample_batch(moe, cond: Conditioning, seeds: list[int], sigma: float, steps: int, eps_fn=None):
    etas = [_draw_eta(s, sigma) for s in seeds]
    if eps_fn is None:
        if moe is None:
            raise ValueError("untrained model: no MoE parameters supplied")
        eps_fn, _ = _moe_eps_fn(moe, cond, torch.tensor(etas, dtype=torch.float32))
        schedule = moe.schedule
    else:
        schedule = moe.schedule if isinstance(moe, MoEParams) else moe
    x = _start_state(seeds, cond, schedule, steps)
    x0 = ddim_reverse(eps_fn, x, schedule, steps)
    return x0[:, 0].clamp(0.0, 1.0).numpy().astype(np.float32), etas


def ddim_sample(
    moe,
    cond: Conditioning,
    steps: int = 10,
    seed: int = 0,
    sigma_t: float = 0.0,
    eps_fn: Callable | None = None,
) -> np.ndarray:
    """One radio map by deterministic DDIM over ``steps`` strided timesteps.

    ``eps_fn(x_t, t)`` replaces the expert ensemble (``moe`` may then be a
    bare schedule).
    """
    maps, _ = _sample_batch(moe, cond, [seed], sigma_t, steps, eps_fn)
    return maps[0]


def generate_candidates(
    moe: MoEParams,
    cond: Conditioning,
    M: int = 16,
    seed: int = 0,
    noise_state=None,
    steps: int = 10,
    batch_size: int | None = None,
) -> CandidateSet:
    """``M`` candidates with per-index seeds; noise scale from the controller state."""
    if M < 1:
        raise ValueError("need at least one candidate")
    sigma = 0.0 if noise_state is None else float(getattr(noise_state, "sigma_t", noise_state))
    seeds = [candidate_seed(seed, i) for i in range(M)]
    batch_size = batch_size or M
    maps, etas = [], []
    for i in range(0, M, batch_size):
        m, e = _sample_batch(moe, cond, seeds[i : i + batch_size], sigma, steps)
        maps.append(m)
        etas.extend(e)
    return CandidateSet(np.concatenate(maps), seeds, [sigma] * M, etas)


def build_moe(
    shared: ExpertParams,
    experts: list[ExpertParams],
    router: RouterParams,
    schedule: DiffusionSchedule,
    guidance_scale: float = 1.0,
    **meta,
) -> MoEParams:
    order = {lab: i for i, lab in enumerate(router.labels)}
    experts = sorted(experts, key=lambda e: order[e.domain])
    return MoEParams(shared, experts, router, schedule, guidance_scale, dict(meta))
