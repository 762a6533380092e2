"""Benchmark protocol: scene splits, method comparison and summary tables."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentParams, SceneContext, augment
from .baselines import kriging3d_estimate, rbf3d_estimate
from .election import select_best
from .metrics import mae, mse, psnr
from .pipeline import RunConfig, estimate_map
from .scene import ENV_LABELS, SampleSet, Scene, SceneGenConfig, draw_samples, generate_scene

log = logging.getLogger(__name__)

METHODS = ("radiolam", "no_augment", "no_election", "rbf", "kriging")
TRAIN_SEED_BASE = 10_000
TEST_SEED_BASE = 90_000
CSV_FIELDS = ("scene_id", "env", "h_t", "method", "mae", "mse", "psnr")


def make_scenes(n_per_env: int, seed_base: int, scene_cfg: SceneGenConfig | None = None) -> list[Scene]:
    """``n_per_env`` scenes of every label, interleaved by label."""
    base = scene_cfg or SceneGenConfig()
    scenes = []
    for i in range(n_per_env):
        for j, env in enumerate(ENV_LABELS):
            cfg = SceneGenConfig(**{**base.__dict__, "env_label": env})
            scenes.append(generate_scene(cfg, seed_base + i * len(ENV_LABELS) + j))
    return scenes


def sample_seed(seed: int, scene_index: int) -> int:
    return seed * 7919 + 5000 + scene_index


@dataclass
class Row:
    scene_id: str
    env: str
    h_t: int
    method: str
    mae: float
    mse: float
    psnr: float

    def as_list(self):
        return [self.scene_id, self.env, self.h_t, self.method, self.mae, self.mse, self.psnr]


def score_row(scene_id, env, h, method, truth, est) -> Row:
    return Row(scene_id, env, h, method, mae(truth, est), mse(truth, est), psnr(truth, est))


def evaluate(
    moe,
    scenes: list[Scene],
    cfg: RunConfig,
    *,
    k: int | None = None,
    methods=METHODS,
    scene_ids: list[str] | None = None,
    samples: list[SampleSet] | None = None,
    heights: list[int] | None = None,
    sigma_log: list | None = None,
) -> list[Row]:
    """One row per (scene, height, method).

    Ablations reuse one candidate set: ``no_election`` is candidate 0 of the
    set the full pipeline elects from.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    if moe is None and set(methods) & {"radiolam", "no_augment", "no_election"}:
        raise ValueError("generative methods need a trained checkpoint")
    k = k or cfg.samples_k
    rows = []
    for i, scene in enumerate(scenes):
        sid = scene_ids[i] if scene_ids else f"scene_{i:04d}"
        ss = samples[i] if samples is not None else draw_samples(scene, k, sample_seed(cfg.seed, i))
        ctx = SceneContext.of(scene)
        for h in heights if heights is not None else range(scene.grid.h_dim):
            truth = scene.truth_maps[h]
            if "radiolam" in methods or "no_election" in methods:
                est = estimate_map(moe, ctx, ss, h, cfg, seed=cfg.seed + i)
                if sigma_log is not None and est.report is not None:
                    sigma_log.extend(est.report.sigma_trace)
                    sigma_log.append(est.report.updated_sigma)
                if "radiolam" in methods:
                    rows.append(score_row(sid, scene.env_label, h, "radiolam", truth, est.map))
                if "no_election" in methods:
                    if est.candidates is not None:
                        first = est.candidates.candidates[0]
                    else:
                        first = estimate_map(moe, ctx, ss, h, cfg, seed=cfg.seed + i, use_election=False).map
                    rows.append(score_row(sid, scene.env_label, h, "no_election", truth, first))
            if "no_augment" in methods:
                est = estimate_map(moe, ctx, ss, h, cfg, seed=cfg.seed + i, use_augment=False)
                if sigma_log is not None and est.report is not None:
                    sigma_log.extend(est.report.sigma_trace)
                rows.append(score_row(sid, scene.env_label, h, "no_augment", truth, est.map))
            if "rbf" in methods:
                rows.append(score_row(sid, scene.env_label, h, "rbf", truth, rbf3d_estimate(ss, h, cfg.baselines.rbf_width)))
            if "kriging" in methods:
                est = kriging3d_estimate(ss, h, kind=cfg.baselines.variogram)
                rows.append(score_row(sid, scene.env_label, h, "kriging", truth, est))
        log.info("evaluated %s (%s)", sid, scene.env_label)
    return rows


def summarize(rows: list[Row]) -> dict:
    """Mean metrics per (method, env, h_t) plus the per-env macro average per (method, h_t).

    Keys: ``(method, env, h)`` and ``(method, "all", h)``; values are dicts
    of mean mae, mse and psnr.
    """
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.method, r.env, r.h_t), []).append(r)
    out = {}
    for key, rs in groups.items():
        out[key] = {m: float(np.mean([getattr(r, m) for r in rs])) for m in ("mae", "mse", "psnr")}
    for method, h in {(m, h) for m, _, h in groups}:
        envs = [out[(method, e, h)] for e in ENV_LABELS if (method, e, h) in out]
        out[(method, "all", h)] = {m: float(np.mean([e[m] for e in envs])) for m in ("mae", "mse", "psnr")}
    return out


def write_csv(rows: list[Row], path: str | Path, with_summary: bool = True) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow(r.as_list())
        if with_summary:
            for (method, env, h), m in sorted(summarize(rows).items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
                w.writerow([f"mean:{env}", env, h, method, m["mae"], m["mse"], m["psnr"]])


def read_csv(path: str | Path) -> list[Row]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            if rec["scene_id"].startswith("mean:"):
                continue
            rows.append(
                Row(rec["scene_id"], rec["env"], int(rec["h_t"]), rec["method"], float(rec["mae"]), float(rec["mse"]), float(rec["psnr"]))
            )
    return rows


def format_table(summary: dict, methods=METHODS) -> str:
    """Macro-averaged MSE, one line per method, one column per height."""
    heights = sorted({h for m, env, h in summary if env == "all"})
    lines = ["method".ljust(12) + "".join(f"h{h}".rjust(10) for h in heights)]
    for m in methods:
        if not any((m, "all", h) in summary for h in heights):
            continue
        lines.append(m.ljust(12) + "".join(f"{summary[(m, 'all', h)]['mse']:10.5f}" for h in heights))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# election reliability


def election_reliability(
    trials: int = 100, n_noise: int = 15, seed: int = 0, k: int = 16, params: AugmentParams | None = None
) -> tuple[int, int]:
    """Ground truth hidden among uniform-noise maps in free-space scenes.

    Projections use the true transmitters and, by default, the free-space
    model alone. Returns (wins, trials).
    """
    params = params or AugmentParams(hata_enabled=False)
    wins = 0
    cfg = SceneGenConfig(env_label="rural", with_buildings=False, with_terrain=False)
    for t in range(trials):
        scene = generate_scene(cfg, seed + t)
        samples = draw_samples(scene, k, seed + t)
        h = t % scene.grid.h_dim
        projected = augment(samples, SceneContext.of(scene), h, params, transmitters=scene.transmitters)
        rng = np.random.default_rng([seed, t])
        maps = rng.random((n_noise + 1, scene.grid.x_dim, scene.grid.y_dim))
        slot = int(rng.integers(n_noise + 1))
        maps[slot] = scene.truth_maps[h]
        _, report = select_best(maps, projected, samples)
        wins += report.winner_index == slot
    return wins, trials
