"""Command-line entry point: ``radiolam <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augment import InsufficientDataError, SceneContext
from .baselines import kriging3d_estimate, rbf3d_estimate
from .experiments import METHODS, TEST_SEED_BASE, TRAIN_SEED_BASE, evaluate, format_table, make_scenes, sample_seed
from .experiments import score_row, summarize, write_csv
from .generation import load_moe, save_moe
from .pipeline import RunConfig, estimate_map, train_moe
from .rmt import RMTError, read_rmt, write_rmt
from .scene import draw_samples, load_samples, load_scene, save_samples, save_scene

log = logging.getLogger("radiolam")

INDEX = "index.json"
RUN_CONFIG = "run_config.json"


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# PGM


def encode_pgm(rss_map: np.ndarray) -> bytes:
    """Binary PGM (P5), one row per first-axis index, value round(255 * clamp(rss))."""
    arr = np.asarray(rss_map, dtype=float)
    if arr.ndim != 2:
        raise CLIError(f"render needs a 2D map, got shape {arr.shape}")
    pix = np.rint(255.0 * np.clip(np.nan_to_num(arr), 0.0, 1.0)).astype(np.uint8)
    rows, cols = pix.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pix.tobytes()


def write_pgm(path: str | Path, rss_map: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(rss_map))


# ---------------------------------------------------------------------------
# helpers


def _config(path) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    p = Path(path)
    if not p.exists():
        raise CLIError(f"config file not found: {p}")
    try:
        return RunConfig.load(p)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CLIError(f"bad config {p}: {exc}") from exc


def _load_index(data_dir: Path) -> dict:
    idx = data_dir / INDEX
    if not idx.exists():
        raise CLIError(f"no dataset index at {idx}")
    return json.loads(idx.read_text())


def _dataset(data_dir: Path):
    index = _load_index(data_dir)
    scenes, samples, ids = [], [], []
    for entry in index["scenes"]:
        scene = load_scene(data_dir / entry["path"])
        scenes.append(scene)
        samples.append(load_samples(data_dir / entry["samples"], scene.grid))
        ids.append(entry["id"])
    return scenes, samples, ids


def _checkpoint_config(ckpt: Path, override) -> RunConfig:
    if override is not None:
        return _config(override)
    stored = (ckpt if ckpt.is_dir() else ckpt.parent) / RUN_CONFIG
    return RunConfig.load(stored) if stored.exists() else RunConfig.from_dict({})


# ---------------------------------------------------------------------------
# commands


def cmd_gen_scenes(args) -> int:
    cfg = _config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = TRAIN_SEED_BASE if args.split == "train" else TEST_SEED_BASE
    n = args.per_env if args.per_env is not None else cfg.scenes_per_env
    scenes = make_scenes(n, base + 100_000 * cfg.seed, cfg.scene)
    entries = []
    for i, scene in enumerate(scenes):
        sid = f"scene_{i:04d}"
        save_scene(scene, out / sid)
        samples = draw_samples(scene, cfg.samples_k, sample_seed(cfg.seed, i))
        save_samples(samples, out / sid / "samples.csv")
        entries.append({"id": sid, "env": scene.env_label, "path": sid, "samples": f"{sid}/samples.csv"})
    index = {"split": args.split, "seed": cfg.seed, "samples_k": cfg.samples_k, "scenes": entries}
    (out / INDEX).write_text(json.dumps(index, indent=2))
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    scenes, _, _ = _dataset(Path(args.data))
    losses: dict = {}
    try:
        from .generation import torch_threads

        with torch_threads(args.threads):
            moe = train_moe(scenes, cfg, losses)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    out = Path(args.out)
    save_moe(moe, out)
    (out / RUN_CONFIG).write_text(json.dumps(cfg.to_dict(), indent=2))
    for phase, values in losses.items():
        with open(out / f"loss_{phase}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss"])
            for epoch, loss in enumerate(values):
                w.writerow([epoch, f"{loss:.8g}"])
    print(f"checkpoint written to {out}")
    return 0


def cmd_estimate(args) -> int:
    ckpt = Path(args.checkpoint)
    moe = load_moe(ckpt)
    cfg = _checkpoint_config(ckpt, args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    scene = load_scene(args.scene)
    if not 0 <= args.height < scene.grid.h_dim:
        raise CLIError(f"height index {args.height} out of range [0, {scene.grid.h_dim})")
    samples = load_samples(args.samples, scene.grid)
    est = estimate_map(
        moe,
        SceneContext.of(scene),
        samples,
        args.height,
        cfg,
        use_augment=not args.no_augment,
        use_election=not args.no_election,
        candidates=args.candidates,
        threads=args.threads,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rmt(out / "estimate.rmt", est.map)
    write_pgm(out / "estimate.pgm", est.map)
    report = Path(args.report) if args.report else out / "report.json"
    payload = est.report.to_json() if est.report is not None else json.dumps({"election": False}, indent=2)
    report.write_text(payload)
    print(f"estimate written to {out}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(args.config)
    scene = load_scene(args.scene)
    if not 0 <= args.height < scene.grid.h_dim:
        raise CLIError(f"height index {args.height} out of range [0, {scene.grid.h_dim})")
    samples = load_samples(args.samples, scene.grid)
    if args.method == "rbf":
        est = rbf3d_estimate(samples, args.height, cfg.baselines.rbf_width)
    else:
        est = kriging3d_estimate(samples, args.height, kind=cfg.baselines.variogram)
    write_rmt(args.out, est)
    return 0


def _estimate_rows(est_dir: Path, scenes, ids, heights) -> list:
    """Rows for precomputed maps stored as ``<dir>/<scene_id>/h<h>.rmt``."""
    rows = []
    for scene, sid in zip(scenes, ids):
        for h in heights if heights is not None else range(scene.grid.h_dim):
            est = read_rmt(est_dir / sid / f"h{h}.rmt", expect_shape=scene.truth_maps[h].shape)
            rows.append(score_row(sid, scene.env_label, h, "estimate", scene.truth_maps[h], est))
    return rows


def cmd_eval(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bad = set(methods) - set(METHODS)
    if bad:
        raise CLIError(f"unknown methods {sorted(bad)}; choose from {', '.join(METHODS)}")
    heights = [int(h) for h in args.heights.split(",")] if args.heights else None
    moe = None
    if args.checkpoint:
        moe = load_moe(args.checkpoint)
        cfg = _checkpoint_config(Path(args.checkpoint), args.config)
    else:
        cfg = _config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    scenes, samples, ids = _dataset(Path(args.data))
    if heights is not None and any(not 0 <= h < scenes[0].grid.h_dim for h in heights):
        raise CLIError(f"height indices {heights} out of range")
    try:
        rows = evaluate(moe, scenes, cfg, methods=methods, scene_ids=ids, samples=samples, heights=heights)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    if args.estimates:
        rows += _estimate_rows(Path(args.estimates), scenes, ids, heights)
        methods = methods + ("estimate",)
    write_csv(rows, args.out)
    print(format_table(summarize(rows), methods))
    return 0


def cmd_render(args) -> int:
    arr = read_rmt(args.map)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    write_pgm(args.out, arr)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radiolam", description="Radio map estimation from sparse 3D samples.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="generate a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.add_argument("--per-env", type=int, help="scenes per environment label (default from config)")
    g.set_defaults(func=cmd_gen_scenes)

    t = sub.add_parser("train", help="cold-start and fine-tune the expert mixture")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--threads", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="estimate one target-plane map")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scene", required=True)
    e.add_argument("--samples", required=True)
    e.add_argument("--height", type=int, required=True, help="target height index")
    e.add_argument("--out", required=True)
    e.add_argument("--config", help="override the run config stored with the checkpoint")
    e.add_argument("--candidates", type=int, help="candidate count M (default 16)")
    e.add_argument("--no-augment", action="store_true")
    e.add_argument("--no-election", action="store_true")
    e.add_argument("--seed", type=int)
    e.add_argument("--report", help="election report path (default <out>/report.json)")
    e.add_argument("--threads", type=int)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="per-scene metrics for several methods")
    v.add_argument("--data", required=True)
    v.add_argument("--methods", default="radiolam,rbf,kriging", help="comma list; may be empty with --estimates")
    v.add_argument("--estimates", help="directory of precomputed maps <scene_id>/h<h>.rmt")
    v.add_argument("--heights", help="comma list of height indices (default all)")
    v.add_argument("--checkpoint")
    v.add_argument("--config")
    v.add_argument("--seed", type=int)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="RMT map to 8-bit PGM")
    r.add_argument("--map", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("baseline", help="3D RBF or kriging estimate")
    b.add_argument("--method", choices=("rbf", "kriging"), required=True)
    b.add_argument("--scene", required=True)
    b.add_argument("--samples", required=True)
    b.add_argument("--height", type=int, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--config")
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, RMTError, InsufficientDataError, FileNotFoundError, ValueError) as exc:
        print(f"radiolam {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
