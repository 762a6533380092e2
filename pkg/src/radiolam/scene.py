"""3D scene model, synthetic propagation oracle, sparse sampling and persistence.

Coordinates: a horizontal cell ``(i, j)`` has its center at ``(i, j)`` and
covers ``[i - 0.5, i + 0.5)``. Vertical positions are absolute altitudes
(terrain elevation plus height above ground). Wherever a 3D point is given
"in grid units" the vertical component is that altitude divided by
``cell_size_m``, so all three axes share one metric.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .rmt import RMTError, read_rmt, write_rmt

ENV_LABELS = ("rural", "suburban", "urban", "dense_urban")

# upper edges of the ground-level building density bands
_DENSITY_EDGES = (0.02, 0.08, 0.2)


@dataclass(frozen=True)
class GridSpec:
    x_dim: int = 32
    y_dim: int = 32
    h_dim: int = 3
    cell_size_m: float = 10.0
    heights_m: tuple[float, ...] = (1.5, 30.0, 200.0)

    def __post_init__(self):
        object.__setattr__(self, "heights_m", tuple(float(h) for h in self.heights_m))
        if self.x_dim < 8 or self.y_dim < 8:
            raise ValueError(f"grid too small: {self.x_dim}x{self.y_dim} (need >= 8x8)")
        if self.h_dim < 2:
            raise ValueError("grid needs at least two height levels")
        if len(self.heights_m) != self.h_dim:
            raise ValueError("heights_m must have h_dim entries")
        if any(b <= a for a, b in zip(self.heights_m, self.heights_m[1:])):
            raise ValueError("heights_m must be strictly increasing")
        if not self.cell_size_m > 0:
            raise ValueError("cell_size_m must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.x_dim, self.y_dim, self.h_dim)

    @property
    def n_cells(self) -> int:
        return self.x_dim * self.y_dim * self.h_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heights_m"] = list(self.heights_m)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            x_dim=int(d["x_dim"]),
            y_dim=int(d["y_dim"]),
            h_dim=int(d["h_dim"]),
            cell_size_m=float(d["cell_size_m"]),
            heights_m=tuple(d["heights_m"]),
        )


@dataclass
class Transmitter:
    pos: tuple[float, float, float]
    power_dbm: float = float("nan")
    gain_const: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "pos": [float(v) for v in self.pos],
            "power_dbm": float(self.power_dbm),
            "gain_const": float(self.gain_const),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transmitter":
        return cls(tuple(float(v) for v in d["pos"]), float(d["power_dbm"]), float(d["gain_const"]))


@dataclass
class Scene:
    grid: GridSpec
    buildings: np.ndarray  # bool (x, y, h)
    terrain: np.ndarray  # float32 (x, y), meters
    env_label: str
    transmitters: list[Transmitter]
    truth_maps: np.ndarray  # float32 (h, x, y), normalized RSS
    freq_mhz: float = 3500.0
    norm_lo: float = -150.0
    norm_hi: float = -40.0

    @property
    def density(self) -> float:
        return float(self.buildings[:, :, 0].mean())

    def free_mask(self) -> np.ndarray:
        return ~self.buildings


@dataclass(frozen=True)
class Sample:
    x: int
    y: int
    h: int
    rss: float


@dataclass
class SampleSet:
    samples: list[Sample]
    grid: GridSpec

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def xyh(self) -> np.ndarray:
        return np.array([(s.x, s.y, s.h) for s in self.samples], dtype=int).reshape(-1, 3)

    @property
    def rss(self) -> np.ndarray:
        return np.array([s.rss for s in self.samples], dtype=float)

    def coords(self) -> np.ndarray:
        """Sample positions in cell units, heights above ground."""
        g = self.grid
        xyh = self.xyh
        z = np.asarray(g.heights_m)[xyh[:, 2]] / g.cell_size_m
        return np.column_stack([xyh[:, 0], xyh[:, 1], z]).astype(float)

    def at_height(self, h: int) -> "SampleSet":
        return SampleSet([s for s in self.samples if s.h == h], self.grid)


@dataclass
class SceneGenConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    env_label: str = "urban"
    n_tx: tuple[int, int] = (1, 3)
    freq_mhz: float = 3500.0
    path_loss_n: float = 2.0
    wall_loss_db: float = 15.0
    terrain_block_db: float = 25.0
    tx_power_dbm: tuple[float, float] = (-50.0, -35.0)
    tx_height_m: tuple[float, float] = (10.0, 40.0)
    norm_lo: float = -150.0
    norm_hi: float = -40.0
    with_buildings: bool = True
    with_terrain: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGenConfig":
        d = dict(d)
        if "grid" in d:
            d["grid"] = GridSpec.from_dict(d["grid"])
        for key in ("n_tx", "tx_power_dbm", "tx_height_m"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def classify_density(rho: float) -> str:
    for label, edge in zip(ENV_LABELS, _DENSITY_EDGES):
        if rho < edge:
            return label
    return ENV_LABELS[-1]


def normalize_rss(p_dbm, lo: float = -150.0, hi: float = -40.0):
    if not hi > lo:
        raise ValueError(f"normalization bounds need hi > lo, got lo={lo}, hi={hi}")
    out = np.clip((np.asarray(p_dbm, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def denormalize_rss(r, lo: float = -150.0, hi: float = -40.0):
    if not hi > lo:
        raise ValueError(f"normalization bounds need hi > lo, got lo={lo}, hi={hi}")
    out = lo + np.asarray(r, dtype=float) * (hi - lo)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# propagation oracle


def _column_walk(start_xy: np.ndarray, end_xy: np.ndarray, x_dim: int, y_dim: int):
    """2D Amanatides-Woo traversal of the columns pierced by many segments.

    All segments share ``start_xy``. Yields ``(cx, cy, t0, t1, live)`` per
    step, where ``[t0, t1]`` is the segment parameter range inside column
    ``(cx, cy)`` and ``live`` flags rays still inside their segment. The
    first step is the start column.
    """
    n = len(end_xy)
    a = np.broadcast_to(np.asarray(start_xy, float) + 0.5, (n, 2))
    b = np.asarray(end_xy, float) + 0.5
    d = b - a
    cell = np.floor(a).astype(int)
    end_cell = np.floor(b).astype(int)
    step = np.sign(d).astype(int)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0, 1.0 / np.abs(d), np.inf)
        bound = cell + (step > 0)
        t_max = np.where(d != 0, (bound - a) / d, np.inf)
    t_enter = np.zeros(n)
    live = np.ones(n, dtype=bool)
    for _ in range(2 * (x_dim + y_dim) + 4):
        t_exit = np.minimum(np.minimum(t_max[:, 0], t_max[:, 1]), 1.0)
        yield (
            np.clip(cell[:, 0], 0, x_dim - 1),
            np.clip(cell[:, 1], 0, y_dim - 1),
            t_enter.copy(),
            t_exit,
            live.copy(),
        )
        live &= ~((cell[:, 0] == end_cell[:, 0]) & (cell[:, 1] == end_cell[:, 1]))
        move_x = t_max[:, 0] < t_max[:, 1]
        ax = live & move_x
        ay = live & ~move_x
        t_enter = np.where(ax, t_max[:, 0], np.where(ay, t_max[:, 1], t_enter))
        cell[ax, 0] += step[ax, 0]
        cell[ay, 1] += step[ay, 1]
        t_max[ax, 0] += t_delta[ax, 0]
        t_max[ay, 1] += t_delta[ay, 1]
        live &= t_enter < 1.0
        if not live.any():
            break


def count_obstructions(
    src: np.ndarray,
    dst: np.ndarray,
    building_top_m: np.ndarray,
    terrain: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Walls crossed and terrain blockage along segments from ``src`` to each ``dst``.

    ``src`` is ``(x, y, altitude_m)`` and ``dst`` an ``(N, 3)`` array of the
    same. A building column counts as one wall when the segment passes below
    its roof inside that column; the terminal columns are excluded.
    """
    x_dim, y_dim = terrain.shape
    src = np.asarray(src, float)
    dst = np.atleast_2d(np.asarray(dst, float))
    walls = np.zeros(len(dst), dtype=int)
    blocked = np.zeros(len(dst), dtype=bool)
    z0 = src[2]
    dz = dst[:, 2] - z0
    start_cell = np.floor(src[:2] + 0.5).astype(int)
    end_cell = np.floor(dst[:, :2] + 0.5).astype(int)
    roof = terrain + building_top_m
    for cx, cy, t0, t1, live in _column_walk(src[:2], dst[:, :2], x_dim, y_dim):
        inner = live & ~((cx == start_cell[0]) & (cy == start_cell[1]))
        inner &= ~((cx == end_cell[:, 0]) & (cy == end_cell[:, 1]))
        if not inner.any():
            continue
        z_low = z0 + np.minimum(t0, t1) * dz
        z_low = np.minimum(z_low, z0 + np.maximum(t0, t1) * dz)
        ground = terrain[cx, cy]
        blocked |= inner & (z_low < ground)
        walls += inner & (building_top_m[cx, cy] > 0) & (z_low < roof[cx, cy])
    return walls, blocked


def received_power_dbm(
    grid: GridSpec,
    building_top_m: np.ndarray,
    terrain: np.ndarray,
    transmitters: list[Transmitter],
    *,
    path_loss_n: float = 2.0,
    wall_loss_db: float = 15.0,
    terrain_block_db: float = 25.0,
) -> np.ndarray:
    """Oracle received power in dBm on every grid cell, shape ``(h, x, y)``.

    Each transmitter contributes ``K * max(d, 1) ** -n`` mW (``d`` in cell
    units), reduced by ``wall_loss_db`` per building column crossed and by
    ``terrain_block_db`` when the path dips below the ground. Contributions
    add in linear mW.
    """
    if not transmitters:
        raise ValueError("at least one transmitter is required")
    xs, ys = np.meshgrid(np.arange(grid.x_dim), np.arange(grid.y_dim), indexing="ij")
    xs = xs.ravel().astype(float)
    ys = ys.ravel().astype(float)
    ground = terrain.ravel().astype(float)
    out = np.empty((grid.h_dim, grid.x_dim, grid.y_dim))
    for h, height in enumerate(grid.heights_m):
        alt = ground + height
        total = np.zeros(xs.size)
        for tx in transmitters:
            tx_alt = tx.pos[2] * grid.cell_size_m
            dst = np.column_stack([xs, ys, alt])
            walls, blocked = count_obstructions(
                np.array([tx.pos[0], tx.pos[1], tx_alt]), dst, building_top_m, terrain
            )
            d = np.sqrt(
                (xs - tx.pos[0]) ** 2 + (ys - tx.pos[1]) ** 2 + ((alt - tx_alt) / grid.cell_size_m) ** 2
            )
            loss_db = walls * wall_loss_db + blocked * terrain_block_db
            total += tx.gain_const * np.maximum(d, 1.0) ** (-path_loss_n) * 10.0 ** (-loss_db / 10.0)
        with np.errstate(divide="ignore"):
            out[h] = (10.0 * np.log10(total)).reshape(grid.x_dim, grid.y_dim)
    return out


# ---------------------------------------------------------------------------
# synthetic scene generation

# (footprint side range, height range in m, target density range)
_ENV_BUILDINGS = {
    "rural": ((1, 2), (4.0, 10.0), (0.004, 0.016)),
    "suburban": ((1, 3), (6.0, 22.0), (0.03, 0.07)),
    "urban": ((2, 4), (10.0, 50.0), (0.10, 0.18)),
    "dense_urban": ((2, 5), (20.0, 120.0), (0.22, 0.32)),
}
_ENV_TERRAIN_M = {"rural": 30.0, "suburban": 15.0, "urban": 10.0, "dense_urban": 8.0}


def _make_terrain(grid: GridSpec, env: str, rng: np.random.Generator) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(grid.x_dim), np.arange(grid.y_dim), indexing="ij")
    elev = np.zeros((grid.x_dim, grid.y_dim))
    amp = _ENV_TERRAIN_M[env]
    scale = max(grid.x_dim, grid.y_dim) / 32.0
    for _ in range(3):
        cx, cy = rng.uniform(0, grid.x_dim), rng.uniform(0, grid.y_dim)
        width = rng.uniform(8.0, 16.0) * scale
        elev += rng.uniform(0.3, 1.0) * amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * width**2))
    return np.maximum(elev, 0.0)


def _make_buildings(grid: GridSpec, env: str, rng: np.random.Generator) -> np.ndarray:
    (side_lo, side_hi), (h_lo, h_hi), (rho_lo, rho_hi) = _ENV_BUILDINGS[env]
    n_ground = grid.x_dim * grid.y_dim
    for _ in range(100):
        target = rng.uniform(rho_lo, rho_hi)
        top = np.zeros((grid.x_dim, grid.y_dim))
        while (top > 0).sum() / n_ground < target:
            wx, wy = rng.integers(side_lo, side_hi + 1, size=2)
            x0 = rng.integers(0, grid.x_dim - wx + 1)
            y0 = rng.integers(0, grid.y_dim - wy + 1)
            height = rng.uniform(h_lo, h_hi)
            block = top[x0 : x0 + wx, y0 : y0 + wy]
            block[...] = np.maximum(block, height)
        # keep roofs below the highest plane so it stays unobstructed
        top = np.minimum(top, grid.heights_m[-1] - 1.0)
        if classify_density((top > 0).mean()) == env:
            return top
    raise RuntimeError(f"could not hit the density band for {env!r}")


def building_mask(grid: GridSpec, building_top_m: np.ndarray) -> np.ndarray:
    heights = np.asarray(grid.heights_m)
    return (building_top_m[:, :, None] > 0) & (building_top_m[:, :, None] >= heights[None, None, :])


def _place_transmitters(
    cfg: SceneGenConfig, top: np.ndarray, terrain: np.ndarray, rng: np.random.Generator
) -> list[Transmitter]:
    grid = cfg.grid
    n = int(rng.integers(cfg.n_tx[0], cfg.n_tx[1] + 1))
    txs = []
    for _ in range(n):
        x = rng.uniform(0, grid.x_dim - 1)
        y = rng.uniform(0, grid.y_dim - 1)
        ix, iy = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        height = rng.uniform(*cfg.tx_height_m)
        if top[ix, iy] > 0:
            height = top[ix, iy] + 3.0
        alt = float(terrain[ix, iy]) + height
        power = rng.uniform(*cfg.tx_power_dbm)
        txs.append(Transmitter((x, y, alt / grid.cell_size_m), power, 10.0 ** (power / 10.0)))
    return txs


def truth_from_power(
    grid: GridSpec, power_dbm: np.ndarray, buildings: np.ndarray, lo: float, hi: float
) -> np.ndarray:
    truth = normalize_rss(power_dbm, lo, hi)
    truth = np.where(np.moveaxis(buildings, 2, 0), 0.0, truth)
    return truth.astype(np.float32)


def generate_scene(cfg: SceneGenConfig, seed: int) -> Scene:
    grid = cfg.grid
    if cfg.env_label not in ENV_LABELS:
        raise ValueError(f"unknown env_label {cfg.env_label!r}")
    if cfg.n_tx[1] < 1 or cfg.n_tx[0] < 1 or cfg.n_tx[0] > cfg.n_tx[1]:
        raise ValueError(f"transmitter count range must be >= 1, got {cfg.n_tx}")
    rng = np.random.default_rng(seed)
    terrain = _make_terrain(grid, cfg.env_label, rng) if cfg.with_terrain else np.zeros(grid.shape[:2])
    terrain = terrain.astype(np.float32)
    if cfg.with_buildings:
        top = _make_buildings(grid, cfg.env_label, rng)
    else:
        top = np.zeros(grid.shape[:2])
    txs = _place_transmitters(cfg, top, terrain, rng)
    power = received_power_dbm(
        grid,
        top,
        terrain.astype(float),
        txs,
        path_loss_n=cfg.path_loss_n,
        wall_loss_db=cfg.wall_loss_db,
        terrain_block_db=cfg.terrain_block_db,
    )
    buildings = building_mask(grid, top)
    truth = truth_from_power(grid, power, buildings, cfg.norm_lo, cfg.norm_hi)
    label = classify_density(buildings[:, :, 0].mean()) if cfg.with_buildings else cfg.env_label
    return Scene(
        grid=grid,
        buildings=buildings,
        terrain=terrain,
        env_label=label,
        transmitters=txs,
        truth_maps=truth,
        freq_mhz=cfg.freq_mhz,
        norm_lo=cfg.norm_lo,
        norm_hi=cfg.norm_hi,
    )


def draw_samples(scene: Scene, k: int, seed: int) -> SampleSet:
    free = np.flatnonzero(~scene.buildings.ravel())
    if k < 0 or k > free.size:
        raise ValueError(f"cannot draw {k} samples from {free.size} free cells")
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(free, size=k, replace=False)) if k else free[:0]
    xs, ys, hs = np.unravel_index(picks, scene.buildings.shape)
    samples = [
        Sample(int(x), int(y), int(h), float(scene.truth_maps[h, x, y]))
        for x, y, h in zip(xs, ys, hs)
    ]
    return SampleSet(samples, scene.grid)


# ---------------------------------------------------------------------------
# persistence

MANIFEST_FORMAT = "radiolam-scene"


def save_scene(scene: Scene, path: str | Path) -> Path:
    """Write ``scene.json`` plus RMT tensors into directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files = {"buildings": "buildings.rmt", "terrain": "terrain.rmt", "truth": "truth.rmt"}
    write_rmt(root / files["buildings"], scene.buildings)
    write_rmt(root / files["terrain"], scene.terrain)
    write_rmt(root / files["truth"], scene.truth_maps)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "grid": scene.grid.to_dict(),
        "env_label": scene.env_label,
        "freq_mhz": scene.freq_mhz,
        "normalization": {"lo": scene.norm_lo, "hi": scene.norm_hi},
        "files": files,
        "transmitters": {"hidden": True, "items": [t.to_dict() for t in scene.transmitters]},
    }
    out = root / "scene.json"
    out.write_text(json.dumps(manifest, indent=2))
    return out


def load_scene(path: str | Path, *, read_hidden: bool = False) -> Scene:
    """Load a scene from its directory or manifest path.

    The transmitter section is only read with ``read_hidden=True``; estimator
    code paths never pass it.
    """
    path = Path(path)
    manifest_path = path / "scene.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing scene manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise RMTError(f"{manifest_path} is not a scene manifest")
    root = manifest_path.parent
    grid = GridSpec.from_dict(manifest["grid"])
    files = manifest["files"]
    for key in ("buildings", "terrain", "truth"):
        if not (root / files[key]).exists():
            raise FileNotFoundError(f"manifest references missing file: {root / files[key]}")
    buildings = read_rmt(root / files["buildings"], expect_shape=grid.shape) != 0
    terrain = read_rmt(root / files["terrain"], expect_shape=grid.shape[:2])
    truth = read_rmt(root / files["truth"], expect_shape=(grid.h_dim, grid.x_dim, grid.y_dim))
    txs = []
    if read_hidden:
        txs = [Transmitter.from_dict(t) for t in manifest["transmitters"]["items"]]
    norm = manifest["normalization"]
    return Scene(
        grid=grid,
        buildings=buildings,
        terrain=terrain,
        env_label=manifest["env_label"],
        transmitters=txs,
        truth_maps=truth,
        freq_mhz=float(manifest["freq_mhz"]),
        norm_lo=float(norm["lo"]),
        norm_hi=float(norm["hi"]),
    )


def save_samples(samples: SampleSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "h", "rss"])
        for s in samples:
            w.writerow([s.x, s.y, s.h, repr(s.rss)])


def load_samples(path: str | Path, grid: GridSpec) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["x", "y", "h", "rss"]:
            raise ValueError(f"{path}: expected header x,y,h,rss")
        rows = [Sample(int(r["x"]), int(r["y"]), int(r["h"]), float(r["rss"])) for r in reader]
    for s in rows:
        if not (0 <= s.x < grid.x_dim and 0 <= s.y < grid.y_dim and 0 <= s.h < grid.h_dim):
            raise ValueError(f"sample {s} outside grid")
    return SampleSet(rows, grid)


