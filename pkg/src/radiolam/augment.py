"""Projection of multi-altitude samples onto a target plane.

Two propagation models are blended: a summed free-space power law around
estimated transmitters, and the COST231-Hata mobile-antenna height
correction. The blend favours Hata near the ground and free space aloft.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .scene import GridSpec, Sample, SampleSet, Transmitter, denormalize_rss, normalize_rss

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


@dataclass
class AugmentParams:
    u_scale: float = 20.0
    theta: float = 0.05
    path_loss_n: float = 2.0
    max_transmitters: int = 5
    lm_max_iters: int = 100
    lm_tol: float = 1e-12
    hata_enabled: bool = True
    free_space_enabled: bool = True
    # "dbm": the free-space law acts on linear mW recovered from the
    # normalization bounds; "unit": it acts on normalized RSS directly
    power_domain: str = "dbm"

    def __post_init__(self):
        if not self.u_scale > 0:
            raise ValueError("u_scale must be positive")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        if not self.path_loss_n > 0:
            raise ValueError("path_loss_n must be positive")
        if not (self.hata_enabled or self.free_space_enabled):
            raise ValueError("enable at least one propagation model")
        if self.power_domain not in ("dbm", "unit"):
            raise ValueError(f"unknown power_domain {self.power_domain!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams":
        return cls(**d)


@dataclass
class SceneContext:
    """What the estimator may know about a scene: never its transmitters."""

    buildings: np.ndarray
    terrain: np.ndarray
    grid: GridSpec
    freq_mhz: float = 3500.0
    norm_lo: float = -150.0
    norm_hi: float = -40.0

    @classmethod
    def of(cls, scene) -> "SceneContext":
        return cls(scene.buildings, scene.terrain, scene.grid, scene.freq_mhz, scene.norm_lo, scene.norm_hi)

    def point(self, x, y, h: int) -> np.ndarray:
        """Grid-unit 3D coordinates of cells ``(x, y)`` at height index ``h``."""
        x = np.asarray(x)
        y = np.asarray(y)
        alt = self.terrain[x, y] + self.grid.heights_m[h]
        return np.stack([x, y, alt / self.grid.cell_size_m], axis=-1).astype(float)


@dataclass
class ProjectedSample:
    source_index: int
    x: int
    y: int
    rss_hat: float
    dropped: bool = False


@dataclass
class ProjectedSet:
    target_h: int
    entries: list[ProjectedSample] = field(default_factory=list)
    # free-space model over the whole target plane, when transmitters were fitted
    prior: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def kept(self) -> list[ProjectedSample]:
        return [e for e in self.entries if not e.dropped]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source_index", "x", "y", "rss_hat", "dropped"])
            for e in self.entries:
                w.writerow([e.source_index, e.x, e.y, repr(e.rss_hat), int(e.dropped)])

    @classmethod
    def from_csv(cls, path: str | Path, target_h: int) -> "ProjectedSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        entries = [
            ProjectedSample(int(r["source_index"]), int(r["x"]), int(r["y"]), float(r["rss_hat"]), r["dropped"] == "1")
            for r in rows
        ]
        return cls(target_h, entries)


# ---------------------------------------------------------------------------
# propagation models


def blend_weight(h_m, u_scale: float):
    """Weight of the Hata prediction at altitude ``h_m``: ``2 ** (-h_m / u_scale)``."""
    if not u_scale > 0:
        raise ValueError("u_scale must be positive")
    return np.exp2(-np.asarray(h_m, dtype=float) / u_scale)[()]


def hata_correction(h: float, freq_mhz: float) -> float:
    """Mobile antenna height correction a(h) in dB, small/medium city form."""
    if not h > 0 or not freq_mhz > 0:
        raise ValueError("height and frequency must be positive")
    lf = np.log10(freq_mhz)
    return (1.1 * lf - 0.7) * h - (1.56 * lf - 0.8)


def hata_project(
    sample: Sample,
    target_h_m: float,
    source_h_m: float,
    freq_mhz: float,
    bounds: tuple[float, float] = (-150.0, -40.0),
) -> float:
    """Move a sample's RSS to another receiver height at the same (x, y).

    Path loss is ``beta - a(h)`` with ``beta`` common to both heights, so the
    received power shifts by ``a(target) - a(source)`` dB.
    """
    if target_h_m == source_h_m:
        return sample.rss
    lo, hi = bounds
    p_dbm = denormalize_rss(sample.rss, lo, hi)
    p_dbm += hata_correction(target_h_m, freq_mhz) - hata_correction(source_h_m, freq_mhz)
    return normalize_rss(p_dbm, lo, hi)


def _design_matrix(points: np.ndarray, tx_pos: np.ndarray, n: float) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - tx_pos[None, :, :], axis=-1)
    return np.maximum(d, 1.0) ** (-n)


def free_space_power(points, txs: list[Transmitter], n: float) -> np.ndarray:
    """Unclamped summed power law ``sum K * max(d, 1) ** -n`` at each point."""
    if not txs:
        raise ValueError("need at least one transmitter")
    pts = np.atleast_2d(np.asarray(points, float))
    pos = np.array([t.pos for t in txs], float)
    k = np.array([t.gain_const for t in txs], float)
    return _design_matrix(pts, pos, n) @ k


def free_space_predict(point, txs: list[Transmitter], n: float = 2.0) -> float:
    return float(np.clip(free_space_power(point, txs, n)[0], 0.0, 1.0))


# ---------------------------------------------------------------------------
# transmitter localization and power fitting


def _gaussian_rbf_solve(centers: np.ndarray, values: np.ndarray, eps: float, ridge: float = 1e-8):
    r2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    A = np.exp(-eps * r2) + ridge * np.eye(len(centers))
    try:
        return np.linalg.solve(A, values)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, values, rcond=None)[0]


def _lattice(grid: GridSpec, z_max: float):
    stride = int(np.ceil(max(grid.x_dim, grid.y_dim) / 16))
    xs = np.arange(grid.x_dim // stride) * stride + (stride - 1) / 2
    ys = np.arange(grid.y_dim // stride) * stride + (stride - 1) / 2
    zs = np.linspace(0.0, z_max, 16)
    return xs, ys, zs


def sample_points(samples: SampleSet, terrain: np.ndarray | None = None) -> np.ndarray:
    """Grid-unit 3D positions of samples, absolute altitude when terrain is known."""
    g = samples.grid
    xyh = samples.xyh
    alt = np.asarray(g.heights_m)[xyh[:, 2]]
    if terrain is not None:
        alt = alt + terrain[xyh[:, 0], xyh[:, 1]]
    return np.column_stack([xyh[:, 0], xyh[:, 1], alt / g.cell_size_m]).astype(float)


def estimate_transmitters(
    samples: SampleSet,
    grid: GridSpec,
    params: AugmentParams,
    terrain: np.ndarray | None = None,
) -> list[Transmitter]:
    """Transmitter positions from peaks of an RBF interpolation of the samples."""
    if len(samples) < 4:
        raise InsufficientDataError(f"need at least 4 samples to localize transmitters, got {len(samples)}")
    pts = sample_points(samples, terrain)
    top = grid.heights_m[-1] + (float(terrain.max()) if terrain is not None else 0.0)
    z_max = top / grid.cell_size_m
    diag = np.sqrt(grid.x_dim**2 + grid.y_dim**2 + z_max**2)
    eps = 1.0 / (2.0 * (diag / 4.0) ** 2)
    weights = _gaussian_rbf_solve(pts, samples.rss, eps)

    xs, ys, zs = _lattice(grid, z_max)
    lattice = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    flat = lattice.reshape(-1, 3)
    r2 = ((flat[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    field_ = (np.exp(-eps * r2) @ weights).reshape(lattice.shape[:3])

    peaks = (field_ == ndimage.maximum_filter(field_, size=3, mode="nearest")) & (
        field_ > np.percentile(field_, 75)
    )
    idx = np.argwhere(peaks)
    order = np.argsort(-field_[peaks], kind="stable")
    out = []
    for i in order:
        pos = tuple(float(v) for v in lattice[tuple(idx[i])])
        # plateaus report several adjacent nodes; keep the first
        if any(max(abs(a - b) for a, b in zip(pos, t.pos)) <= 1.0 + 1e-9 for t in out):
            continue
        out.append(Transmitter(pos))
        if len(out) == params.max_transmitters:
            break
    return out


@dataclass
class LMResult:
    gains: np.ndarray
    sse: float
    grad_norm: float
    iterations: int


def levenberg_marquardt_gains(
    points: np.ndarray,
    values: np.ndarray,
    tx_pos: np.ndarray,
    n: float,
    k0: np.ndarray,
    max_iters: int = 100,
    tol: float = 1e-12,
) -> LMResult:
    """Fit non-negative gains ``K`` of ``sum K d^-n`` to ``values``.

    Marquardt-scaled damping starting at 1e-3, multiplied by 10 after a
    rejected step and divided by 10 after an accepted one.
    """
    J = _design_matrix(points, tx_pos, n)
    k = np.maximum(np.asarray(k0, float), 0.0)
    res = J @ k - values
    sse = float(res @ res)
    lam = 1e-3
    JtJ = J.T @ J
    scale = np.diag(JtJ).copy()
    scale[scale == 0] = 1.0
    # gradient floor set by rounding in J^T r
    g_floor = 1e-13 * float(np.linalg.norm(J.T @ np.abs(values)) + np.linalg.norm(JtJ @ np.abs(k)))
    it = 0
    for it in range(1, max_iters + 1):
        grad = J.T @ res
        if sse == 0.0 or np.linalg.norm(grad) <= g_floor:
            break
        try:
            step = np.linalg.solve(JtJ + lam * np.diag(scale), -grad)
        except np.linalg.LinAlgError:
            step = -grad / scale
        k_new = np.maximum(k + step, 0.0)
        res_new = J @ k_new - values
        sse_new = float(res_new @ res_new)
        if sse_new < sse:
            rel = (sse - sse_new) / sse
            k, res, sse = k_new, res_new, sse_new
            lam /= 10.0
            if rel < tol:
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                break
    grad = J.T @ res
    # projected gradient: bound-active components cannot descend further
    grad = np.where((k == 0.0) & (grad > 0), 0.0, grad)
    return LMResult(k, sse, float(np.linalg.norm(grad)), it)


def _to_fit_domain(rss: np.ndarray, params: AugmentParams, bounds) -> np.ndarray:
    if params.power_domain == "unit":
        return np.asarray(rss, float)
    return 10.0 ** (denormalize_rss(rss, *bounds) / 10.0)


def _from_fit_domain(power: np.ndarray, params: AugmentParams, bounds) -> np.ndarray:
    if params.power_domain == "unit":
        return np.clip(power, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        return normalize_rss(10.0 * np.log10(np.maximum(power, 0.0)), *bounds)


def fit_power_params(
    samples: SampleSet,
    tx_positions: list,
    params: AugmentParams,
    terrain: np.ndarray | None = None,
    bounds: tuple[float, float] = (-150.0, -40.0),
    *,
    return_result: bool = False,
):
    """Levenberg-Marquardt fit of each transmitter's folded gain constant."""
    if len(samples) == 0:
        raise InsufficientDataError("cannot fit transmitter power without samples")
    if not tx_positions:
        raise ValueError("no transmitter positions to fit")
    pos = np.array([t.pos if isinstance(t, Transmitter) else t for t in tx_positions], float)
    pts = sample_points(samples, terrain)
    values = _to_fit_domain(samples.rss, params, bounds)
    n = params.path_loss_n

    d = np.maximum(np.linalg.norm(pts[:, None, :] - pos[None, :, :], axis=-1), 1.0)
    nearest = d.argmin(axis=1)
    k0 = np.empty(len(pos))
    best = int(np.argmax(values))
    for j in range(len(pos)):
        mine = np.flatnonzero(nearest == j)
        s = mine[np.argmax(values[mine])] if mine.size else best
        k0[j] = values[s] * d[s, j] ** n
    if len(pos) > 1:
        k0 /= len(pos)

    result = levenberg_marquardt_gains(pts, values, pos, n, k0, params.lm_max_iters, params.lm_tol)
    txs = [Transmitter(tuple(p), float("nan"), float(k)) for p, k in zip(pos, result.gains)]
    return (txs, result) if return_result else txs


# ---------------------------------------------------------------------------
# block entry point


def augment(
    samples: SampleSet,
    ctx: SceneContext,
    target_h: int,
    params: AugmentParams | None = None,
    *,
    transmitters: list[Transmitter] | None = None,
) -> ProjectedSet:
    """Project every sample onto the plane ``target_h``.

    ``transmitters`` bypasses localization and fitting (oracle use only).
    """
    params = params or AugmentParams()
    if len(samples) == 0:
        raise InsufficientDataError("augment needs at least one sample")
    grid = ctx.grid
    bounds = (ctx.norm_lo, ctx.norm_hi)
    target_m = grid.heights_m[target_h]
    xyh = samples.xyh
    off_plane = xyh[:, 2] != target_h

    txs = transmitters
    localize = off_plane.any() or len(samples) >= 4
    if params.free_space_enabled and txs is None and localize:
        positions = estimate_transmitters(samples, grid, params, ctx.terrain)
        txs = fit_power_params(samples, positions, params, ctx.terrain, bounds)

    if params.hata_enabled and params.free_space_enabled:
        w = float(blend_weight(target_m, params.u_scale))
    else:
        w = 1.0 if params.hata_enabled else 0.0

    p_free = np.zeros(len(samples))
    if params.free_space_enabled and off_plane.any():
        targets = ctx.point(xyh[:, 0], xyh[:, 1], target_h)
        p_free = _from_fit_domain(free_space_power(targets, txs, params.path_loss_n), params, bounds)

    entries = []
    for i, s in enumerate(samples):
        if s.h == target_h:
            entries.append(ProjectedSample(i, s.x, s.y, s.rss, False))
            continue
        if s.rss < params.theta:
            entries.append(ProjectedSample(i, s.x, s.y, float("nan"), True))
            continue
        r_hata = 0.0
        if params.hata_enabled:
            r_hata = hata_project(s, target_m, grid.heights_m[s.h], ctx.freq_mhz, bounds)
        r_hat = float((1.0 - w) * p_free[i] + w * r_hata)
        if ctx.buildings[s.x, s.y, target_h]:
            # occupied cells carry no RSS
            r_hat = 0.0
        entries.append(ProjectedSample(i, s.x, s.y, r_hat, r_hat < params.theta))
    prior = free_space_plane(txs, ctx, target_h, params) if txs else None
    return ProjectedSet(target_h, entries, prior)


def free_space_plane(txs: list[Transmitter], ctx: SceneContext, target_h: int, params: AugmentParams) -> np.ndarray:
    """Fitted free-space model evaluated on every cell of a plane; occupied cells are 0."""
    grid = ctx.grid
    xs, ys = np.meshgrid(np.arange(grid.x_dim), np.arange(grid.y_dim), indexing="ij")
    pts = ctx.point(xs.ravel(), ys.ravel(), target_h)
    power = free_space_power(pts, txs, params.path_loss_n)
    plane = _from_fit_domain(power, params, (ctx.norm_lo, ctx.norm_hi)).reshape(grid.x_dim, grid.y_dim)
    plane[ctx.buildings[:, :, target_h]] = 0.0
    return plane.astype(np.float32)


def passthrough(samples: SampleSet, target_h: int) -> ProjectedSet:
    """Projection with the augmentation block switched off: coplanar samples only."""
    entries = [
        ProjectedSample(i, s.x, s.y, s.rss if s.h == target_h else float("nan"), s.h != target_h)
        for i, s in enumerate(samples)
    ]
    return ProjectedSet(target_h, entries)
