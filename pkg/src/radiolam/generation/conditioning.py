"""Conditioning tensors shared by training and sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..augment import ProjectedSet
from ..scene import GridSpec

TERRAIN_SCALE_M = 50.0


@dataclass
class Conditioning:
    """Static inputs for one target plane.

    ``static`` holds five ``(x, y)`` channels: the guide map, the sample
    mask, the building slice at the target height, scaled terrain and the
    free-space prior (0 when no transmitters were fitted). ``route`` holds
    the ground footprint and scaled terrain seen by the router.
    """

    static: np.ndarray
    route: np.ndarray


def sample_channels(projected: ProjectedSet, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Value and mask planes; several samples in one column are averaged."""
    total = np.zeros((grid.x_dim, grid.y_dim))
    count = np.zeros((grid.x_dim, grid.y_dim))
    for e in projected.kept():
        total[e.x, e.y] += e.rss_hat
        count[e.x, e.y] += 1
    mask = count > 0
    values = np.where(mask, total / np.maximum(count, 1), 0.0)
    return values, mask.astype(float)


def guide_map(values: np.ndarray, mask: np.ndarray, prior: np.ndarray | None = None) -> np.ndarray:
    """Prior plus inverse-square-distance interpolation of the sample residuals.

    Exact at sample cells. Without a prior this is plain Shepard
    interpolation of the samples; without samples it is the prior.
    """
    prior = np.zeros(values.shape) if prior is None else np.asarray(prior, float)
    xs, ys = np.nonzero(mask)
    if len(xs) == 0:
        return prior.copy()
    resid = values[xs, ys] - prior[xs, ys]
    gx, gy = np.meshgrid(np.arange(values.shape[0]), np.arange(values.shape[1]), indexing="ij")
    d2 = (gx[..., None] - xs) ** 2 + (gy[..., None] - ys) ** 2
    w = 1.0 / np.maximum(d2, 1)
    fill = (w * resid).sum(-1) / w.sum(-1)
    out = prior + fill
    out[xs, ys] = values[xs, ys]
    return np.clip(out, 0.0, 1.0)


def make_conditioning(
    projected: ProjectedSet,
    buildings: np.ndarray,
    terrain: np.ndarray,
    target_h: int,
    grid: GridSpec,
) -> Conditioning:
    values, mask = sample_channels(projected, grid)
    prior = projected.prior if projected.prior is not None else np.zeros(values.shape)
    terrain_c = np.asarray(terrain, float) / TERRAIN_SCALE_M
    static = np.stack([guide_map(values, mask, prior), mask, buildings[:, :, target_h].astype(float), terrain_c, prior])
    route = np.stack([buildings[:, :, 0].astype(float), terrain_c])
    return Conditioning(static.astype(np.float32), route.astype(np.float32))
