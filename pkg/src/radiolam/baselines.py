"""3D interpolation baselines: Gaussian RBF and ordinary kriging.

Distances are in cell units; heights above ground are converted with the
grid's cell size and treated isotropically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist, pdist

from .scene import SampleSet


def plane_points(grid, h_t: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(grid.x_dim), np.arange(grid.y_dim), indexing="ij")
    z = np.full(xs.size, grid.heights_m[h_t] / grid.cell_size_m)
    return np.column_stack([xs.ravel(), ys.ravel(), z]).astype(float)


# ---------------------------------------------------------------------------
# RBF


def default_rbf_width(coords: np.ndarray, grid) -> float:
    """Mean nearest-neighbour spacing of the samples (grid diagonal / 4 for one sample)."""
    if len(coords) < 2:
        z = grid.heights_m[-1] / grid.cell_size_m
        return float(np.sqrt(grid.x_dim**2 + grid.y_dim**2 + z**2) / 4.0)
    d = cdist(coords, coords)
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def rbf_weights(coords: np.ndarray, values: np.ndarray, width: float, ridge: float = 1e-8) -> np.ndarray:
    eps = 1.0 / (2.0 * width**2)
    A = np.exp(-eps * cdist(coords, coords, "sqeuclidean")) + ridge * np.eye(len(coords))
    return np.linalg.solve(A, values)


def rbf_eval(points: np.ndarray, coords: np.ndarray, weights: np.ndarray, width: float) -> np.ndarray:
    eps = 1.0 / (2.0 * width**2)
    return np.exp(-eps * cdist(points, coords, "sqeuclidean")) @ weights


def rbf3d_estimate(samples: SampleSet, h_t: int, width: float | None = None) -> np.ndarray:
    if len(samples) == 0:
        raise ValueError("RBF needs at least one sample")
    grid = samples.grid
    coords = samples.coords()
    width = width or default_rbf_width(coords, grid)
    w = rbf_weights(coords, samples.rss, width)
    est = rbf_eval(plane_points(grid, h_t), coords, w, width)
    return np.clip(est, 0.0, 1.0).reshape(grid.x_dim, grid.y_dim)


# ---------------------------------------------------------------------------
# kriging


@dataclass(frozen=True)
class VariogramModel:
    kind: str = "exponential"
    nugget: float = 0.0
    sill: float = 1.0
    range_cells: float = 10.0

    def __post_init__(self):
        if self.kind not in ("spherical", "exponential"):
            raise ValueError(f"unknown variogram kind {self.kind!r}")
        if self.nugget < 0 or not self.sill > self.nugget or not self.range_cells > 0:
            raise ValueError("need nugget >= 0, sill > nugget, range > 0")

    def __call__(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return _variogram(self.kind, h, self.nugget, self.sill, self.range_cells)


def _variogram(kind, h, nugget, sill, rng):
    psill = sill - nugget
    if kind == "exponential":
        g = nugget + psill * (1.0 - np.exp(-3.0 * h / rng))
    else:
        r = np.minimum(h / rng, 1.0)
        g = nugget + psill * (1.5 * r - 0.5 * r**3)
    return np.where(h > 0, g, 0.0)


def empirical_variogram(coords: np.ndarray, values: np.ndarray, n_bins: int = 12):
    """Binned semivariance; returns (bin centers, semivariance, pair counts) of non-empty bins."""
    lags = pdist(coords)
    semi = 0.5 * pdist(values[:, None], "sqeuclidean")
    edges = np.linspace(0.0, lags.max() * (1 + 1e-9), n_bins + 1)
    which = np.clip(np.digitize(lags, edges) - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    sums = np.bincount(which, semi, minlength=n_bins)
    lag_sums = np.bincount(which, lags, minlength=n_bins)
    keep = counts > 0
    return lag_sums[keep] / counts[keep], sums[keep] / counts[keep], counts[keep]


def fit_variogram(coords: np.ndarray, values: np.ndarray, kind: str = "exponential", n_bins: int = 12) -> VariogramModel:
    """Least-squares fit of (nugget, sill, range) to the empirical semivariogram."""
    lag, gamma, counts = empirical_variogram(coords, values, n_bins)
    top = float(max(gamma.max(), np.var(values), 1e-12))
    max_lag = float(lag.max())

    def resid(p):
        nugget, psill, rng = p
        return np.sqrt(counts) * (_variogram(kind, lag, nugget, nugget + psill, rng) - gamma)

    x0 = [0.0, top, max_lag / 2]
    fit = least_squares(resid, x0, bounds=([0.0, 1e-12, 1e-3], [top, 10 * top, 10 * max_lag]))
    nugget, psill, rng = fit.x
    return VariogramModel(kind, float(nugget), float(nugget + psill), float(rng))


def kriging_system(coords: np.ndarray, vg: VariogramModel) -> np.ndarray:
    k = len(coords)
    A = np.ones((k + 1, k + 1))
    A[:k, :k] = vg(cdist(coords, coords))
    A[k, k] = 0.0
    return A


def kriging_weights(coords: np.ndarray, targets: np.ndarray, vg: VariogramModel) -> np.ndarray:
    """Ordinary-kriging weights, shape ``(n_targets, k)``; rows sum to one."""
    coords = np.atleast_2d(coords)
    targets = np.atleast_2d(targets)
    k = len(coords)
    A = kriging_system(coords, vg)
    b = np.ones((k + 1, len(targets)))
    b[:k] = vg(cdist(coords, targets))
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * max(1.0, np.abs(A[:k, :k]).max())
        A[:k, :k] += ridge * np.eye(k)
        sol = np.linalg.solve(A, b)
    return sol[:k].T


def kriging3d_estimate(samples: SampleSet, h_t: int, vg: VariogramModel | None = None, kind: str = "exponential") -> np.ndarray:
    if len(samples) < 2:
        raise ValueError("kriging needs at least two samples")
    grid = samples.grid
    coords = samples.coords()
    values = samples.rss
    if vg is None:
        vg = fit_variogram(coords, values, kind) if np.ptp(values) > 0 else VariogramModel(kind, 0.0, 1.0, 10.0)
    w = kriging_weights(coords, plane_points(grid, h_t), vg)
    return np.clip(w @ values, 0.0, 1.0).reshape(grid.x_dim, grid.y_dim)
