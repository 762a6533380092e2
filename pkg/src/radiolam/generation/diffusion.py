"""Noise schedule, forward diffusion and the deterministic DDIM reverse pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch


@dataclass(frozen=True)
class DiffusionSchedule:
    t_max: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_1: float
    beta_T: float

    def to_dict(self) -> dict:
        return {"t_max": self.t_max, "beta_1": self.beta_1, "beta_T": self.beta_T}


def make_schedule(t_max: int = 200, beta_1: float = 1e-4, beta_T: float = 0.02) -> DiffusionSchedule:
    """Linear beta schedule."""
    if t_max < 2:
        raise ValueError("t_max must be at least 2")
    if not 0 < beta_1 < beta_T < 1:
        raise ValueError(f"need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_T}")
    betas = np.linspace(beta_1, beta_T, t_max)
    alphas = 1.0 - betas
    return DiffusionSchedule(t_max, betas, alphas, np.cumprod(alphas), float(beta_1), float(beta_T))


def forward_diffuse(x0, t, eps, schedule: DiffusionSchedule):
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``; ``t`` may be a batch of steps."""
    t_arr = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t)
    if np.any(t_arr < 0) or np.any(t_arr >= schedule.t_max):
        raise ValueError(f"timestep out of range [0, {schedule.t_max})")
    abar = schedule.alpha_bars[t_arr]
    a, b = np.sqrt(abar), np.sqrt(1.0 - abar)
    if isinstance(x0, torch.Tensor):
        shape = (-1,) + (1,) * (x0.dim() - 1) if np.ndim(a) else ()
        a = torch.as_tensor(a, dtype=x0.dtype).reshape(shape)
        b = torch.as_tensor(b, dtype=x0.dtype).reshape(shape)
        return a * x0 + b * eps
    if np.ndim(a):
        shape = (-1,) + (1,) * (np.ndim(x0) - 1)
        a, b = a.reshape(shape), b.reshape(shape)
    return a * np.asarray(x0) + b * np.asarray(eps)


def ddim_timesteps(t_max: int, steps: int) -> np.ndarray:
    if not 1 <= steps <= t_max:
        raise ValueError(f"steps must lie in [1, {t_max}], got {steps}")
    return np.unique(np.round(np.linspace(0, t_max - 1, steps)).astype(int))[::-1]


@torch.no_grad()
def ddim_reverse(
    eps_fn: Callable[[torch.Tensor, int], torch.Tensor],
    x_start: torch.Tensor,
    schedule: DiffusionSchedule,
    steps: int,
    clip: bool = True,
) -> torch.Tensor:
    """Deterministic DDIM (eta = 0) from ``x_start`` at the top strided step.

    Returns the clean-map estimate from the final (t = 0) step.
    """
    ts = ddim_timesteps(schedule.t_max, steps)
    abar = schedule.alpha_bars
    x = x_start
    x0 = x
    for i, t in enumerate(ts):
        eps = eps_fn(x, int(t))
        a_t = float(abar[t])
        x0 = (x - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
        if clip:
            x0 = x0.clamp(0.0, 1.0)
        if i + 1 < len(ts):
            a_next = float(abar[ts[i + 1]])
            x = np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps
    return x0
