"""Map-quality metrics."""

from __future__ import annotations

import numpy as np


def _pair(truth, est):
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(est, dtype=float)
    if truth.shape != est.shape:
        raise ValueError(f"dimension mismatch: {truth.shape} vs {est.shape}")
    return truth, est


def mae(truth, est) -> float:
    truth, est = _pair(truth, est)
    return float(np.abs(truth - est).mean())


def mse(truth, est) -> float:
    truth, est = _pair(truth, est)
    return float(((truth - est) ** 2).mean())


def psnr(truth, est) -> float:
    """``20 log10(MAX_I / sqrt(MSE))`` with ``MAX_I`` the peak of the truth map.

    Returns ``inf`` for a perfect estimate.
    """
    err = mse(truth, est)
    if err == 0.0:
        return float("inf")
    return float(20.0 * np.log10(np.max(truth) / np.sqrt(err)))
