"""Candidate election and the test-time noise controller."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import ProjectedSet
from .scene import SampleSet


@dataclass(frozen=True)
class NoiseCtlState:
    sigma_t: float = 0.05
    delta_sigma: float = 0.05
    sigma_max: float = 0.3
    var_threshold: float = 1.0

    def __post_init__(self):
        if not 0 < self.sigma_t <= self.sigma_max:
            raise ValueError(f"sigma_t must lie in (0, sigma_max], got {self.sigma_t}")
        if not self.delta_sigma > 0 or not self.var_threshold > 0:
            raise ValueError("delta_sigma and var_threshold must be positive")


@dataclass
class ElectionReport:
    distances: list[float]
    winner_index: int
    variance: float
    updated_sigma: float | None = None
    sigma_trace: list[float] = field(default_factory=list)
    variance_trace: list[float] = field(default_factory=list)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


def election_distance(candidate: np.ndarray, projected: ProjectedSet, samples: SampleSet) -> float:
    """Squared disagreement between a candidate and the projected sample values.

    Dropped projections take the candidate's own value and add nothing.
    """
    if len(projected) != len(samples):
        raise ValueError("projected set must cover every sample")
    kept = projected.kept()
    if not kept:
        return 0.0
    xs = np.array([e.x for e in kept])
    ys = np.array([e.y for e in kept])
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= candidate.shape[0] or ys.max() >= candidate.shape[1]:
        raise IndexError("projected sample outside candidate bounds")
    r_hat = np.array([e.rss_hat for e in kept])
    return float(((np.asarray(candidate, float)[xs, ys] - r_hat) ** 2).sum())


def select_best(candidates, projected: ProjectedSet, samples: SampleSet):
    """Winner map and report; ties go to the lowest index."""
    maps = getattr(candidates, "candidates", candidates)
    if len(maps) == 0:
        raise ValueError("empty candidate set")
    d = np.array([election_distance(m, projected, samples) for m in maps])
    winner = int(np.argmin(d))
    return maps[winner], ElectionReport(d.tolist(), winner, float(d.var()))


_TINY = float(np.nextafter(0.0, 1.0))


def update_noise(state: NoiseCtlState, variance: float) -> NoiseCtlState:
    if variance < state.var_threshold:
        sigma = min(state.sigma_t + state.delta_sigma, state.sigma_max)
    else:
        # floor at the smallest subnormal so repeated halving stays positive
        sigma = max(state.sigma_t / 2.0, _TINY)
    return replace(state, sigma_t=sigma)


def calibrate_threshold(variances) -> float:
    """Median candidate-distance variance over a calibration batch."""
    v = float(np.median(np.asarray(variances, float)))
    return v if v > 0 else np.finfo(float).tiny


def run_election_loop(
    moe,
    cond,
    projected: ProjectedSet,
    samples: SampleSet,
    M: int = 16,
    rounds: int = 1,
    init_state: NoiseCtlState | None = None,
    seed: int = 0,
    steps: int = 10,
):
    """Generate, score and adapt the noise scale for ``rounds`` rounds.

    Returns the best map over all rounds and a report whose traces hold the
    sigma used and the distance variance of every round.
    """
    from .generation import generate_candidates

    if rounds < 1:
        raise ValueError("need at least one round")
    state = init_state or NoiseCtlState()
    best_map, best_d = None, np.inf
    report = None
    sigmas, variances, best_trace = [], [], []
    for r in range(rounds):
        cands = generate_candidates(moe, cond, M, seed=seed + r, noise_state=state, steps=steps)
        winner, rep = select_best(cands, projected, samples)
        sigmas.append(state.sigma_t)
        variances.append(rep.variance)
        if rep.distances[rep.winner_index] < best_d:
            best_d = rep.distances[rep.winner_index]
            best_map = winner
            report = rep
        best_trace.append(best_d)
        state = update_noise(state, rep.variance)
    report.updated_sigma = state.sigma_t
    report.sigma_trace = sigmas
    report.variance_trace = variances
    return best_map, report, best_trace
