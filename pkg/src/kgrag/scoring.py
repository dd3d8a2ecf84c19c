"""Trajectory scoring from milestone-count logits.

The LLM is asked how many of an intent's ``m`` milestones a trajectory
completes; the logits of the answers "0".."m" become a distribution. Its
argmax count (with the peak probability) is the progress score, and the
proximity score measures how the distribution's rank order lines up with
``[n-1, ..., 0]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, LengthMismatch, RangeError
from .providers import LogitVector

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SoftmaxParams:
    start_ind: int
    end_ind: int
    temperature: float = 1.0


@dataclass(frozen=True)
class ProbabilityDistribution:
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if not probs:
            raise ValueError("distribution must be non-empty")
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(math.fsum(probs) - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {math.fsum(probs)!r}, not 1")

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class TrajectoryScore:
    progress_count: int
    progress_prob: float
    proximity: float
    distribution: ProbabilityDistribution

    @property
    def milestones(self) -> int:
        return len(self.distribution) - 1

    def to_dict(self) -> dict:
        return {
            "progress_count": self.progress_count,
            "progress_prob": self.progress_prob,
            "proximity": self.proximity,
            "distribution": list(self.distribution.probs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryScore":
        return cls(int(d["progress_count"]), float(d["progress_prob"]), float(d["proximity"]),
                   ProbabilityDistribution(tuple(d["distribution"])))


def softmax_slice(x: Sequence[float], p: SoftmaxParams) -> ProbabilityDistribution:
    """Temperature softmax over ``x[start_ind:end_ind]``.

    The maximum is subtracted before exponentiating, so large logits do not
    overflow and the result is invariant to a constant shift.
    """
    if not p.temperature > 0:
        raise DomainError(f"temperature must be positive, got {p.temperature}")
    if not 0 <= p.start_ind < p.end_ind <= len(x):
        raise RangeError(f"slice [{p.start_ind}, {p.end_ind}) invalid for {len(x)} logits")
    z = np.asarray(x[p.start_ind:p.end_ind], dtype=float) / p.temperature
    z = np.exp(z - z.max())
    probs = z / z.sum()
    return ProbabilityDistribution(tuple(probs.tolist()))


def ranked_indices(probs: Sequence[float]) -> list[int]:
    """Indices by descending probability; equal values keep index order."""
    return sorted(range(len(probs)), key=lambda i: -probs[i])


def proximity_score(pdf: ProbabilityDistribution) -> float:
    """``-sum_i (ideal[i] - ranked[i])**2`` with ``ideal = [n-1, ..., 0]``.

    Note the maximum (0) is reached when probability grows with the index,
    i.e. when mass concentrates on completing more milestones.
    """
    n = len(pdf.probs)
    ranked = ranked_indices(pdf.probs)
    ideal = list(range(n - 1, -1, -1))
    return -float(sum((ideal[i] - ranked[i]) ** 2 for i in range(n)))


def trajectory_score(logits: LogitVector | Sequence[float], m: int,
                     temperature: float = 1.0) -> TrajectoryScore:
    values = logits.values if isinstance(logits, LogitVector) else tuple(logits)
    if len(values) != m + 1:
        raise LengthMismatch(f"expected {m + 1} logits for {m} milestones, got {len(values)}")
    dist = softmax_slice(values, SoftmaxParams(0, m + 1, temperature))
    probs = dist.probs
    best = max(probs)
    count = probs.index(best)  # first occurrence: ties go to the lower count
    return TrajectoryScore(count, best, proximity_score(dist), dist)


def rank_key(score: TrajectoryScore, length: int, path_id: str) -> tuple:
    """Ascending sort key: better trajectories sort first."""
    return (-score.progress_count, -score.progress_prob, -score.proximity, length, path_id)


def compare(a: tuple[TrajectoryScore, int, str], b: tuple[TrajectoryScore, int, str]) -> int:
    """Three-way comparison of ``(score, path length, path id)`` triples.

    Negative when ``a`` ranks ahead of ``b``. Keys in priority order:
    milestone count, peak probability, proximity (all higher first), then
    shorter path, then path id.
    """
    ka, kb = rank_key(*a), rank_key(*b)
    return (ka > kb) - (ka < kb)
