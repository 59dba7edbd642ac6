"""Confidence- and importance-weighted aggregation of per-type ratings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import SumassessError


class DegenerateWeightsError(SumassessError):
    """Every confidence-importance weight is zero, so the weighted mean is undefined."""


@dataclass(frozen=True)
class WeightedRating:
    """One error type's contribution: 0-5 rating, scaled confidence, importance weight."""

    rating: int
    confidence: float
    importance: float

    def __post_init__(self) -> None:
        if not 0 <= self.rating <= 5:
            raise ValueError(f"rating must be in 0..5, got {self.rating}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if not self.importance > 0:
            raise ValueError(f"importance must be > 0, got {self.importance}")


def scale_confidence(raw: int) -> float:
    """Map a 0-10 confidence to [0, 1]."""
    if not isinstance(raw, int) or isinstance(raw, bool) or not 0 <= raw <= 10:
        raise ValueError(f"raw confidence must be an integer in 0..10, got {raw!r}")
    return raw / 10.0


def impact_score(entries: Iterable[WeightedRating]) -> float:
    """Weighted mean of the ratings, weights = confidence * importance.

    Ranges over error types; the result lies between the smallest and largest
    rating and in [0, 5] overall.
    """
    entries = list(entries)
    if not entries:
        raise DegenerateWeightsError("impact_score needs at least one entry")
    numerator = 0.0
    denominator = 0.0
    for entry in entries:
        weight = entry.confidence * entry.importance
        numerator += entry.rating * weight
        denominator += weight
    if denominator <= 0.0:
        raise DegenerateWeightsError("all confidence * importance weights are zero")
    # mathematically bounded by the rating range; clamp float roundoff
    return min(5.0, max(0.0, numerator / denominator))


def quality_score(impact: float) -> float:
    """Affine rescaling of impact to a 1-10 quality score, higher is better.

    quality = 1 + ((5 - impact) / 5) * 9, so impact 0 maps to 10 and impact 5
    maps to 1.
    """
    if not 0.0 <= impact <= 5.0:
        raise ValueError(f"impact must be in [0, 5], got {impact}")
    return 1.0 + ((5.0 - impact) / 5.0) * 9.0
