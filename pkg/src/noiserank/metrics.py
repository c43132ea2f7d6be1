"""Noise-sensitivity scores computed from softmax probability vectors.

Three scores summarise how concentrated a classifier's output distribution
is: the weighted sum of gaps between sorted probabilities (``pd``), the sum
of squared deviations from the uniform level (``pv``), and Shannon entropy
in nats (``pe``). Outputs close to uniform mark examples that small pixel
perturbations can push across a decision boundary.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NegativeEntry, NonFinite, SumOutOfTolerance, TooShort

# Wide enough to admit single-precision softmax outputs from external models.
SIMPLEX_TOLERANCE = 1e-6

# Entries below this are treated as exact zeros inside x*ln(x).
ZERO_FLOOR = 1e-300


class Metric(str, enum.Enum):
    """The three sensitivity scores; values double as CLI/CSV tokens."""

    PD = "pd"
    PV = "pv"
    PE = "pe"


@dataclass(frozen=True)
class ProbabilityVector:
    """A validated discrete distribution over n >= 2 class labels.

    Construct via :func:`validate_probability_vector`; the array is stored
    read-only so scores can be computed concurrently without copies.
    """

    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SensitivityScore:
    metric: Metric
    value: float


def validate_probability_vector(raw: Sequence[float]) -> ProbabilityVector:
    """Check simplex constraints and wrap ``raw`` as a ProbabilityVector.

    Raises TooShort (n < 2), NonFinite, NegativeEntry, or SumOutOfTolerance
    (|sum - 1| > 1e-6). The values themselves are never rescaled.
    """
    values = np.asarray(raw, dtype=np.float64)
    if values.ndim != 1:
        values = values.reshape(-1)
    if values.shape[0] < 2:
        raise TooShort(f"need at least 2 probabilities, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise NonFinite("probability vector contains NaN or infinite entries")
    if np.any(values < 0.0):
        raise NegativeEntry(f"negative probability: min={values.min()}")
    total = float(values.sum())
    if abs(total - 1.0) > SIMPLEX_TOLERANCE:
        raise SumOutOfTolerance(f"probabilities sum to {total}, not 1")
    values = values.copy()
    values.flags.writeable = False
    return ProbabilityVector(values)


def probability_difference(pv: ProbabilityVector) -> SensitivityScore:
    """Weighted sum of gaps between consecutive sorted probabilities.

    Sort descending and accumulate (p'_i - p'_{i+1}) / i for i = 1..n-1, so
    the gap below the top class dominates. 1.0 for a one-hot vector, 0.0 for
    uniform.
    """
    p = np.sort(pv.values)[::-1]
    gaps = p[:-1] - p[1:]
    value = float(np.sum(gaps / np.arange(1, pv.n, dtype=np.float64)))
    return SensitivityScore(Metric.PD, value)


def probability_variance(pv: ProbabilityVector) -> SensitivityScore:
    """Sum of squared deviations from the uniform level 1/n.

    Deliberately not divided by n: the raw sum ranges up to (n-1)/n and
    keeps the one-hot/uniform extremes at simple values.
    """
    mean = 1.0 / pv.n
    value = float(np.sum((pv.values - mean) ** 2))
    return SensitivityScore(Metric.PV, value)


def probability_entropy(pv: ProbabilityVector) -> SensitivityScore:
    """Shannon entropy -sum(p * ln p) in nats, with 0*ln(0) = 0."""
    p = pv.values[pv.values > ZERO_FLOOR]
    value = float(-np.sum(p * np.log(p)))
    # Entries may legitimately exceed 1 by up to the simplex tolerance,
    # which would push the sum fractionally below zero.
    return SensitivityScore(Metric.PE, max(0.0, value))


_SCORERS = {
    Metric.PD: probability_difference,
    Metric.PV: probability_variance,
    Metric.PE: probability_entropy,
}


def score(pv: ProbabilityVector, metric: Metric) -> SensitivityScore:
    return _SCORERS[Metric(metric)](pv)


def score_all(pv: ProbabilityVector) -> dict[Metric, SensitivityScore]:
    """All three scores for one vector, keyed by metric."""
    return {metric: scorer(pv) for metric, scorer in _SCORERS.items()}
