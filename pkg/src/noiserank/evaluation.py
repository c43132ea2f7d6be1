"""Aggregate attack outcomes into effectiveness numbers and curve fits.

The per-example effectiveness ratio (successes over trials) pairs with each
sensitivity score to form (score, eff) points; those decay roughly like
a*exp(-b*x), so an ordinary least-squares fit on ln(eff) recovers the decay
rate. Comparing |b| across the three scores says which one predicts noise
sensitivity best.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attack import AttackOutcome, SampleCount
from .errors import (
    DegenerateX,
    EmptyInput,
    LengthMismatch,
    MissingMetric,
    NonPositiveBaseline,
    TooFewPoints,
    TooShort,
)
from .metrics import Metric

MARK_BEST = "Best"
MARK_MIDDLE = "Middle"
MARK_WORST = "Worst"

# Exhausted first-success counts contribute the cap to the mean, which biases
# against the ranked selection rather than for it.
CAP_POLICY = "cap-as-count"


@dataclass(frozen=True)
class EffPoint:
    """One example's sensitivity score paired with its attack success ratio."""

    score: float
    eff: float


@dataclass(frozen=True)
class ExpFit:
    """f(x) = a * exp(-b * x) fitted by least squares on ln(eff).

    ``r`` is the Pearson correlation of (score, ln eff), i.e. the quality of
    the linearized fit; ``excluded`` counts zero-eff points dropped before
    taking logs. ``log_a`` carries the fitted intercept exactly even when
    ``a`` itself overflows to inf on a degenerate fit.
    """

    a: float
    b: float
    r: float
    n_points: int
    excluded: int = 0
    log_a: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.log_a is None:
            object.__setattr__(self, "log_a", math.log(self.a))


@dataclass(frozen=True)
class FMeasureReport:
    """Mean number of samples needed for a first success, per method."""

    method: str
    mean_count: float
    exhausted_fraction: float
    cap: int
    policy: str = CAP_POLICY
    improvement_pct: float | None = None  # vs. a baseline method, when compared


def compute_eff(outcomes: Sequence[AttackOutcome]) -> float:
    """Fraction of trials that fooled the oracle, for one example."""
    if len(outcomes) == 0:
        raise EmptyInput("no outcomes")
    ids = {o.example_id for o in outcomes}
    if len(ids) != 1:
        raise ValueError(f"outcomes span multiple examples: {sorted(ids)}")
    return sum(o.success for o in outcomes) / len(outcomes)


def f_measure(counts: Sequence[SampleCount], cap: int, method: str = "") -> FMeasureReport:
    """Mean first-success count with exhausted entries contributing ``cap``."""
    if len(counts) == 0:
        raise EmptyInput("no counts")
    total = sum(cap if c.exhausted else c.count for c in counts)
    exhausted = sum(c.exhausted for c in counts)
    return FMeasureReport(
        method=method,
        mean_count=total / len(counts),
        exhausted_fraction=exhausted / len(counts),
        cap=cap,
    )


def improvement(baseline: float, candidate: float) -> float:
    """Percentage reduction of the candidate mean against the baseline mean."""
    if baseline <= 0:
        raise NonPositiveBaseline(f"baseline mean must be positive, got {baseline}")
    return (baseline - candidate) / baseline * 100.0


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float((xd * xd).sum()) * float((yd * yd).sum()))
    if denom == 0.0:
        return 0.0
    return float((xd * yd).sum()) / denom


def fit_exponential(points: Sequence[EffPoint]) -> ExpFit:
    """Least-squares fit of eff = a * exp(-b * score) via log-linearization.

    Points with eff <= 0 cannot be log-transformed; they are excluded and
    counted. Needs at least 3 surviving points and nonconstant scores.
    """
    kept = [(p.score, p.eff) for p in points if p.eff > 0.0]
    excluded = len(points) - len(kept)
    if len(kept) < 3:
        raise TooFewPoints(f"{len(kept)} usable points after excluding {excluded}; need 3")
    x = np.array([s for s, _ in kept], dtype=np.float64)
    z = np.log(np.array([e for _, e in kept], dtype=np.float64))
    x_var = float(((x - x.mean()) ** 2).sum())
    if x_var == 0.0:
        raise DegenerateX("all scores identical; cannot fit a decay rate")
    slope = float(((x - x.mean()) * (z - z.mean())).sum()) / x_var
    intercept = float(z.mean()) - slope * float(x.mean())
    try:
        amplitude = math.exp(intercept)
    except OverflowError:
        amplitude = math.inf
    return ExpFit(
        a=amplitude,
        b=-slope,
        r=_pearson(x, z),
        n_points=len(kept),
        excluded=excluded,
        log_a=intercept,
    )


def linearize(fit: ExpFit) -> tuple[float, float, float]:
    """Map the fit to z = slope*x + intercept; returns (slope, intercept, |slope|)."""
    return (-fit.b, fit.log_a, abs(fit.b))


def correlation_gate(fit: ExpFit, threshold: float = 0.95) -> bool:
    """Whether the linearized fit is tight enough to trust the decay rate."""
    return abs(fit.r) >= threshold


@dataclass(frozen=True)
class DecayComparison:
    marks: dict[Metric, str]
    tied: bool


def compare_decay_rates(fits: Mapping[Metric, ExpFit]) -> DecayComparison:
    """Mark each metric Best/Middle/Worst by descending |b|.

    Equal rates share the higher mark and set the ``tied`` flag.
    """
    required = {Metric.PD, Metric.PV, Metric.PE}
    present = {Metric(m) for m in fits}
    if present != required:
        raise MissingMetric(f"need fits for exactly {sorted(m.value for m in required)}, "
                            f"got {sorted(m.value for m in present)}")
    ordered = sorted(fits.items(), key=lambda kv: (-abs(kv[1].b), kv[0].value))
    position_marks = [MARK_BEST, MARK_MIDDLE, MARK_WORST]
    marks: dict[Metric, str] = {}
    tied = False
    group_start = 0
    for i, (metric, fit) in enumerate(ordered):
        if i > 0 and abs(fit.b) == abs(ordered[i - 1][1].b):
            tied = True
        else:
            group_start = i
        marks[Metric(metric)] = position_marks[group_start]
    return DecayComparison(marks=marks, tied=tied)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j < len(values) and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0
        i = j
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties; 0 when either side is constant."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"{x.shape[0]} xs vs {y.shape[0]} ys")
    if x.shape[0] < 3:
        raise TooShort("need at least 3 pairs")
    return _pearson(_average_ranks(x), _average_ranks(y))


# --- report files -------------------------------------------------------------

FIT_COLUMNS = ["metric", "a", "b", "r", "n_points", "excluded"]


def write_fit_csv(fits: Mapping[Metric, ExpFit], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIT_COLUMNS)
        for metric in sorted(fits, key=lambda m: m.value):
            fit = fits[metric]
            writer.writerow(
                [Metric(metric).value, repr(fit.a), repr(fit.b), repr(fit.r),
                 fit.n_points, fit.excluded]
            )


def curve_samples(fit: ExpFit, lo: float, hi: float, n: int = 100) -> list[tuple[float, float]]:
    """Evenly spaced points of the fitted curve for external plotting."""
    xs = np.linspace(lo, hi, n)
    # exponentiate from log_a so extreme fits still give finite curve values
    return [(float(x), float(np.exp(np.clip(fit.log_a - fit.b * x, -745.0, 709.0)))) for x in xs]


def write_plot_data(
    points: Sequence[EffPoint], fit: ExpFit | None, path: str | Path, n_curve: int = 100
) -> None:
    """Raw points plus sampled fit curve, tagged by a ``kind`` column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "x", "y"])
        for p in points:
            writer.writerow(["point", repr(p.score), repr(p.eff)])
        if fit is not None and points:
            lo = min(p.score for p in points)
            hi = max(p.score for p in points)
            for x, y in curve_samples(fit, lo, hi, n_curve):
                writer.writerow(["curve", repr(x), repr(y)])
