"""Turn per-example sensitivity scores into deterministic ranked lists.

Ranking is a stable sort on (score, example id); the random baseline is a
seeded sample without replacement. Both are pure so concurrent callers can
share inputs freely.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateId, EmptyInput, KTooLarge
from .metrics import Metric, SensitivityScore

# Recorded in output metadata so selections replay across platforms.
PRNG_NAME = "numpy-pcg64"


class RankDirection(str, enum.Enum):
    ASCENDING = "ascending"
    DESCENDING = "descending"


@dataclass(frozen=True)
class ScoredExample:
    example_id: int
    score: SensitivityScore


@dataclass(frozen=True)
class RankedList:
    metric: Metric
    direction: RankDirection
    entries: tuple[ScoredExample, ...]

    def ids(self) -> list[int]:
        return [e.example_id for e in self.entries]


def rank(scores: Sequence[ScoredExample], direction: RankDirection) -> RankedList:
    """Sort scored examples by value in ``direction``, ties by ascending id.

    Input order never matters: the sort key is (value, id), so reranking a
    ranked list reproduces it exactly.
    """
    if len(scores) == 0:
        raise EmptyInput("no scored examples to rank")
    ids = [s.example_id for s in scores]
    if len(set(ids)) != len(ids):
        raise DuplicateId("example ids must be unique within one scoring run")
    metrics = {s.score.metric for s in scores}
    if len(metrics) != 1:
        raise ValueError(f"cannot rank across mixed metrics: {sorted(m.value for m in metrics)}")
    direction = RankDirection(direction)
    if direction is RankDirection.ASCENDING:
        key = lambda s: (s.score.value, s.example_id)
    else:
        key = lambda s: (-s.score.value, s.example_id)
    return RankedList(
        metric=next(iter(metrics)),
        direction=direction,
        entries=tuple(sorted(scores, key=key)),
    )


def default_direction(metric: Metric) -> RankDirection:
    """Direction that puts the most noise-sensitive examples first.

    Attack effectiveness decays as any of the three scores grows, so low
    scores come first for all of them. Overridable per run configuration.
    """
    Metric(metric)
    return RankDirection.ASCENDING


def select_top(ranked: RankedList, k: int) -> list[int]:
    """First ``k`` example ids in rank order."""
    if k < 1 or k > len(ranked.entries):
        raise KTooLarge(f"k={k} outside [1, {len(ranked.entries)}]")
    return ranked.ids()[:k]


def random_select(ids: Sequence[int], k: int, seed: int) -> list[int]:
    """Uniform sample of ``k`` ids without replacement, determined by ``seed``."""
    if k < 1 or k > len(ids):
        raise KTooLarge(f"k={k} outside [1, {len(ids)}]")
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(len(ids), size=k, replace=False)
    return [int(ids[i]) for i in chosen]


def write_ranked_csv(ranked: RankedList, path: str | Path) -> None:
    """Serialize as ``rank,example_id,metric,score`` rows (rank is 1-based)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "example_id", "metric", "score"])
        for position, entry in enumerate(ranked.entries, start=1):
            writer.writerow([position, entry.example_id, ranked.metric.value, repr(entry.score.value)])


def read_ranked_csv(path: str | Path) -> RankedList:
    """Reload a ranked CSV; direction is inferred from the score ordering."""
    entries: list[ScoredExample] = []
    metric: Metric | None = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            metric = Metric(row["metric"])
            entries.append(
                ScoredExample(int(row["example_id"]), SensitivityScore(metric, float(row["score"])))
            )
    if metric is None:
        raise EmptyInput(f"no rows in {path}")
    values = [e.score.value for e in entries]
    direction = RankDirection.ASCENDING if values == sorted(values) else RankDirection.DESCENDING
    return RankedList(metric=metric, direction=direction, entries=tuple(entries))
