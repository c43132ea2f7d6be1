"""2x2-block perturbation attacks driven by oracle queries.

Two generators share one perturbation type: a seeded random flip that
inverts the four pixels of a random block, and a bound-constrained
differential-evolution search over (x, y, per-channel fill values) that
minimizes the oracle's probability for the true label. An attack succeeds
when the perturbed image's argmax no longer matches the true label.

Attacks on distinct examples are independent; derive each example's seed as
``seed ^ example_id`` (or via :mod:`noiserank.seeds`) and results stay
identical regardless of scheduling.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .dataset import Example
from .errors import AnchorOutOfBounds, EmptyInput, ImageTooSmall
from .metrics import ProbabilityVector

BLOCK = 2  # edge length of the perturbed pixel block


@dataclass(frozen=True)
class Perturbation:
    """Replacement values for one 2x2 block anchored at (x, y) top-left.

    ``replacement`` is either (c,) — one fill value per channel for the whole
    block, the differential-evolution encoding — or (2, 2, c) per-pixel
    values, produced by the random flip.
    """

    x: int
    y: int
    replacement: np.ndarray


@dataclass(frozen=True)
class DeParams:
    population_size: int = 50
    differential_weight: float = 0.5
    crossover_rate: float = 0.9
    max_generations: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population_size must be >= 4")
        if not 0.0 < self.differential_weight <= 2.0:
            raise ValueError("differential_weight must lie in (0, 2]")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in [0, 1]")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")


@dataclass(frozen=True)
class AttackOutcome:
    example_id: int
    trial_index: int
    perturbation: Perturbation
    success: bool
    predicted_label: int
    true_label_prob_after: float
    oracle_queries: int


@dataclass(frozen=True)
class SampleCount:
    """1-based count of samples generated up to the first success.

    ``exhausted`` means no sample succeeded within the cap; ``count`` then
    equals the cap so means can treat it conservatively.
    """

    count: int
    exhausted: bool


def apply_perturbation(ex: Example, p: Perturbation) -> np.ndarray:
    """Copy of the example's pixels with the block replaced, clamped to [0, 1]."""
    h, w, c = ex.pixels.shape
    if not (0 <= p.x <= w - BLOCK and 0 <= p.y <= h - BLOCK):
        raise AnchorOutOfBounds(f"anchor ({p.x}, {p.y}) outside {w}x{h} image")
    out = ex.pixels.copy()
    block = np.broadcast_to(np.asarray(p.replacement, dtype=np.float64), (BLOCK, BLOCK, c))
    out[p.y : p.y + BLOCK, p.x : p.x + BLOCK, :] = np.clip(block, 0.0, 1.0)
    return out


def random_block_flip(ex: Example, rng: np.random.Generator) -> Perturbation:
    """Pick a uniform anchor and invert each of the four pixels (v -> 1 - v)."""
    h, w, c = ex.pixels.shape
    if h < BLOCK or w < BLOCK:
        raise ImageTooSmall(f"image {w}x{h} smaller than the {BLOCK}x{BLOCK} block")
    x = int(rng.integers(0, w - BLOCK + 1))
    y = int(rng.integers(0, h - BLOCK + 1))
    replacement = 1.0 - ex.pixels[y : y + BLOCK, x : x + BLOCK, :]
    return Perturbation(x=x, y=y, replacement=replacement)


def _outcome(ex, trial, pert, probs: ProbabilityVector, queries) -> AttackOutcome:
    predicted = int(np.argmax(probs.values))
    return AttackOutcome(
        example_id=ex.id,
        trial_index=trial,
        perturbation=pert,
        success=predicted != ex.true_label,
        predicted_label=predicted,
        true_label_prob_after=float(probs.values[ex.true_label]),
        oracle_queries=queries,
    )


def random_attack(ex: Example, oracle, m: int, seed: int) -> list[AttackOutcome]:
    """``m`` independent random flips, each queried once, in trial order."""
    if m < 1:
        raise EmptyInput("need at least one trial")
    rng = np.random.Generator(np.random.PCG64(seed))
    outcomes = []
    for trial in range(m):
        pert = random_block_flip(ex, rng)
        probs = oracle.predict(apply_perturbation(ex, pert))
        outcomes.append(_outcome(ex, trial, pert, probs, queries=1))
    return outcomes


def _decode(vector: np.ndarray, shape: tuple[int, int, int]) -> Perturbation:
    """Round coordinates to the grid; fill values stay continuous in [0, 1]."""
    h, w, _ = shape
    x = int(np.clip(round(float(vector[0])), 0, w - BLOCK))
    y = int(np.clip(round(float(vector[1])), 0, h - BLOCK))
    return Perturbation(x=x, y=y, replacement=np.clip(vector[2:], 0.0, 1.0))


def _de_evaluations(
    ex: Example, oracle, params: DeParams, rng: np.random.Generator
) -> Iterator[tuple[Perturbation, ProbabilityVector]]:
    """Yield every candidate evaluation of one rand/1/bin DE run.

    Candidates are (x, y, v_1..v_c); fitness is the oracle's probability for
    the true label (minimized). Selection is greedy against each member's
    stored fitness, so a full run costs population * (generations + 1)
    evaluations.
    """
    h, w, c = ex.pixels.shape
    if h < BLOCK or w < BLOCK:
        raise ImageTooSmall(f"image {w}x{h} smaller than the {BLOCK}x{BLOCK} block")
    lower = np.array([0.0, 0.0] + [0.0] * c)
    upper = np.array([float(w - BLOCK), float(h - BLOCK)] + [1.0] * c)
    dim = 2 + c
    pop_size = params.population_size

    population = rng.uniform(lower, upper, size=(pop_size, dim))
    fitness = np.empty(pop_size)
    for i in range(pop_size):
        pert = _decode(population[i], ex.pixels.shape)
        probs = oracle.predict(apply_perturbation(ex, pert))
        fitness[i] = probs.values[ex.true_label]
        yield pert, probs

    for _ in range(params.max_generations):
        for i in range(pop_size):
            others = [j for j in range(pop_size) if j != i]
            a, b, c_ = rng.choice(others, size=3, replace=False)
            mutant = population[a] + params.differential_weight * (
                population[b] - population[c_]
            )
            forced = int(rng.integers(dim))
            cross = rng.random(dim) < params.crossover_rate
            cross[forced] = True
            trial = np.where(cross, mutant, population[i])
            np.clip(trial, lower, upper, out=trial)

            pert = _decode(trial, ex.pixels.shape)
            probs = oracle.predict(apply_perturbation(ex, pert))
            trial_fitness = probs.values[ex.true_label]
            yield pert, probs
            if trial_fitness <= fitness[i]:
                population[i] = trial
                fitness[i] = trial_fitness


def de_attack(ex: Example, oracle, params: DeParams | None = None) -> AttackOutcome:
    """Differential-evolution search for a misclassifying block.

    Stops at the first candidate whose argmax leaves the true label;
    otherwise returns the lowest-probability candidate found within the
    generation budget. ``oracle_queries`` counts every evaluation.
    """
    params = params or DeParams()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    queries = 0
    best: tuple[float, Perturbation, ProbabilityVector] | None = None
    for pert, probs in _de_evaluations(ex, oracle, params, rng):
        queries += 1
        if int(np.argmax(probs.values)) != ex.true_label:
            return _outcome(ex, 0, pert, probs, queries)
        true_prob = float(probs.values[ex.true_label])
        if best is None or true_prob < best[0]:
            best = (true_prob, pert, probs)
    assert best is not None
    return _outcome(ex, 0, best[1], best[2], queries)


def first_success_count(
    ex: Example,
    oracle,
    generator: str,
    cap: int,
    seed: int,
    de_params: DeParams | None = None,
) -> SampleCount:
    """Samples generated until the first success, capped at ``cap``.

    Every random trial or DE candidate evaluation counts as one sample, which
    keeps the two generators comparable per oracle query. DE runs restart
    with fresh derived seeds until the cap is spent.
    """
    if cap < 1:
        raise EmptyInput("cap must be >= 1")
    if generator == "random":
        rng = np.random.Generator(np.random.PCG64(seed))
        for count in range(1, cap + 1):
            pert = random_block_flip(ex, rng)
            probs = oracle.predict(apply_perturbation(ex, pert))
            if int(np.argmax(probs.values)) != ex.true_label:
                return SampleCount(count, exhausted=False)
        return SampleCount(cap, exhausted=True)
    if generator == "de":
        params = de_params or DeParams()
        count = 0
        run = 0
        while count < cap:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, run))))
            for pert, probs in _de_evaluations(ex, oracle, params, rng):
                count += 1
                if int(np.argmax(probs.values)) != ex.true_label:
                    return SampleCount(count, exhausted=False)
                if count >= cap:
                    return SampleCount(cap, exhausted=True)
            run += 1
        return SampleCount(cap, exhausted=True)
    raise ValueError(f"unknown generator {generator!r}; use 'random' or 'de'")


ATTACK_LOG_COLUMNS = ["example_id", "trial", "success", "pred_label",
                      "true_prob_after", "queries", "x", "y"]


def write_attack_log(outcomes: Iterable[AttackOutcome], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ATTACK_LOG_COLUMNS)
        for o in outcomes:
            writer.writerow(
                [o.example_id, o.trial_index, int(o.success), o.predicted_label,
                 repr(o.true_label_prob_after), o.oracle_queries,
                 o.perturbation.x, o.perturbation.y]
            )


def read_attack_log(path: str | Path) -> list[dict]:
    """Rows as dicts with numeric fields parsed; perturbations are not rebuilt."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "example_id": int(row["example_id"]),
                    "trial": int(row["trial"]),
                    "success": bool(int(row["success"])),
                    "pred_label": int(row["pred_label"]),
                    "true_prob_after": float(row["true_prob_after"]),
                    "queries": int(row["queries"]),
                    "x": int(row["x"]),
                    "y": int(row["y"]),
                }
            )
    return rows
