"""End-to-end run orchestration: configuration, stages, manifest.

A run is fully determined by (config, master seed). Stage outputs are plain
CSV/JSON files under one output directory; a completed stage leaves a marker
keyed by the config hash so reruns skip it unless forced. The manifest
records everything needed to reproduce any file, with wall-clock data kept
under a single ``volatile`` key so two runs of the same config can be
compared byte-for-byte everywhere else.
"""
from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .attack import (
    DeParams,
    SampleCount,
    de_attack,
    first_success_count,
    random_attack,
    read_attack_log,
)
from .dataset import Dataset, Example, load_csv, load_idx, partition, subset, synthetic_patterns
from .errors import ConfigError, KTooLarge, NoiseRankError, TooFewPoints
from .evaluation import (
    EffPoint,
    ExpFit,
    compare_decay_rates,
    correlation_gate,
    f_measure,
    fit_exponential,
    improvement,
    spearman,
    write_fit_csv,
    write_plot_data,
)
from .metrics import Metric, SensitivityScore, score_all, validate_probability_vector
from .oracle import (
    BuiltinOracle,
    ExternalOracle,
    MlpConfig,
    TableOracle,
    TrainingConfig,
    accuracy,
    load_weights,
    probabilities_for_example,
    save_weights,
    train_mlp,
    training_preset,
)
from .prioritizer import (
    PRNG_NAME,
    RankDirection,
    RankedList,
    ScoredExample,
    default_direction,
    random_select,
    rank,
    select_top,
    write_ranked_csv,
)
from .seeds import DERIVATION, derive_seed

STAGES = ["train", "score", "rank", "attack", "evaluate", "compare"]

DEFAULT_CONFIG: dict[str, Any] = {
    "dataset": {
        "kind": "synthetic",  # synthetic | idx | csv
        "images": None,
        "labels": None,
        "train_images": None,
        "train_labels": None,
        "path": None,
        "shape": [28, 28, 1],
        "n_classes": 10,
        "train_size": 2000,
        "heldout_size": 500,
        "score_size": 300,
        "pool_size": None,  # default: 2 * score_size
        # The training distribution is bold and nearly clean so the 80-step
        # SGD budget converges; the scoring pool sweeps the faint-intensity
        # axis, which spreads model confidence smoothly for the experiments.
        "synthetic": {
            "train": {"ambiguity": 0.15, "noise": 0.08, "intensity": [0.55, 1.0]},
            "pool": {"ambiguity": 0.0, "noise": 0.0, "intensity": [0.03, 0.18]},
        },
    },
    "oracle": {
        "kind": "builtin",  # builtin | table | external
        "weights": None,  # load these instead of training
        "table": None,
        "command": None,
        "timeout_s": 30.0,
        "hidden": [128],
        # epochs=None means "the preset's count, or 20 without a preset"; an
        # explicit value reduces (or extends) either source.
        "training": {
            "preset": None,
            "learning_rate": 0.1,
            "batch_size": 512,
            "epochs": None,
        },
    },
    "metrics": ["pd", "pe", "pv"],
    "directions": {},  # per-metric override of the ascending default
    "attack": {
        "kind": "random",  # random | de
        "trials": 50,
        "cap": 200,
        "de": {
            "population_size": 50,
            "differential_weight": 0.5,
            "crossover_rate": 0.9,
            "max_generations": 30,
        },
    },
    "selection": {"top_k": 100, "random_k": 100},
    "evaluation": {"correlation_threshold": 0.95},
    "seed": 0,
    "workers": None,  # None: one worker per processor
    "repeats": 1,
}

OUTPUT_ROOT_ENV = "NOISERANK_OUT"


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Merge defaults <- config file <- overrides and validate the result."""
    cfg = DEFAULT_CONFIG
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    ds = cfg["dataset"]
    if ds["kind"] not in ("synthetic", "idx", "csv"):
        raise ConfigError(f"dataset.kind {ds['kind']!r} not one of synthetic|idx|csv")
    if ds["kind"] == "idx":
        for key in ("images", "labels"):
            if not ds.get(key):
                raise ConfigError(f"dataset.{key} is required for idx datasets")
            if not Path(ds[key]).exists():
                raise ConfigError(f"dataset.{key} path does not exist: {ds[key]}")
        for key in ("train_images", "train_labels"):
            if ds.get(key) and not Path(ds[key]).exists():
                raise ConfigError(f"dataset.{key} path does not exist: {ds[key]}")
    if ds["kind"] == "csv":
        if not ds.get("path"):
            raise ConfigError("dataset.path is required for csv datasets")
        if not Path(ds["path"]).exists():
            raise ConfigError(f"dataset.path does not exist: {ds['path']}")
    oracle = cfg["oracle"]
    if oracle["kind"] not in ("builtin", "table", "external"):
        raise ConfigError(f"oracle.kind {oracle['kind']!r} not one of builtin|table|external")
    if oracle["kind"] == "table" and not oracle.get("table"):
        raise ConfigError("oracle.table is required for table oracles")
    if oracle["kind"] == "table" and not Path(oracle["table"]).exists():
        raise ConfigError(f"oracle.table path does not exist: {oracle['table']}")
    if oracle["kind"] == "external" and not oracle.get("command"):
        raise ConfigError("oracle.command is required for external oracles")
    if oracle["kind"] == "builtin" and oracle.get("weights"):
        if not Path(oracle["weights"]).exists():
            raise ConfigError(f"oracle.weights path does not exist: {oracle['weights']}")
    for name in cfg["metrics"]:
        try:
            Metric(name)
        except ValueError:
            raise ConfigError(f"unknown metric {name!r}; choose from pd|pe|pv") from None
    for name, direction in cfg["directions"].items():
        try:
            Metric(name)
            RankDirection(direction)
        except ValueError:
            raise ConfigError(f"bad direction override {name!r}: {direction!r}") from None
    if cfg["attack"]["kind"] not in ("random", "de"):
        raise ConfigError(f"attack.kind {cfg['attack']['kind']!r} not one of random|de")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    if cfg["repeats"] < 1:
        raise ConfigError("repeats must be >= 1")


def config_hash(cfg: dict) -> str:
    """Hash of the canonical config JSON; output location never affects it."""
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()


def resolve_workers(cfg: dict) -> int:
    workers = cfg.get("workers")
    if workers in (None, 0):
        return os.cpu_count() or 1
    return int(workers)


def metric_list(cfg: dict) -> list[Metric]:
    return [Metric(name) for name in cfg["metrics"]]


def direction_for(cfg: dict, metric: Metric) -> RankDirection:
    override = cfg["directions"].get(metric.value)
    return RankDirection(override) if override else default_direction(metric)


def de_params_from(cfg: dict, seed: int) -> DeParams:
    de = cfg["attack"]["de"]
    return DeParams(
        population_size=int(de["population_size"]),
        differential_weight=float(de["differential_weight"]),
        crossover_rate=float(de["crossover_rate"]),
        max_generations=int(de["max_generations"]),
        seed=seed,
    )


# --- datasets -------------------------------------------------------------------

def _profile(section: dict) -> dict:
    return {
        "ambiguity": float(section["ambiguity"]),
        "noise": float(section["noise"]),
        "intensity": (float(section["intensity"][0]), float(section["intensity"][1])),
    }


def build_splits(cfg: dict) -> dict[str, Dataset]:
    """Deterministic train/heldout/pool splits from the dataset config."""
    ds_cfg = cfg["dataset"]
    seed = derive_seed(cfg["seed"], "dataset")
    train_size = int(ds_cfg["train_size"])
    heldout_size = int(ds_cfg["heldout_size"])
    pool_size = ds_cfg.get("pool_size") or 2 * int(ds_cfg["score_size"])
    try:
        if ds_cfg["kind"] == "synthetic":
            syn = ds_cfg["synthetic"]
            train_full = synthetic_patterns(
                train_size + heldout_size,
                seed=derive_seed(cfg["seed"], "synthetic", "train"),
                side=int(ds_cfg["shape"][0]),
                n_classes=int(ds_cfg["n_classes"]),
                **_profile(syn["train"]),
            )
            train, heldout = partition(train_full, [train_size, heldout_size], seed)
            pool = synthetic_patterns(
                pool_size,
                seed=derive_seed(cfg["seed"], "synthetic", "pool"),
                side=int(ds_cfg["shape"][0]),
                n_classes=int(ds_cfg["n_classes"]),
                **_profile(syn["pool"]),
            )
        elif ds_cfg["kind"] == "idx":
            test = load_idx(ds_cfg["images"], ds_cfg["labels"], int(ds_cfg["n_classes"]))
            if ds_cfg.get("train_images"):
                train_full = load_idx(
                    ds_cfg["train_images"], ds_cfg["train_labels"], int(ds_cfg["n_classes"])
                )
                train = subset(train_full, train_size, derive_seed(cfg["seed"], "train"))
                heldout, pool = partition(test, [heldout_size, pool_size], seed)
            else:
                train, heldout, pool = partition(test, [train_size, heldout_size, pool_size], seed)
        else:  # csv
            full = load_csv(ds_cfg["path"], ds_cfg["shape"], int(ds_cfg["n_classes"]))
            train, heldout, pool = partition(full, [train_size, heldout_size, pool_size], seed)
    except KTooLarge as exc:
        raise ConfigError(f"dataset too small for the configured split sizes: {exc}") from exc
    return {"train": train, "heldout": heldout, "pool": pool}


def load_full_dataset(cfg: dict) -> Dataset:
    """The whole configured evaluation set, used by the standalone commands.

    For synthetic data this is the scoring-pool distribution.
    """
    ds_cfg = cfg["dataset"]
    if ds_cfg["kind"] == "idx":
        return load_idx(ds_cfg["images"], ds_cfg["labels"], int(ds_cfg["n_classes"]))
    if ds_cfg["kind"] == "csv":
        return load_csv(ds_cfg["path"], ds_cfg["shape"], int(ds_cfg["n_classes"]))
    pool_size = ds_cfg.get("pool_size") or 2 * int(ds_cfg["score_size"])
    return synthetic_patterns(
        pool_size,
        seed=derive_seed(cfg["seed"], "synthetic", "pool"),
        side=int(ds_cfg["shape"][0]),
        n_classes=int(ds_cfg["n_classes"]),
        **_profile(ds_cfg["synthetic"]["pool"]),
    )


# --- oracles --------------------------------------------------------------------

def oracle_spec(cfg: dict, weights_path: str | Path | None = None) -> dict:
    """Picklable description from which any worker can rebuild the oracle."""
    oracle = cfg["oracle"]
    if oracle["kind"] == "builtin":
        path = weights_path or oracle.get("weights")
        if not path:
            raise ConfigError("builtin oracle needs trained weights (run the train stage)")
        return {"kind": "builtin", "weights": str(path)}
    if oracle["kind"] == "table":
        return {"kind": "table", "path": str(oracle["table"])}
    return {
        "kind": "external",
        "command": list(oracle["command"]),
        "timeout": float(oracle["timeout_s"]),
    }


def build_oracle(spec: dict):
    if spec["kind"] == "builtin":
        return BuiltinOracle(load_weights(spec["weights"]))
    if spec["kind"] == "table":
        return TableOracle(spec["path"])
    return ExternalOracle(spec["command"], timeout=spec["timeout"])


# --- worker pool ----------------------------------------------------------------

_WORKER_ORACLE = None


def _worker_init(spec: dict) -> None:
    global _WORKER_ORACLE
    _WORKER_ORACLE = build_oracle(spec)


def _score_task(item: tuple[int, np.ndarray, int]) -> tuple[int, list[float], int]:
    example_id, pixels, label = item
    probs = probabilities_for_example(_WORKER_ORACLE, Example(example_id, pixels, label))
    return example_id, probs.values.tolist(), int(np.argmax(probs.values))

def _attack_task(item: tuple[int, np.ndarray, int, str, int, int, dict]) -> list[tuple]:
    example_id, pixels, label, kind, trials, seed, de_cfg = item
    ex = Example(example_id, pixels, label)
    if kind == "random":
        outcomes = random_attack(ex, _WORKER_ORACLE, trials, seed)
    else:
        outcomes = [de_attack(ex, _WORKER_ORACLE, DeParams(**de_cfg, seed=seed))]
    return [
        (o.example_id, o.trial_index, o.success, o.predicted_label,
         o.true_label_prob_after, o.oracle_queries, o.perturbation.x, o.perturbation.y)
        for o in outcomes
    ]


def _count_task(item: tuple[int, np.ndarray, int, str, int, int, dict]) -> tuple[int, int, bool]:
    example_id, pixels, label, kind, cap, seed, de_cfg = item
    ex = Example(example_id, pixels, label)
    de = DeParams(**de_cfg, seed=seed) if kind == "de" else None
    result = first_success_count(ex, _WORKER_ORACLE, kind, cap, seed, de_params=de)
    return example_id, result.count, result.exhausted


def map_tasks(task_fn: Callable, items: list, spec: dict, workers: int) -> list:
    """Order-preserving map with one oracle per worker; serial when workers=1."""
    if workers <= 1 or len(items) <= 1:
        _worker_init(spec)
        try:
            return [task_fn(item) for item in items]
        finally:
            if _WORKER_ORACLE is not None:
                _WORKER_ORACLE.close()
    with multiprocessing.Pool(workers, initializer=_worker_init, initargs=(spec,)) as pool:
        return pool.map(task_fn, items)


# --- stage runner ----------------------------------------------------------------

@dataclass
class RunContext:
    cfg: dict
    out: Path
    force: bool = False
    splits: dict[str, Dataset] | None = None
    stages: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    @property
    def hash(self) -> str:
        return config_hash(self.cfg)

    def split(self, name: str) -> Dataset:
        if self.splits is None:
            self.splits = build_splits(self.cfg)
        return self.splits[name]

    def path(self, name: str) -> Path:
        return self.out / name


def _atomic_write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    """Write through a temp file so a failed stage leaves no partial output."""
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _write_json(path: Path, doc: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _run_stage(ctx: RunContext, name: str, fn: Callable[[RunContext], list[str]]) -> None:
    marker = ctx.path(f".stage_{name}.json")
    if not ctx.force and marker.exists():
        info = json.loads(marker.read_text())
        if info.get("config_hash") == ctx.hash and all(
            ctx.path(o).exists() for o in info.get("outputs", [])
        ):
            ctx.stages.append(
                {"name": name, "status": "completed", "outputs": info["outputs"], "reused": True}
            )
            return
    started = time.perf_counter()
    outputs = fn(ctx)
    ctx.timings[name] = time.perf_counter() - started
    _write_json(marker, {"config_hash": ctx.hash, "outputs": outputs, "status": "completed"})
    ctx.stages.append({"name": name, "status": "completed", "outputs": outputs, "reused": False})


# --- stages -----------------------------------------------------------------------

def stage_train(ctx: RunContext) -> list[str]:
    oracle_cfg = ctx.cfg["oracle"]
    if oracle_cfg["kind"] != "builtin":
        _write_json(ctx.path("training_log.json"),
                    {"status": f"not applicable for oracle kind {oracle_cfg['kind']}"})
        return ["training_log.json"]
    if oracle_cfg.get("weights"):
        weights = load_weights(oracle_cfg["weights"])
        save_weights(weights, ctx.path("weights.json"))
        _write_json(ctx.path("training_log.json"),
                    {"status": "loaded", "source": str(oracle_cfg["weights"])})
        return ["weights.json", "training_log.json"]

    train = ctx.split("train")
    heldout = ctx.split("heldout")
    h, w, c = train.shape
    layers = [h * w * c] + [int(n) for n in oracle_cfg["hidden"]] + [train.n_classes]
    tr_cfg = oracle_cfg["training"]
    seed = derive_seed(ctx.seed, "train")
    if tr_cfg.get("preset"):
        tc = training_preset(tr_cfg["preset"], seed=seed, epochs=tr_cfg.get("epochs"))
    else:
        epochs = tr_cfg.get("epochs")
        tc = TrainingConfig(
            learning_rate=float(tr_cfg["learning_rate"]),
            batch_size=int(tr_cfg["batch_size"]),
            epochs=20 if epochs is None else int(epochs),
            seed=seed,
        )
    weights = train_mlp(train, MlpConfig(tuple(layers)), tc)
    save_weights(weights, ctx.path("weights.json"))
    _write_json(
        ctx.path("training_log.json"),
        {
            "status": "trained",
            "layer_sizes": layers,
            "learning_rate": tc.learning_rate,
            "batch_size": tc.batch_size,
            "epochs": tc.epochs,
            "seed": tc.seed,
            "final_loss": weights.final_loss,
            "train_examples": len(train),
            "heldout_examples": len(heldout),
            "heldout_accuracy": accuracy(weights, heldout),
        },
    )
    return ["weights.json", "training_log.json"]


def _pipeline_oracle_spec(ctx: RunContext) -> dict:
    weights_path = ctx.path("weights.json")
    return oracle_spec(ctx.cfg, weights_path if weights_path.exists() else None)


def stage_score(ctx: RunContext) -> list[str]:
    """Score the first ``score_size`` correctly-classified pool examples."""
    pool = ctx.split("pool")
    spec = _pipeline_oracle_spec(ctx)
    items = [(ex.id, ex.pixels, ex.true_label) for ex in pool]
    results = map_tasks(_score_task, items, spec, resolve_workers(ctx.cfg))

    predictions = []
    score_rows = []
    score_size = int(ctx.cfg["dataset"]["score_size"])
    for example_id, probs, predicted in results:
        true_label = int(pool.labels[example_id])
        correct = predicted == true_label
        predictions.append(
            [example_id, true_label, predicted, int(correct), repr(float(probs[true_label]))]
        )
        if correct and len(score_rows) < score_size:
            scores = score_all(validate_probability_vector(probs))
            score_rows.append(
                [example_id,
                 repr(scores[Metric.PD].value),
                 repr(scores[Metric.PE].value),
                 repr(scores[Metric.PV].value)]
            )
    _atomic_write_rows(
        ctx.path("predictions.csv"),
        ["example_id", "true_label", "pred_label", "correct", "true_prob"],
        predictions,
    )
    _atomic_write_rows(ctx.path("scores.csv"), ["example_id", "pd", "pe", "pv"], score_rows)
    return ["scores.csv", "predictions.csv"]


def read_scores_csv(path: str | Path) -> dict[int, dict[Metric, float]]:
    scores: dict[int, dict[Metric, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            scores[int(row["example_id"])] = {
                Metric.PD: float(row["pd"]),
                Metric.PE: float(row["pe"]),
                Metric.PV: float(row["pv"]),
            }
    return scores


def rank_from_scores(
    scores: dict[int, dict[Metric, float]], metric: Metric, direction: RankDirection
) -> RankedList:
    entries = [
        ScoredExample(example_id, SensitivityScore(metric, per_metric[metric]))
        for example_id, per_metric in scores.items()
    ]
    return rank(entries, direction)


def stage_rank(ctx: RunContext) -> list[str]:
    scores = read_scores_csv(ctx.path("scores.csv"))
    outputs = []
    for metric in metric_list(ctx.cfg):
        ranked = rank_from_scores(scores, metric, direction_for(ctx.cfg, metric))
        name = f"ranked_{metric.value}.csv"
        write_ranked_csv(ranked, ctx.path(name))
        outputs.append(name)
    return outputs


def stage_attack(ctx: RunContext) -> list[str]:
    pool = ctx.split("pool")
    scores = read_scores_csv(ctx.path("scores.csv"))
    attack_cfg = ctx.cfg["attack"]
    spec = _pipeline_oracle_spec(ctx)
    items = []
    for example_id in sorted(scores):
        ex = pool.example(example_id)
        items.append(
            (ex.id, ex.pixels, ex.true_label, attack_cfg["kind"], int(attack_cfg["trials"]),
             derive_seed(ctx.seed, "attack", ex.id), dict(attack_cfg["de"]))
        )
    results = map_tasks(_attack_task, items, spec, resolve_workers(ctx.cfg))
    rows = []
    for outcome_rows in results:
        for (example_id, trial, success, pred, prob, queries, x, y) in outcome_rows:
            rows.append([example_id, trial, int(success), pred, repr(prob), queries, x, y])
    _atomic_write_rows(
        ctx.path("attacks.csv"),
        ["example_id", "trial", "success", "pred_label", "true_prob_after", "queries", "x", "y"],
        rows,
    )
    return ["attacks.csv"]


def eff_by_example(attack_rows: list[dict]) -> dict[int, float]:
    grouped: dict[int, list[bool]] = {}
    for row in attack_rows:
        grouped.setdefault(row["example_id"], []).append(row["success"])
    return {eid: sum(flags) / len(flags) for eid, flags in grouped.items()}


def evaluate_tuples(
    scores: dict[int, dict[Metric, float]], effs: dict[int, float], metric: Metric
) -> list[EffPoint]:
    return [
        EffPoint(score=scores[eid][metric], eff=effs[eid])
        for eid in sorted(scores)
        if eid in effs
    ]


def stage_evaluate(ctx: RunContext) -> list[str]:
    scores = read_scores_csv(ctx.path("scores.csv"))
    attack_rows = read_attack_log(ctx.path("attacks.csv"))
    effs = eff_by_example(attack_rows)
    threshold = float(ctx.cfg["evaluation"]["correlation_threshold"])

    outputs = []
    fits: dict[Metric, ExpFit] = {}
    summary: dict[str, Any] = {"correlation_threshold": threshold, "metrics": {}}
    for metric in metric_list(ctx.cfg):
        points = evaluate_tuples(scores, effs, metric)
        entry: dict[str, Any] = {
            "n_points": len(points),
            "spearman": spearman([p.score for p in points], [p.eff for p in points])
            if len(points) >= 3
            else None,
        }
        try:
            fit = fit_exponential(points)
        except (TooFewPoints, NoiseRankError) as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            plot_name = f"plotdata_{metric.value}.csv"
            write_plot_data(points, None, ctx.path(plot_name))
            outputs.append(plot_name)
            summary["metrics"][metric.value] = entry
            continue
        fits[metric] = fit
        entry.update(
            {
                "a": fit.a if np.isfinite(fit.a) else None,
                "log_a": fit.log_a,
                "b": fit.b,
                "r": fit.r,
                "excluded_zero_eff": fit.excluded,
                "gate_passed": correlation_gate(fit, threshold),
            }
        )
        plot_name = f"plotdata_{metric.value}.csv"
        write_plot_data(points, fit, ctx.path(plot_name))
        outputs.append(plot_name)
        summary["metrics"][metric.value] = entry

    if fits:
        write_fit_csv(fits, ctx.path("fits.csv"))
        outputs.insert(0, "fits.csv")
    if set(fits) == {Metric.PD, Metric.PV, Metric.PE}:
        comparison = compare_decay_rates(fits)
        summary["marks"] = {m.value: mark for m, mark in comparison.marks.items()}
        summary["marks_tied"] = comparison.tied
    _write_json(ctx.path("evaluation.json"), summary)
    outputs.append("evaluation.json")
    return outputs


def stage_compare(ctx: RunContext) -> list[str]:
    pool = ctx.split("pool")
    scores = read_scores_csv(ctx.path("scores.csv"))
    selection = ctx.cfg["selection"]
    attack_cfg = ctx.cfg["attack"]
    cap = int(attack_cfg["cap"])
    top_k = int(selection["top_k"])
    random_k = int(selection["random_k"])
    spec = _pipeline_oracle_spec(ctx)
    workers = resolve_workers(ctx.cfg)

    def counts_for(ids: list[int], label: str) -> list[tuple[int, int, bool]]:
        items = [
            (eid, pool.example(eid).pixels, pool.example(eid).true_label,
             attack_cfg["kind"], cap, derive_seed(ctx.seed, "compare", label, eid),
             dict(attack_cfg["de"]))
            for eid in ids
        ]
        return map_tasks(_count_task, items, spec, workers)

    all_ids = sorted(scores)
    baseline_ids = random_select(all_ids, min(random_k, len(all_ids)),
                                 derive_seed(ctx.seed, "compare", "random"))
    baseline_counts = [
        SampleCount(count, exhausted) for _, count, exhausted in counts_for(baseline_ids, "random")
    ]
    baseline = f_measure(baseline_counts, cap, method="random")

    rows = []
    summary: dict[str, Any] = {
        "cap": cap,
        "policy": baseline.policy,
        "random": {
            "mean_count": baseline.mean_count,
            "exhausted_fraction": baseline.exhausted_fraction,
            "ids": baseline_ids,
        },
        "metrics": {},
    }
    for metric in metric_list(ctx.cfg):
        ranked = rank_from_scores(scores, metric, direction_for(ctx.cfg, metric))
        chosen = select_top(ranked, min(top_k, len(ranked.entries)))
        counts = [
            SampleCount(count, exhausted) for _, count, exhausted in counts_for(chosen, metric.value)
        ]
        report = f_measure(counts, cap, method=f"top-{metric.value}")
        inc = improvement(baseline.mean_count, report.mean_count)
        rows.append(
            [metric.value, repr(report.mean_count), repr(baseline.mean_count),
             repr(inc), repr(report.exhausted_fraction), repr(baseline.exhausted_fraction),
             cap, baseline.policy]
        )
        summary["metrics"][metric.value] = {
            "ranked_mean_count": report.mean_count,
            "ranked_exhausted_fraction": report.exhausted_fraction,
            "random_mean_count": baseline.mean_count,
            "improvement_pct": inc,
            "ids": chosen,
        }
    _atomic_write_rows(
        ctx.path("compare.csv"),
        ["metric", "ranked_mean", "random_mean", "improvement_pct",
         "ranked_exhausted", "random_exhausted", "cap", "policy"],
        rows,
    )
    _write_json(ctx.path("compare.json"), summary)
    return ["compare.csv", "compare.json"]


_STAGE_FNS: dict[str, Callable[[RunContext], list[str]]] = {
    "train": stage_train,
    "score": stage_score,
    "rank": stage_rank,
    "attack": stage_attack,
    "evaluate": stage_evaluate,
    "compare": stage_compare,
}


def _manifest(ctx: RunContext, started_at: str) -> dict:
    return {
        "config": ctx.cfg,
        "config_hash": ctx.hash,
        "master_seed": ctx.seed,
        "prng": PRNG_NAME,
        "seed_derivation": DERIVATION,
        "aggregation": "arithmetic-mean",
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "stages": ctx.stages,
        "volatile": {
            "output_dir": str(ctx.out),
            "started_at": started_at,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "timings_s": ctx.timings,
        },
    }


def run_pipeline(cfg: dict, out: str | Path, force: bool = False) -> dict:
    """Run all six stages; returns the manifest (also written to manifest.json).

    The first failing stage aborts the run; the manifest still gets written
    with that stage marked failed and the rest pending.
    """
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg=cfg, out=out_dir, force=force)
    started_at = datetime.now(timezone.utc).isoformat()
    try:
        for name in STAGES:
            _run_stage(ctx, name, _STAGE_FNS[name])
    except Exception as exc:
        failed_at = len(ctx.stages)
        ctx.stages.append(
            {"name": STAGES[failed_at], "status": "failed",
             "error": f"{type(exc).__name__}: {exc}", "reused": False}
        )
        for name in STAGES[failed_at + 1 :]:
            ctx.stages.append({"name": name, "status": "pending", "reused": False})
        _write_json(out_dir / "manifest.json", _manifest(ctx, started_at))
        raise
    manifest = _manifest(ctx, started_at)
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def run_repeats(cfg: dict, out: str | Path, force: bool = False) -> dict:
    """Run the pipeline ``repeats`` times with derived seeds and mean reports."""
    repeats = int(cfg["repeats"])
    if repeats == 1:
        return run_pipeline(cfg, out, force=force)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = []
    improvements: dict[str, list[float]] = {}
    decay_rates: dict[str, list[float]] = {}
    for index in range(1, repeats + 1):
        repeat_cfg = _deep_merge(cfg, {"seed": derive_seed(cfg["seed"], "repeat", index),
                                       "repeats": 1})
        repeat_dir = out_dir / f"repeat_{index:03d}"
        manifests.append(run_pipeline(repeat_cfg, repeat_dir, force=force))
        compare_doc = json.loads((repeat_dir / "compare.json").read_text())
        for metric, entry in compare_doc["metrics"].items():
            improvements.setdefault(metric, []).append(entry["improvement_pct"])
        eval_doc = json.loads((repeat_dir / "evaluation.json").read_text())
        for metric, entry in eval_doc["metrics"].items():
            if "b" in entry:
                decay_rates.setdefault(metric, []).append(entry["b"])
    mean_report = {
        "repeats": repeats,
        "aggregation": "arithmetic-mean",
        "mean_improvement_pct": {m: float(np.mean(v)) for m, v in improvements.items()},
        "mean_decay_rate": {m: float(np.mean(v)) for m, v in decay_rates.items()},
    }
    _write_json(out_dir / "mean_report.json", mean_report)
    summary = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "master_seed": cfg["seed"],
        "aggregation": "arithmetic-mean",
        "repeats": repeats,
        "repeat_dirs": [f"repeat_{i:03d}" for i in range(1, repeats + 1)],
        "volatile": {"output_dir": str(out_dir)},
    }
    _write_json(out_dir / "manifest.json", summary)
    return summary
