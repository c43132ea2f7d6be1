"""Command-line front end: train, score, rank, attack, evaluate, compare, pipeline.

Exit codes are stable for CI: 0 success, 1 runtime failure, 2 configuration
error. Flags override config-file values; the effective merged config is
echoed into every manifest.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .attack import de_attack, random_attack, read_attack_log, write_attack_log
from .errors import ConfigError, NoiseRankError
from .evaluation import (
    ExpFit,
    compare_decay_rates,
    correlation_gate,
    fit_exponential,
    spearman,
    write_fit_csv,
    write_plot_data,
)
from .metrics import Metric, score_all
from .oracle import probabilities_for_example
from .pipeline import (
    _STAGE_FNS,
    _run_stage,
    OUTPUT_ROOT_ENV,
    RunContext,
    build_oracle,
    de_params_from,
    direction_for,
    eff_by_example,
    evaluate_tuples,
    load_config,
    load_full_dataset,
    oracle_spec,
    rank_from_scores,
    read_scores_csv,
    run_repeats,
    stage_train,
)
from .prioritizer import RankDirection, write_ranked_csv
from .seeds import derive_seed


def _default_out(args) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV, "out")
    return Path(root)


def _config_from_args(args) -> dict:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "oracle", None):
        overrides.setdefault("oracle", {})["kind"] = args.oracle
    if getattr(args, "preset", None):
        overrides.setdefault("oracle", {}).setdefault("training", {})["preset"] = args.preset
    if getattr(args, "metric", None) and args.metric != "all":
        overrides["metrics"] = [args.metric]
    if getattr(args, "attack", None):
        overrides.setdefault("attack", {})["kind"] = args.attack
    if getattr(args, "m", None) is not None:
        overrides.setdefault("attack", {})["trials"] = args.m
    if getattr(args, "cap", None) is not None:
        overrides.setdefault("attack", {})["cap"] = args.cap
    if getattr(args, "repeats", None) is not None:
        overrides["repeats"] = args.repeats
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = _default_out(args)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg=cfg, out=out, force=True)
    outputs = stage_train(ctx)
    for name in outputs:
        print(f"wrote {out / name}")
    return 0


def _oracle_spec_with_fallback(cfg: dict, out: Path) -> dict:
    """Use ``<out>/weights.json`` when the config names no weights file."""
    candidate = out / "weights.json"
    if cfg["oracle"]["kind"] == "builtin" and not cfg["oracle"].get("weights") and candidate.exists():
        return oracle_spec(cfg, candidate)
    return oracle_spec(cfg)


def cmd_score(args) -> int:
    cfg = _config_from_args(args)
    out = _default_out(args)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_full_dataset(cfg)
    oracle = build_oracle(_oracle_spec_with_fallback(cfg, out))
    rows = []
    try:
        for ex in ds:
            probs = probabilities_for_example(oracle, ex)
            scores = score_all(probs)
            rows.append(
                [ex.id,
                 repr(scores[Metric.PD].value),
                 repr(scores[Metric.PE].value),
                 repr(scores[Metric.PV].value)]
            )
    finally:
        oracle.close()
    path = out / "scores.csv"
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["example_id", "pd", "pe", "pv"])
            writer.writerows(rows)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_rank(args) -> int:
    scores = read_scores_csv(args.scores)
    metric = Metric(args.metric)
    direction = RankDirection(args.direction) if args.direction else None
    cfg = load_config(args.config) if args.config else load_config()
    ranked = rank_from_scores(scores, metric, direction or direction_for(cfg, metric))
    out = Path(args.out) if args.out else Path(f"ranked_{metric.value}.csv")
    write_ranked_csv(ranked, out)
    print(f"wrote {out} ({len(ranked.entries)} rows)")
    return 0


def _parse_ids(args) -> list[int]:
    ids: list[int] = []
    for chunk in args.ids:
        ids.extend(int(part) for part in chunk.split(",") if part)
    if not ids:
        raise ConfigError("no example ids given")
    return ids


def cmd_attack(args) -> int:
    cfg = _config_from_args(args)
    out = _default_out(args)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_full_dataset(cfg)
    ids = _parse_ids(args)
    oracle = build_oracle(_oracle_spec_with_fallback(cfg, out))
    outcomes = []
    try:
        for example_id in ids:
            if example_id < 0 or example_id >= len(ds):
                raise ConfigError(f"example id {example_id} outside dataset of {len(ds)}")
            ex = ds.example(example_id)
            seed = derive_seed(cfg["seed"], "attack", ex.id)
            if cfg["attack"]["kind"] == "random":
                outcomes.extend(random_attack(ex, oracle, int(cfg["attack"]["trials"]), seed))
            else:
                outcomes.append(de_attack(ex, oracle, de_params_from(cfg, seed)))
    finally:
        oracle.close()
    path = out / "attacks.csv"
    write_attack_log(outcomes, path)
    print(f"wrote {path} ({len(outcomes)} rows)")
    return 0


def cmd_evaluate(args) -> int:
    scores = read_scores_csv(args.scores)
    attack_rows = read_attack_log(args.attacks)
    effs = eff_by_example(attack_rows)
    out = _default_out(args)
    out.mkdir(parents=True, exist_ok=True)
    threshold = args.threshold

    fits: dict[Metric, ExpFit] = {}
    summary: dict = {"correlation_threshold": threshold, "metrics": {}}
    for metric in (Metric.PD, Metric.PE, Metric.PV):
        points = evaluate_tuples(scores, effs, metric)
        entry: dict = {"n_points": len(points)}
        if len(points) >= 3:
            entry["spearman"] = spearman([p.score for p in points], [p.eff for p in points])
        try:
            fit = fit_exponential(points)
        except NoiseRankError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            summary["metrics"][metric.value] = entry
            continue
        fits[metric] = fit
        entry.update({"a": fit.a, "b": fit.b, "r": fit.r,
                      "excluded_zero_eff": fit.excluded,
                      "gate_passed": correlation_gate(fit, threshold)})
        write_plot_data(points, fit, out / f"plotdata_{metric.value}.csv")
        summary["metrics"][metric.value] = entry
    if fits:
        write_fit_csv(fits, out / "fits.csv")
    if set(fits) == {Metric.PD, Metric.PV, Metric.PE}:
        comparison = compare_decay_rates(fits)
        summary["marks"] = {m.value: mark for m, mark in comparison.marks.items()}
        summary["marks_tied"] = comparison.tied
    (out / "evaluation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'evaluation.json'}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config_from_args(args)
    out = _default_out(args)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg=cfg, out=out, force=bool(args.force))
    for name in ("train", "score", "compare"):
        _run_stage(ctx, name, _STAGE_FNS[name])
    print(f"wrote {out / 'compare.csv'}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    out = _default_out(args)
    manifest = run_repeats(cfg, out, force=bool(args.force))
    completed = sum(1 for s in manifest.get("stages", []) if s.get("status") == "completed")
    if "stages" in manifest:
        print(f"pipeline finished: {completed}/{len(manifest['stages'])} stages, out={out}")
    else:
        print(f"pipeline finished: {manifest['repeats']} repeats, out={out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noiserank",
        description="Rank classifier test examples by noise sensitivity, attack them "
                    "with 2x2-pixel perturbations, and evaluate the prioritization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./out)")
        p.add_argument("--workers", type=int, help="worker pool size")
        p.add_argument("--oracle", choices=["builtin", "table", "external"])
        p.add_argument("--metric", choices=["pd", "pe", "pv", "all"])

    p_train = sub.add_parser("train", help="train the built-in softmax network")
    common(p_train)
    p_train.add_argument("--preset", help="named hyperparameter preset, e.g. mnist")
    p_train.set_defaults(fn=cmd_train)

    p_score = sub.add_parser("score", help="score every example of the dataset")
    common(p_score)
    p_score.set_defaults(fn=cmd_score)

    p_rank = sub.add_parser("rank", help="rank a scores CSV by one metric")
    p_rank.add_argument("--scores", required=True)
    p_rank.add_argument("--metric", required=True, choices=["pd", "pe", "pv"])
    p_rank.add_argument("--direction", choices=["ascending", "descending"])
    p_rank.add_argument("--config")
    p_rank.add_argument("--out")
    p_rank.set_defaults(fn=cmd_rank)

    p_attack = sub.add_parser("attack", help="attack the given example ids")
    common(p_attack)
    p_attack.add_argument("ids", nargs="+", help="example ids (space or comma separated)")
    p_attack.add_argument("--attack", choices=["random", "de"])
    p_attack.add_argument("--m", type=int, help="random trials per example")
    p_attack.set_defaults(fn=cmd_attack)

    p_eval = sub.add_parser("evaluate", help="fit effectiveness curves from logs")
    p_eval.add_argument("--scores", required=True)
    p_eval.add_argument("--attacks", required=True)
    p_eval.add_argument("--threshold", type=float, default=0.95)
    p_eval.add_argument("--out")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="first-success comparison of ranked vs random")
    common(p_cmp)
    p_cmp.add_argument("--cap", type=int)
    p_cmp.add_argument("--attack", choices=["random", "de"])
    p_cmp.add_argument("--force", action="store_true")
    p_cmp.set_defaults(fn=cmd_compare)

    p_pipe = sub.add_parser("pipeline", help="run all six stages")
    common(p_pipe)
    p_pipe.add_argument("--force", action="store_true", help="rerun completed stages")
    p_pipe.add_argument("--repeats", type=int)
    p_pipe.set_defaults(fn=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NoiseRankError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"configuration error: missing file {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
