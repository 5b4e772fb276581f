"""Command line entry point.

Subcommands glue the library into reproducible experiments:

* ``simulate``  write a training stream, a held-out eval block, and the
                percentile-oracle quantile grids
* ``train``     stream a variant (and optionally the regression twin)
                through the trainer; write checkpoints, state snapshot, log
* ``eval``      score a checkpoint per cohort against a stream, optionally
                with deltas vs. a baseline checkpoint
* ``verify``    run the statistical verification suites

Exit codes: 0 success, 1 validation error, 2 runtime failure,
3 verification-suite failure. Every output file gets a ``.meta.json``
sidecar embedding the resolved config hash and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_experiment_config, with_overrides
from .errors import ConfigError
from .metrics import cohort_report
from .model import DualHeadModel
from .state import snapshot_store
from .synth import (
    COHORTS,
    PercentileOracle,
    Population,
    read_stream_jsonl,
    write_stream_jsonl,
)
from .trainer import TrainConfig, predict_scores, train
from .verify import run_all


def _write_meta(path: Path, config: ExperimentConfig, command: str,
                extra: dict | None = None) -> None:
    meta = {
        "config_sha256": config.sha256(),
        "seed": config.population.seed,
        "command": command,
    }
    if extra:
        meta.update(extra)
    Path(str(path) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _resolve_config(args) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    return with_overrides(config, seed=args.seed, output_dir=args.out)


def cmd_simulate(args) -> int:
    config = _resolve_config(args)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    population = Population(config.population)

    stream_path = out_dir / "stream.jsonl"
    n_lines = write_stream_jsonl(population.stream(), stream_path)
    _write_meta(stream_path, config, "simulate", {"lines": n_lines})

    eval_path = out_dir / "eval.jsonl"
    eval_block = population.eval_block(config.eval.items_per_user)
    write_stream_jsonl(eval_block, eval_path)
    _write_meta(eval_path, config, "simulate", {"lines": len(eval_block)})

    oracle_path = out_dir / "oracle.csv"
    oracle = PercentileOracle.build(population)
    oracle.write_csv(oracle_path)
    _write_meta(oracle_path, config, "simulate")

    print(f"wrote {n_lines} interactions to {stream_path}")
    print(f"wrote {len(eval_block)} eval interactions to {eval_path}")
    print(f"wrote oracle quantile grids to {oracle_path}")
    print(f"config sha256 {config.sha256()[:12]}, seed {config.population.seed}")
    train_stream = read_stream_jsonl(stream_path)
    print(f"{'cohort':>10} {'users':>6} {'interactions':>12} "
          f"{'mean_y':>10} {'pos_rate':>9}")
    for cohort in COHORTS:
        rows = [it for it in train_stream if it.cohort == cohort]
        n_users = len({it.user_id for it in rows})
        if rows:
            mean_y = float(np.mean([it.y for it in rows]))
            pos = float(np.mean([it.b for it in rows]))
            print(f"{cohort:>10} {n_users:>6} {len(rows):>12} "
                  f"{mean_y:>10.3f} {pos:>9.4f}")
        else:
            print(f"{cohort:>10} {n_users:>6} {0:>12} {'-':>10} {'-':>9}")
    return 0


def _train_one(stream, train_config: TrainConfig, out_dir: Path, prefix: str,
               config: ExperimentConfig):
    model, store, log = train(stream, train_config)
    ckpt_path = out_dir / f"{prefix}.ckpt"
    with open(ckpt_path, "wb") as sink:
        model.save(sink)
    _write_meta(ckpt_path, config, "train", {"variant": train_config.variant})
    snap_path = out_dir / f"{prefix}_store.snap"
    with open(snap_path, "wb") as sink:
        snapshot_store(store, sink)
    _write_meta(snap_path, config, "train", {"variant": train_config.variant})
    log_path = out_dir / f"{prefix}_log.jsonl"
    log.write_jsonl(log_path)
    _write_meta(log_path, config, "train", {"variant": train_config.variant})
    return model, log, ckpt_path


def cmd_train(args) -> int:
    config = _resolve_config(args)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = read_stream_jsonl(args.stream)
    if not stream:
        raise ConfigError(f"stream: {args.stream} is empty")

    _, _, ckpt = _train_one(stream, config.train, out_dir, "model", config)
    print(f"trained variant {config.train.variant!r} "
          f"({len(stream)} interactions) -> {ckpt}")
    if config.train_baseline:
        baseline_config = dataclasses.replace(config.train, variant="regression")
        _, _, base_ckpt = _train_one(stream, baseline_config, out_dir,
                                     "baseline", config)
        print(f"trained regression twin -> {base_ckpt}")
    return 0


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.checkpoint, "rb") as source:
        model = DualHeadModel.load(source)
    stream = read_stream_jsonl(args.stream)
    if not stream:
        raise ConfigError(f"stream: {args.stream} is empty")
    if len(stream[0].features) != model.feature_dim:
        raise ConfigError(
            f"checkpoint expects {model.feature_dim} features but the "
            f"stream carries {len(stream[0].features)}"
        )
    y_hats, p_hats = predict_scores(model, stream)
    scores = y_hats if config.train.variant == "regression" else p_hats
    baseline_scores = None
    if args.baseline:
        with open(args.baseline, "rb") as source:
            baseline = DualHeadModel.load(source)
        if baseline.feature_dim != model.feature_dim:
            raise ConfigError("baseline checkpoint feature dimension mismatch")
        baseline_scores, _ = predict_scores(baseline, stream)

    report = cohort_report(
        user_ids=[it.user_id for it in stream],
        cohorts=[it.cohort for it in stream],
        scores=scores,
        baseline_scores=baseline_scores,
        magnitudes=[it.y for it in stream],
        binary_labels=[it.b for it in stream],
        pairs_per_user=config.eval.pairs_per_user,
        seed=config.population.seed,
    )
    csv_path = out_dir / "report.csv"
    report.write_csv(csv_path)
    _write_meta(csv_path, config, "eval")
    json_path = out_dir / "report.json"
    report.write_json(json_path)
    _write_meta(json_path, config, "eval")
    print(report.to_csv_text(), end="")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_verify(args) -> int:
    results = run_all(quick=args.quick)
    width = max(len(r.claim) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failures += not r.passed
        print(f"{status}  {r.claim:<{width}}  {r.measured}  "
              f"[tolerance: {r.tolerance}]  ({r.seconds:.1f}s)")
    if failures:
        print(f"{failures} suite(s) failed")
        return 3
    print("all verification suites passed")
    return 0


def _emit_error(kind: str, exc: Exception) -> None:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pctlearn",
        description="Streaming percentile-target training on synthetic "
                    "engagement data, with verification suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="override the config output directory")

    p_sim = sub.add_parser("simulate", help="generate stream, eval block, oracle")
    add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="train on a simulated stream")
    add_common(p_train)
    p_train.add_argument("--stream", required=True, help="stream JSONL path")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint per cohort")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--stream", required=True, help="eval JSONL path")
    p_eval.add_argument("--baseline", default=None,
                        help="baseline checkpoint for deltas")
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser("verify", help="run the verification suites")
    p_verify.add_argument("--quick", action="store_true",
                          help="reduced trial counts, widened tolerances")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _emit_error("validation", exc)
        return 1
    except (OSError, ValueError, FloatingPointError, KeyError) as exc:
        _emit_error("runtime", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
