"""Command-line interface.

Subcommands: gen, attack, cluster, train, eval, certify, sweep, run. Every
subcommand accepts --config (INI file, see harness.CONFIG_DEFAULTS for the
schema); flags override config keys.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attack import read_trigger, select_trigger, write_trigger, poison_dataset
from .certify import build_certification_report, write_certification_csv, write_certification_summary
from .clustering import embed_concepts, kmeans_cluster, read_assignment, write_assignment
from .data import generate_synthetic, load_dataset, load_vocabulary, save_dataset, split_dataset
from .harness import (
    SEED_CLUSTER,
    SEED_SPLIT,
    SWEEP_AXES,
    PipelineError,
    experiment_config,
    metric_accuracy,
    metric_asr,
    base_accuracies,
    read_config_file,
    run_pipeline,
    sweep_axis,
)
from .models import load_ensemble, save_ensemble, train_ensemble


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    parser.add_argument("--m", type=int, help="number of concept groups")
    parser.add_argument("--p", type=float, help="injection rate")
    parser.add_argument("--trigger-size", type=int, dest="trigger_size")
    parser.add_argument("--target-class", type=int, dest="target_class")
    parser.add_argument("--mode", choices=["cat", "cat+"], help="attack mode")
    parser.add_argument("--out", help="output directory")


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    mapping = {}
    for key in ("seed", "m", "p", "trigger_size", "target_class", "mode", "out"):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    return mapping


def _config(args: argparse.Namespace):
    return experiment_config(read_config_file(args.config), _overrides(args))


def _require_out(config) -> Path:
    if not config.out_dir:
        raise ValueError("an output directory is required (--out or [run] out)")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen(args) -> int:
    config = _config(args)
    if config.synthetic is None:
        raise ValueError("gen requires a synthetic dataset source")
    out = _require_out(config)
    full = generate_synthetic(config.synthetic)
    train, test = split_dataset(full, config.test_fraction, config.seed + SEED_SPLIT)
    save_dataset(train, out / "train.jsonl")
    save_dataset(test, out / "test.jsonl")
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return 0


def _cmd_attack(args) -> int:
    config = _config(args)
    out = _require_out(config)
    train = load_dataset(args.data)
    trigger = select_trigger(train, config.attack)
    poisoned, poisoned_ids = poison_dataset(train, trigger, config.attack)
    write_trigger(trigger, out / "trigger.json", mode=config.attack.mode,
                  seed=config.attack.seed, target_class=config.attack.target_class)
    save_dataset(poisoned, out / "train_poisoned.jsonl")
    (out / "poisoned_ids.json").write_text(json.dumps(list(poisoned_ids)) + "\n", encoding="utf-8")
    print(f"trigger size {trigger.size}, poisoned {len(poisoned_ids)} of {len(train)} samples")
    return 0


def _cmd_cluster(args) -> int:
    config = _config(args)
    out = _require_out(config)
    vocabulary = load_vocabulary(args.vocab)
    assignment = kmeans_cluster(embed_concepts(vocabulary), config.group_count,
                                config.seed + SEED_CLUSTER)
    write_assignment(assignment, out / "assignment.json")
    sizes = [len(g) for g in assignment.groups()]
    print(f"assigned {assignment.concept_count} concepts to {assignment.m} groups, sizes {sizes}")
    return 0


def _cmd_train(args) -> int:
    config = _config(args)
    out = _require_out(config)
    train = load_dataset(args.data)
    assignment = read_assignment(args.assignment)
    model = train_ensemble(train, assignment, config.training)
    save_ensemble(model, out / "model")
    print(f"trained {assignment.m} base classifiers on {len(train)} samples -> {out / 'model'}")
    return 0


def _cmd_eval(args) -> int:
    config = _config(args)
    out = _require_out(config)
    model = load_ensemble(args.model)
    test = load_dataset(args.test, class_count=model.class_count)
    accuracy = metric_accuracy(model, test)
    lines = [f"accuracy,{100 * accuracy:.2f}"]
    if args.trigger:
        trigger, meta = read_trigger(args.trigger)
        target = args.target_class or meta.get("target_class") or config.attack.target_class
        asr = metric_asr(model, test, trigger, int(target))
        lines.append(f"asr,{100 * asr:.2f}")
    for j, acc in enumerate(base_accuracies(model, test), start=1):
        lines.append(f"base_{j}_accuracy,{100 * acc:.2f}")
    (out / "eval.csv").write_text("metric,value\n" + "\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line.replace(",", " = "))
    return 0


def _cmd_certify(args) -> int:
    config = _config(args)
    out = _require_out(config)
    model = load_ensemble(args.model)
    test = load_dataset(args.test, class_count=model.class_count)
    t_max = args.t_max if args.t_max is not None else config.certify_t_max
    report = build_certification_report(
        model, test, range(min(t_max, model.assignment.m) + 1),
        joint_budget=config.joint_budget,
    )
    write_certification_csv(report, out / "certification.csv")
    write_certification_summary(report, out / "certification_summary.json")
    for t in sorted(report.independent_accuracy):
        print(f"t={t}: independent {100 * report.independent_accuracy[t]:.2f}% "
              f"joint {100 * report.joint_accuracy[t]:.2f}%")
    return 0


def _cmd_run(args) -> int:
    config = _config(args)
    result = run_pipeline(config)
    row = result.metrics
    print(f"baseline: clean {100 * row.baseline_clean_acc:.2f}% asr {100 * row.baseline_asr:.2f}%")
    print(f"ensemble: clean {100 * row.ensemble_clean_acc:.2f}% asr {100 * row.ensemble_asr:.2f}%")
    if config.out_dir:
        print(f"artifacts in {config.out_dir}")
    return 0


def _parse_axis_values(axis: str, raw: str) -> list:
    parts = [p for p in raw.split(",") if p]
    if axis == "p":
        return [float(p) for p in parts]
    return [int(p) for p in parts]


def _cmd_sweep(args) -> int:
    config = _config(args)
    values = _parse_axis_values(args.axis, args.values)
    rows = sweep_axis(config, args.axis, values, chart=not args.no_chart)
    for value, row in zip(values, rows):
        print(f"{args.axis}={value}: ensemble asr {100 * row.ensemble_asr:.2f}% "
              f"clean {100 * row.ensemble_clean_acc:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conceptguard",
        description="Concept-level backdoor attacks and the partitioned-ensemble certified defense",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic train/test dataset")
    _add_common(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("attack", help="select a trigger and poison a training set")
    _add_common(p)
    p.add_argument("--data", required=True, help="training dataset file")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("cluster", help="embed concept texts and build a group assignment")
    _add_common(p)
    p.add_argument("--vocab", required=True, help="vocabulary sidecar file")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("train", help="train the partitioned ensemble")
    _add_common(p)
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--assignment", required=True, help="assignment.json")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="accuracy and attack success rate of a model bundle")
    _add_common(p)
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--test", required=True, help="test dataset file")
    p.add_argument("--trigger", help="trigger.json for ASR")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("certify", help="certified accuracy report for a model bundle")
    _add_common(p)
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--test", required=True, help="test dataset file")
    p.add_argument("--t-max", type=int, dest="t_max", help="largest trigger budget")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("sweep", help="run the pipeline over an axis of values")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=list(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--no-chart", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("run", help="full pipeline: attack, defend, evaluate, certify")
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
