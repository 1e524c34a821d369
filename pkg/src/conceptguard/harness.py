"""Experiment harness: attack -> defend -> evaluate -> certify, plus sweeps.

A run trains four models from one seeded configuration: the undefended
baseline (m = 1) and the partitioned ensemble, each on both the clean and the
poisoned training set. It reports clean accuracy, accuracy after attack, and
attack success rate for baseline and ensemble, per-base accuracies, and the
certified-accuracy tables of the clean-trained ensemble. All file writes stay
inside the run's output directory and every CSV cell is reproducible
byte-for-byte from (config, seed).

Stage seeds derive from the single master seed by fixed offsets:
dataset = seed, split = seed + 1, attack = seed + 2, clustering = seed + 3,
training = seed + 4 (base classifier j adds its group index on top).
"""

from __future__ import annotations

import configparser
import json
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .attack import (
    AttackConfig,
    Trigger,
    attack_test_set,
    poison_dataset,
    select_trigger,
    write_trigger,
)
from .certify import (
    CertificationReport,
    build_certification_report,
    write_certification_csv,
    write_certification_summary,
)
from .chart import write_line_chart
from .clustering import GroupAssignment, embed_concepts, kmeans_cluster, write_assignment
from .data import (
    ConceptDataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .models import (
    EnsembleModel,
    TrainingConfig,
    ensemble_predict_matrix,
    save_ensemble,
    train_direct,
    train_ensemble,
)

SEED_SPLIT = 1
SEED_ATTACK = 2
SEED_CLUSTER = 3
SEED_TRAIN = 4

SWEEP_AXES = ("m", "p", "trigger_size", "y_tc")


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names the failing stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: SyntheticSpec | None
    test_fraction: float
    train_path: str | None
    test_path: str | None
    attack: AttackConfig
    group_count: int
    training: TrainingConfig
    certify_t_max: int
    joint_budget: int
    seed: int
    out_dir: str | None

    def __post_init__(self):
        if self.group_count < 1:
            raise ValueError("group count m must be at least 1")
        if self.synthetic is None and not self.train_path:
            raise ValueError("either a synthetic spec or a train_path is required")
        if self.train_path and not self.test_path:
            raise ValueError("file-backed runs need a test_path")


# ---------------------------------------------------------------------------
# Config file: flat INI key/value schema with sections [dataset], [attack],
# [defense], [training], [run]. Any CLI flag overrides its config key.
# ---------------------------------------------------------------------------

CONFIG_DEFAULTS: dict[str, dict[str, str]] = {
    "dataset": {
        "source": "synthetic",
        "test_path": "",
        "class_count": "10",
        "concept_count": "60",
        "family_count": "6",
        "samples_per_class": "250",
        "activation_on": "0.95",
        "activation_off": "0.05",
        "test_fraction": "0.2",
    },
    "attack": {
        "mode": "cat",
        "target_class": "1",
        "injection_rate": "0.05",
        "trigger_size": "12",
    },
    "defense": {
        "groups": "6",
    },
    "training": {
        "learning_rate": "0.1",
        "epochs": "500",
        "weight_decay": "5e-5",
        "hidden_size": "0",
    },
    "run": {
        "seed": "7",
        "certify_t_max": "3",
        "joint_budget": "200000",
        "out": "",
    },
}


def read_config_file(path: str | Path | None) -> dict[str, dict[str, str]]:
    sections = {name: dict(values) for name, values in CONFIG_DEFAULTS.items()}
    if path is None:
        return sections
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    for name in parser.sections():
        if name not in sections:
            raise ValueError(f"unknown config section [{name}]")
        for key, value in parser.items(name):
            if key not in sections[name]:
                raise ValueError(f"unknown config key '{key}' in section [{name}]")
            sections[name][key] = value
    return sections


def experiment_config(sections: dict[str, dict[str, str]],
                      overrides: dict[str, object] | None = None) -> ExperimentConfig:
    """Resolve a config mapping plus CLI-style overrides into an ExperimentConfig."""
    overrides = dict(overrides or {})
    ds, atk, dfs, trn, run = (sections[k] for k in ("dataset", "attack", "defense", "training", "run"))

    seed = int(overrides.get("seed", run["seed"]))
    mode = str(overrides.get("mode", atk["mode"]))
    attack_cfg = AttackConfig(
        target_class=int(overrides.get("target_class", atk["target_class"])),
        injection_rate=float(overrides.get("p", atk["injection_rate"])),
        trigger_size=int(overrides.get("trigger_size", atk["trigger_size"])),
        mode=mode,
        seed=seed + SEED_ATTACK,
    )
    hidden = int(trn["hidden_size"])
    training_cfg = TrainingConfig(
        learning_rate=float(trn["learning_rate"]),
        epochs=int(trn["epochs"]),
        weight_decay=float(trn["weight_decay"]),
        hidden_size=hidden if hidden > 0 else None,
        seed=seed + SEED_TRAIN,
    )
    source = ds["source"]
    if source == "synthetic":
        synthetic = SyntheticSpec(
            class_count=int(ds["class_count"]),
            concept_count=int(ds["concept_count"]),
            family_count=int(ds["family_count"]),
            samples_per_class=int(ds["samples_per_class"]),
            activation_prob_on=float(ds["activation_on"]),
            activation_prob_off=float(ds["activation_off"]),
            seed=seed,
        )
        train_path = test_path = None
    else:
        synthetic = None
        train_path = source
        test_path = ds["test_path"] or None
    out = overrides.get("out", run["out"]) or None
    return ExperimentConfig(
        synthetic=synthetic,
        test_fraction=float(ds["test_fraction"]),
        train_path=train_path,
        test_path=test_path,
        attack=attack_cfg,
        group_count=int(overrides.get("m", dfs["groups"])),
        training=training_cfg,
        certify_t_max=int(run["certify_t_max"]),
        joint_budget=int(run["joint_budget"]),
        seed=seed,
        out_dir=str(out) if out else None,
    )


def echo_config(config: ExperimentConfig, path: str | Path) -> None:
    """Write the fully resolved configuration next to the run outputs."""
    parser = configparser.ConfigParser()
    if config.synthetic is not None:
        s = config.synthetic
        parser["dataset"] = {
            "source": "synthetic",
            "class_count": str(s.class_count),
            "concept_count": str(s.concept_count),
            "family_count": str(s.family_count),
            "samples_per_class": str(s.samples_per_class),
            "activation_on": repr(s.activation_prob_on),
            "activation_off": repr(s.activation_prob_off),
            "test_fraction": repr(config.test_fraction),
        }
    else:
        parser["dataset"] = {"source": config.train_path or "", "test_path": config.test_path or ""}
    parser["attack"] = {
        "mode": config.attack.mode,
        "target_class": str(config.attack.target_class),
        "injection_rate": repr(config.attack.injection_rate),
        "trigger_size": str(config.attack.trigger_size),
    }
    parser["defense"] = {"groups": str(config.group_count)}
    parser["training"] = {
        "learning_rate": repr(config.training.learning_rate),
        "epochs": str(config.training.epochs),
        "weight_decay": repr(config.training.weight_decay),
        "hidden_size": str(config.training.hidden_size or 0),
    }
    parser["run"] = {
        "seed": str(config.seed),
        "certify_t_max": str(config.certify_t_max),
        "joint_budget": str(config.joint_budget),
    }
    with open(str(path), "w", encoding="utf-8") as fh:
        parser.write(fh)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def metric_accuracy(model: EnsembleModel, dataset: ConceptDataset) -> float:
    """Fraction of samples whose ensemble prediction matches the label."""
    if not dataset.samples:
        raise ValueError("accuracy is undefined on an empty test set")
    predictions = ensemble_predict_matrix(model, dataset.concept_matrix)
    return float((predictions == dataset.labels).mean())


def metric_asr(model: EnsembleModel, dataset: ConceptDataset, trigger: Trigger,
               target_class: int) -> float:
    """Fraction of triggered non-target samples classified as the target class."""
    attacked = attack_test_set(dataset, trigger, target_class)
    if not attacked.samples:
        raise ValueError("attack success rate is undefined: no non-target samples")
    predictions = ensemble_predict_matrix(model, attacked.concept_matrix)
    return float((predictions == target_class).mean())


def base_accuracies(model: EnsembleModel, dataset: ConceptDataset) -> tuple[float, ...]:
    """Per-base-classifier accuracy on each group's restriction of the test set."""
    if not dataset.samples:
        raise ValueError("accuracy is undefined on an empty test set")
    matrix = dataset.concept_matrix.astype(float)
    labels = dataset.labels
    accs = []
    for clf, indices in zip(model.classifiers, model.assignment.groups()):
        accs.append(float((clf.predict(matrix[:, list(indices)]) == labels).mean()))
    return tuple(accs)


@dataclass(frozen=True)
class MetricsRow:
    """One experiment's headline numbers; fractions in [0, 1]."""

    group_count: int
    injection_rate: float
    trigger_size: int
    mode: str
    target_class: int
    baseline_original_acc: float
    baseline_clean_acc: float
    baseline_asr: float
    ensemble_original_acc: float
    ensemble_clean_acc: float
    ensemble_asr: float
    base_clean_accs: tuple[float, ...]
    independent_certified: tuple[tuple[int, float], ...]
    joint_certified: tuple[tuple[int, float], ...]

    @property
    def average_base_acc(self) -> float:
        return sum(self.base_clean_accs) / len(self.base_clean_accs)


def _pct(value: float) -> str:
    return f"{100.0 * value:.2f}"


def write_metrics_csv(rows: Sequence[MetricsRow], path: str | Path,
                      axis: str | None = None,
                      axis_values: Sequence[object] | None = None) -> None:
    """Metric table with percentages at 2 decimals; one row per experiment."""
    t_values = sorted({t for row in rows for t, _ in row.independent_certified})
    header = []
    if axis is not None:
        header.append("axis_value")
    header += [
        "m", "p", "trigger_size", "mode", "target_class",
        "baseline_original_acc", "baseline_clean_acc", "baseline_asr",
        "ensemble_original_acc", "ensemble_clean_acc", "ensemble_asr",
        "avg_base_acc", "base_accs",
    ]
    header += [f"independent_t{t}" for t in t_values]
    header += [f"joint_t{t}" for t in t_values]
    lines = [",".join(header)]
    for i, row in enumerate(rows):
        ind = dict(row.independent_certified)
        joint = dict(row.joint_certified)
        cells = []
        if axis is not None:
            cells.append(f"{axis_values[i]:g}" if isinstance(axis_values[i], float)
                         else str(axis_values[i]))
        cells += [
            str(row.group_count), f"{row.injection_rate:g}", str(row.trigger_size),
            row.mode, str(row.target_class),
            _pct(row.baseline_original_acc), _pct(row.baseline_clean_acc), _pct(row.baseline_asr),
            _pct(row.ensemble_original_acc), _pct(row.ensemble_clean_acc), _pct(row.ensemble_asr),
            _pct(row.average_base_acc), ";".join(_pct(a) for a in row.base_clean_accs),
        ]
        cells += [_pct(ind[t]) if t in ind else "" for t in t_values]
        cells += [_pct(joint[t]) if t in joint else "" for t in t_values]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunResult:
    metrics: MetricsRow
    certification: CertificationReport
    trigger: Trigger
    assignment: GroupAssignment
    poisoned_ids: tuple[int, ...]
    train_clean: ConceptDataset
    train_poisoned: ConceptDataset
    test: ConceptDataset
    baseline_clean: EnsembleModel
    baseline_attacked: EnsembleModel
    ensemble_clean: EnsembleModel
    ensemble_attacked: EnsembleModel


def _load_split(config: ExperimentConfig) -> tuple[ConceptDataset, ConceptDataset]:
    if config.synthetic is not None:
        full = generate_synthetic(config.synthetic)
        return split_dataset(full, config.test_fraction, config.seed + SEED_SPLIT)
    train = load_dataset(config.train_path)
    test = load_dataset(config.test_path, class_count=train.class_count)
    return train, test


def run_pipeline(config: ExperimentConfig) -> RunResult:
    """Execute the full attack/defense/certification experiment for one config."""
    with _stage("dataset"):
        train_clean, test = _load_split(config)

    with _stage("trigger-selection"):
        trigger = select_trigger(train_clean, config.attack)

    with _stage("poison"):
        train_poisoned, poisoned_ids = poison_dataset(train_clean, trigger, config.attack)

    with _stage("cluster"):
        embeddings = embed_concepts(train_clean.vocabulary)
        assignment = kmeans_cluster(embeddings, config.group_count, config.seed + SEED_CLUSTER)

    with _stage("train"):
        baseline_clean = train_direct(train_clean, config.training)
        baseline_attacked = train_direct(train_poisoned, config.training)
        ensemble_clean = train_ensemble(train_clean, assignment, config.training)
        ensemble_attacked = train_ensemble(train_poisoned, assignment, config.training)

    with _stage("evaluate"):
        y_tc = config.attack.target_class
        row = MetricsRow(
            group_count=config.group_count,
            injection_rate=config.attack.injection_rate,
            trigger_size=trigger.size,
            mode=config.attack.mode,
            target_class=y_tc,
            baseline_original_acc=metric_accuracy(baseline_clean, test),
            baseline_clean_acc=metric_accuracy(baseline_attacked, test),
            baseline_asr=metric_asr(baseline_attacked, test, trigger, y_tc),
            ensemble_original_acc=metric_accuracy(ensemble_clean, test),
            ensemble_clean_acc=metric_accuracy(ensemble_attacked, test),
            ensemble_asr=metric_asr(ensemble_attacked, test, trigger, y_tc),
            base_clean_accs=base_accuracies(ensemble_attacked, test),
            independent_certified=(),
            joint_certified=(),
        )

    with _stage("certify"):
        t_values = range(min(config.certify_t_max, config.group_count) + 1)
        report = build_certification_report(
            ensemble_clean, test, t_values, joint_budget=config.joint_budget
        )
        row = replace(
            row,
            independent_certified=tuple(sorted(report.independent_accuracy.items())),
            joint_certified=tuple(sorted(report.joint_accuracy.items())),
        )

    result = RunResult(
        metrics=row,
        certification=report,
        trigger=trigger,
        assignment=assignment,
        poisoned_ids=poisoned_ids,
        train_clean=train_clean,
        train_poisoned=train_poisoned,
        test=test,
        baseline_clean=baseline_clean,
        baseline_attacked=baseline_attacked,
        ensemble_clean=ensemble_clean,
        ensemble_attacked=ensemble_attacked,
    )
    if config.out_dir:
        with _stage("write-artifacts"):
            _write_run_artifacts(config, result)
    return result


def _write_run_artifacts(config: ExperimentConfig, result: RunResult) -> None:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(config, out / "config.ini")
    write_trigger(
        result.trigger, out / "trigger.json",
        mode=config.attack.mode, seed=config.attack.seed,
        target_class=config.attack.target_class,
    )
    write_assignment(result.assignment, out / "assignment.json")
    (out / "poisoned_ids.json").write_text(
        json.dumps(list(result.poisoned_ids)) + "\n", encoding="utf-8"
    )
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    save_dataset(result.train_clean, data_dir / "train_clean.jsonl")
    save_dataset(result.train_poisoned, data_dir / "train_poisoned.jsonl")
    save_dataset(result.test, data_dir / "test.jsonl")
    training_manifest = {
        "training": {
            "learning_rate": config.training.learning_rate,
            "epochs": config.training.epochs,
            "weight_decay": config.training.weight_decay,
            "hidden_size": config.training.hidden_size,
            "seed": config.training.seed,
        }
    }
    models_dir = out / "models"
    save_ensemble(result.ensemble_attacked, models_dir / "ensemble_attacked", training_manifest)
    save_ensemble(result.ensemble_clean, models_dir / "ensemble_clean", training_manifest)
    save_ensemble(result.baseline_attacked, models_dir / "baseline_attacked", training_manifest)
    save_ensemble(result.baseline_clean, models_dir / "baseline_clean", training_manifest)
    write_metrics_csv([result.metrics], out / "metrics.csv")
    write_certification_csv(result.certification, out / "certification.csv")
    write_certification_summary(result.certification, out / "certification_summary.json")


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _config_for_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "m":
        return replace(config, group_count=int(value))
    if axis == "p":
        return replace(config, attack=replace(config.attack, injection_rate=float(value)))
    if axis == "trigger_size":
        return replace(config, attack=replace(config.attack, trigger_size=int(value)))
    if axis == "y_tc":
        return replace(config, attack=replace(config.attack, target_class=int(value)))
    raise ValueError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")


def sweep_axis(config: ExperimentConfig, axis: str, values: Sequence[object],
               *, chart: bool = True) -> list[MetricsRow]:
    """Run the pipeline once per axis value; write sweep.csv and chart.svg."""
    if not values:
        raise ValueError("sweep needs at least one axis value")
    rows = []
    out = Path(config.out_dir) if config.out_dir else None
    for value in values:
        run_cfg = _config_for_axis(config, axis, value)
        if out is not None:
            run_cfg = replace(run_cfg, out_dir=str(out / f"{axis}_{value:g}"
                                                    if isinstance(value, float)
                                                    else out / f"{axis}_{value}"))
        rows.append(run_pipeline(run_cfg).metrics)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(rows, out / "sweep.csv", axis=axis, axis_values=values)
        if chart:
            numeric = [float(v) for v in values]
            write_line_chart(
                out / "chart.svg",
                numeric,
                {
                    "ensemble ASR": [row.ensemble_asr for row in rows],
                    "ensemble ACC": [row.ensemble_clean_acc for row in rows],
                },
                title=f"defense metrics vs {axis}",
                x_label=axis,
                y_label="fraction",
            )
    return rows
