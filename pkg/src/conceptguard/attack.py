"""Concept-level backdoor attacks.

Two trigger selectors are provided: the low-relevance filter (CAT), which
picks the concepts a linear probe cares least about and sets them to the
dataset's off-polarity value, and the greedy target-correlation selector
(CAT+), which grows the trigger one (concept, value) pair at a time by
maximizing a Z-score against the target class. Poisoning replaces a seeded
random subset of non-target training samples with triggered, relabeled
copies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ConceptDataset, Sample, dataset_polarity
from .models import TrainingConfig, fit_classifier
from .rng import rng_from_seed

MODE_CAT = "cat"
MODE_CAT_PLUS = "cat+"

NO_MATCH = float("-inf")


@dataclass(frozen=True)
class Trigger:
    """Ordered (concept_index, value) pairs; indices 0-based and unique.

    Size 0 is the identity trigger. Serialized form uses 1-based indices.
    """

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        entries = tuple((int(k), int(v)) for k, v in self.entries)
        object.__setattr__(self, "entries", entries)
        indices = [k for k, _ in entries]
        if len(set(indices)) != len(indices):
            raise ValueError("trigger concept indices must be unique")
        if any(k < 0 for k in indices):
            raise ValueError("trigger concept indices must be non-negative")
        if any(v not in (0, 1) for _, v in entries):
            raise ValueError("trigger values must be 0 or 1")

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def concept_indices(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.entries)


@dataclass(frozen=True)
class AttackConfig:
    target_class: int
    injection_rate: float
    trigger_size: int
    mode: str = MODE_CAT
    seed: int = 0

    def __post_init__(self):
        if self.target_class < 1:
            raise ValueError("target_class is 1-based")
        if not 0.0 <= self.injection_rate <= 1.0:
            raise ValueError("injection_rate must lie in [0, 1]")
        if self.trigger_size < 0:
            raise ValueError("trigger_size must be non-negative")
        if self.mode not in (MODE_CAT, MODE_CAT_PLUS):
            raise ValueError(f"unknown attack mode {self.mode!r}")


def embed_trigger(concepts: Sequence[int], trigger: Trigger) -> tuple[int, ...]:
    """Overwrite the trigger positions with the trigger values; input untouched."""
    out = list(concepts)
    for k, v in trigger.entries:
        if k >= len(out):
            raise ValueError(f"trigger index {k} out of range for vector of length {len(out)}")
        out[k] = v
    return tuple(out)


def least_relevant(relevance: np.ndarray, k: int) -> tuple[int, ...]:
    """Indices of the k smallest relevance scores; ties go to the smaller index."""
    order = np.argsort(np.asarray(relevance, dtype=float), kind="stable")
    return tuple(sorted(int(i) for i in order[:k]))


def _require_classes(dataset: ConceptDataset) -> None:
    if len(np.unique(dataset.labels)) < 2:
        raise ValueError("trigger selection needs at least two classes in the dataset")


def select_trigger_cat(dataset: ConceptDataset, config: AttackConfig) -> Trigger:
    """Pick the trigger_size concepts least relevant to a clean linear probe.

    Relevance of concept k is the summed absolute probe weight across classes.
    All trigger values are 0 on a positive-polarity dataset and 1 otherwise.
    """
    if config.mode != MODE_CAT:
        raise ValueError(f"select_trigger_cat requires mode {MODE_CAT!r}")
    d = dataset.vocabulary.concept_count
    if config.trigger_size > d:
        raise ValueError(f"trigger_size {config.trigger_size} exceeds concept count {d}")
    _require_classes(dataset)
    probe = fit_classifier(
        dataset.concept_matrix.astype(float), dataset.labels, dataset.class_count,
        TrainingConfig(seed=config.seed),
    )
    relevance = np.abs(probe.weights[0]).sum(axis=1)
    value = 0 if dataset_polarity(dataset) == "positive" else 1
    return Trigger(tuple((k, value) for k in least_relevant(relevance, config.trigger_size)))


def zscore(dataset: ConceptDataset, partial: Trigger, candidate: tuple[int, int],
           target_class: int) -> float:
    """Correlation of the extended trigger pattern with the target class.

    With p0 the target-class base rate and p the target-class rate among
    samples matching every chosen (index, value) pair, the score is
    p * (p - p0) / (p0 * (1 - p0)). Returns -inf when nothing matches or the
    matched set contains no target samples.
    """
    k, v = int(candidate[0]), int(candidate[1])
    if k in partial.concept_indices:
        raise ValueError(f"candidate concept {k} already in the trigger")
    labels = dataset.labels
    n = len(labels)
    if n == 0:
        raise ValueError("cannot score candidates on an empty dataset")
    n_target = int((labels == target_class).sum())
    p0 = n_target / n
    if p0 in (0.0, 1.0):
        raise ValueError(f"target class {target_class} is absent or universal (p0={p0})")
    matrix = dataset.concept_matrix
    mask = np.ones(n, dtype=bool)
    for ki, vi in partial.entries + ((k, v),):
        mask &= matrix[:, ki] == vi
    matched = int(mask.sum())
    if matched == 0:
        return NO_MATCH
    p_cond = int((mask & (labels == target_class)).sum()) / matched
    if p_cond == 0.0:
        return NO_MATCH
    return p_cond * (p_cond - p0) / (p0 * (1.0 - p0))


def select_trigger_cat_plus(dataset: ConceptDataset, config: AttackConfig) -> Trigger:
    """Greedy trigger growth, one (index, value in {0,1}) pair per step.

    Each step takes the Z-score maximum over every unused pair; ties resolve
    to the smaller index, then value 0 before 1.
    """
    if config.mode != MODE_CAT_PLUS:
        raise ValueError(f"select_trigger_cat_plus requires mode {MODE_CAT_PLUS!r}")
    d = dataset.vocabulary.concept_count
    if config.trigger_size > d:
        raise ValueError(f"trigger_size {config.trigger_size} exceeds concept count {d}")
    if config.trigger_size == 0:
        return Trigger(())
    _require_classes(dataset)
    chosen: list[tuple[int, int]] = []
    for _ in range(config.trigger_size):
        partial = Trigger(tuple(chosen))
        used = set(partial.concept_indices)
        best: tuple[int, int] | None = None
        best_z = NO_MATCH
        for k in range(d):
            if k in used:
                continue
            for v in (0, 1):
                z = zscore(dataset, partial, (k, v), config.target_class)
                if z > best_z:
                    best, best_z = (k, v), z
        if best is None:
            raise ValueError("trigger is unreachable: every candidate extension matches nothing")
        chosen.append(best)
    return Trigger(tuple(chosen))


def select_trigger(dataset: ConceptDataset, config: AttackConfig) -> Trigger:
    if config.mode == MODE_CAT:
        return select_trigger_cat(dataset, config)
    return select_trigger_cat_plus(dataset, config)


def poison_dataset(dataset: ConceptDataset, trigger: Trigger,
                   config: AttackConfig) -> tuple[ConceptDataset, tuple[int, ...]]:
    """Replace floor(p * n) seeded-random non-target samples with triggered copies.

    Poisoned samples keep their id, get the trigger embedded, and are
    relabeled to the target class; everything else is untouched. Returns the
    new dataset and the sorted poisoned ids.
    """
    n = len(dataset.samples)
    count = math.floor(config.injection_rate * n + 1e-9)
    non_target = [i for i, s in enumerate(dataset.samples) if s.label != config.target_class]
    if count > len(non_target):
        raise ValueError(
            f"injection needs {count} non-target samples but only {len(non_target)} exist"
        )
    rng = rng_from_seed(config.seed)
    picked = rng.choice(len(non_target), size=count, replace=False) if count else ()
    positions = {non_target[int(i)] for i in picked}
    samples = tuple(
        Sample(s.id, embed_trigger(s.concepts, trigger), config.target_class)
        if i in positions else s
        for i, s in enumerate(dataset.samples)
    )
    poisoned_ids = tuple(sorted(dataset.samples[i].id for i in positions))
    return ConceptDataset(dataset.vocabulary, samples, dataset.class_count), poisoned_ids


def attack_test_set(dataset: ConceptDataset, trigger: Trigger, target_class: int) -> ConceptDataset:
    """Triggered copies of every non-target sample; ground-truth labels kept."""
    samples = tuple(
        Sample(s.id, embed_trigger(s.concepts, trigger), s.label)
        for s in dataset.samples
        if s.label != target_class
    )
    return ConceptDataset(dataset.vocabulary, samples, dataset.class_count)


def write_trigger(trigger: Trigger, path: str | Path, *, mode: str | None = None,
                  seed: int | None = None, target_class: int | None = None) -> None:
    """Serialize with 1-based concept indices plus provenance fields."""
    payload = {
        "entries": [[k + 1, v] for k, v in trigger.entries],
        "mode": mode,
        "seed": seed,
        "target_class": target_class,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_trigger(path: str | Path) -> tuple[Trigger, dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    trigger = Trigger(tuple((int(k) - 1, int(v)) for k, v in data["entries"]))
    meta = {key: data.get(key) for key in ("mode", "seed", "target_class")}
    return trigger, meta
