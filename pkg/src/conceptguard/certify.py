"""Vote-margin certification for the partitioned ensemble.

The certified size of a test vector is half the gap between the winner's
votes and the strongest tie-adjusted rival:

    sigma = (N_y - max_{l != y}(N_l + [y > l])) / 2

Any trigger touching at most sigma groups provably cannot change the
ensemble prediction. Certified accuracy comes in two flavors: independent
(each sample certified on its own margin at budget t) and joint (the same
<= t groups are corrupted for every sample; the reported value is the
minimum accuracy over all group subsets of size t). Exhaustive flip oracles
validate both routes by brute force rather than by the margin formula.

Certified sizes are exact half-integer rationals and every t <= sigma
comparison is exact, never floating-rounded.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import ConceptDataset
from .models import EnsembleModel, VoteCounts, group_prediction_matrix, votes_from_predictions


def _counts_list(counts: VoteCounts | Sequence[int]) -> list[int]:
    if isinstance(counts, VoteCounts):
        return list(counts.counts)
    return [int(c) for c in counts]


def _winner(counts: Sequence[int]) -> int:
    """Argmax with ties to the smaller class index, as 1-based label."""
    return int(np.argmax(np.asarray(counts))) + 1


def certified_size(counts: VoteCounts | Sequence[int], y: int) -> Fraction:
    """Half the margin of winner y over the strongest tie-adjusted rival.

    Raises if y is not the tie-broken vote winner; the result is then always
    a non-negative multiple of 1/2, at most m/2.
    """
    c = _counts_list(counts)
    if len(c) < 2:
        raise ValueError("certified size needs at least two classes")
    if not 1 <= y <= len(c):
        raise ValueError(f"label {y} out of range 1..{len(c)}")
    if _winner(c) != y:
        raise ValueError(f"label {y} is not the vote winner for counts {c}")
    rival = max(c[l - 1] + (1 if y > l else 0) for l in range(1, len(c) + 1) if l != y)
    return Fraction(c[y - 1] - rival, 2)


@lru_cache(maxsize=None)
def _compositions(total: int, parts: int) -> np.ndarray:
    """All length-`parts` vectors of non-negative ints summing to `total`."""
    if parts == 1:
        out = np.array([[total]], dtype=int)
    else:
        rows = []
        for first in range(total + 1):
            for rest in _compositions(total - first, parts - 1):
                rows.append([first, *rest])
        out = np.array(rows, dtype=int)
    out.flags.writeable = False
    return out


def flip_oracle(counts: VoteCounts | Sequence[int], y: int, k: int,
                *, budget: int = 5_000_000) -> bool:
    """Exhaustively re-assign up to k votes to arbitrary classes.

    True iff every reachable count profile still has tie-broken argmax y.
    This is a brute-force search over (removal, addition) vote multisets, kept
    deliberately independent of the certified-size formula.
    """
    c = np.array(_counts_list(counts), dtype=int)
    m = int(c.sum())
    num_classes = len(c)
    if not 0 <= k <= m:
        raise ValueError(f"flip budget {k} must lie in [0, {m}]")
    pairs = sum(math.comb(r + num_classes - 1, num_classes - 1) ** 2 for r in range(k + 1))
    if pairs > budget:
        raise ValueError(f"{pairs} reassignment pairs exceed the budget of {budget}")
    y0 = y - 1
    for moved in range(k + 1):
        removals = _compositions(moved, num_classes)
        feasible = removals[(removals <= c).all(axis=1)]
        if len(feasible) == 0:
            continue
        additions = _compositions(moved, num_classes)
        candidates = c[None, None, :] - feasible[:, None, :] + additions[None, :, :]
        if (candidates.argmax(axis=2) != y0).any():
            return False
    return True


@dataclass(frozen=True)
class SampleRecord:
    """Clean-model evaluation of one test sample."""

    sample_id: int
    group_predictions: tuple[int, ...]
    vote_counts: tuple[int, ...]
    prediction: int
    label: int
    certified_size: Fraction


def records_from_predictions(predictions: np.ndarray, labels: Sequence[int],
                             class_count: int,
                             sample_ids: Sequence[int] | None = None) -> tuple[SampleRecord, ...]:
    """Build per-sample records from an (n, m) per-group prediction matrix."""
    preds = np.asarray(predictions, dtype=int)
    labels = np.asarray(labels, dtype=int)
    votes = votes_from_predictions(preds, class_count)
    ids = range(len(labels)) if sample_ids is None else sample_ids
    records = []
    for i, sid in zip(range(len(labels)), ids):
        counts = tuple(int(v) for v in votes[i])
        y = _winner(counts)
        records.append(SampleRecord(
            sample_id=int(sid),
            group_predictions=tuple(int(p) for p in preds[i]),
            vote_counts=counts,
            prediction=y,
            label=int(labels[i]),
            certified_size=certified_size(counts, y),
        ))
    return tuple(records)


def make_records(model: EnsembleModel, dataset: ConceptDataset) -> tuple[SampleRecord, ...]:
    if not dataset.samples:
        raise ValueError("cannot certify an empty test set")
    preds = group_prediction_matrix(model, dataset.concept_matrix)
    ids = [s.id for s in dataset.samples]
    return records_from_predictions(preds, dataset.labels, model.class_count, ids)


def independent_certified_accuracy_from_records(records: Sequence[SampleRecord], t) -> float:
    if not records:
        raise ValueError("cannot certify an empty test set")
    if t < 0:
        raise ValueError("trigger budget t must be non-negative")
    hits = sum(1 for r in records if r.prediction == r.label and r.certified_size >= t)
    return hits / len(records)


def independent_certified_accuracy(model: EnsembleModel, dataset: ConceptDataset, t) -> float:
    """Fraction of samples that are correct and certified at trigger budget t."""
    return independent_certified_accuracy_from_records(make_records(model, dataset), t)


def joint_condition(record: SampleRecord, group_subset: Iterable[int], y: int) -> bool:
    """Does the prediction survive adversarial corruption of the given groups?

    Evaluates, with 1-based group indices J:

        N_y - sum_{j in J} [pred_j = y]
            >= max_{l != y}(N_l + [y > l] + sum_{j in J} [pred_j != l])
    """
    counts = record.vote_counts
    preds = record.group_predictions
    subset = list(group_subset)
    num_classes = len(counts)
    if num_classes < 2:
        return True
    lhs = counts[y - 1] - sum(1 for j in subset if preds[j - 1] == y)
    rhs = max(
        counts[l - 1] + (1 if y > l else 0) + sum(1 for j in subset if preds[j - 1] != l)
        for l in range(1, num_classes + 1)
        if l != y
    )
    return lhs >= rhs


def joint_certified_accuracy_from_records(records: Sequence[SampleRecord], group_count: int,
                                          t: int, *, budget: int = 200_000) -> float:
    """Worst-case accuracy over all size-t group subsets, vectorized."""
    if not records:
        raise ValueError("cannot certify an empty test set")
    if not 0 <= t <= group_count:
        raise ValueError(f"trigger budget {t} must lie in [0, {group_count}]")
    n_subsets = math.comb(group_count, t)
    if n_subsets > budget:
        raise ValueError(
            f"joint certification would enumerate {n_subsets} group subsets, "
            f"exceeding the budget of {budget}"
        )
    preds = np.array([r.group_predictions for r in records], dtype=int)
    counts = np.array([r.vote_counts for r in records], dtype=int)
    y = np.array([r.prediction for r in records], dtype=int)
    correct = np.array([r.prediction == r.label for r in records])
    n, num_classes = counts.shape
    class_values = np.arange(1, num_classes + 1)
    count_y = counts[np.arange(n), y - 1]
    worst = None
    for subset in combinations(range(group_count), t):
        sub = preds[:, list(subset)]
        lhs = count_y - (sub == y[:, None]).sum(axis=1)
        rival = counts + (y[:, None] > class_values[None, :]).astype(int)
        rival = rival + (sub[:, :, None] != class_values[None, None, :]).sum(axis=1)
        rival[np.arange(n), y - 1] = np.iinfo(int).min
        ok = lhs >= rival.max(axis=1)
        passed = int((ok & correct).sum())
        worst = passed if worst is None else min(worst, passed)
    return worst / n


def joint_certified_accuracy(model: EnsembleModel, dataset: ConceptDataset, t: int,
                             *, budget: int = 200_000) -> float:
    """Minimum certified accuracy when the same t groups are corrupted everywhere."""
    records = make_records(model, dataset)
    return joint_certified_accuracy_from_records(records, model.assignment.m, t, budget=budget)


def adversarial_joint_accuracy(predictions: np.ndarray, labels: Sequence[int],
                               class_count: int, t: int) -> float:
    """Brute-force oracle for joint certification.

    For every size-t group subset, every sample, and every possible
    reassignment of the corrupted groups' votes, recompute the tie-broken
    argmax; a sample survives a subset iff it is correct and no reassignment
    changes its prediction. Returns the minimum surviving fraction.
    """
    preds = np.asarray(predictions, dtype=int)
    labels = np.asarray(labels, dtype=int)
    n, m = preds.shape
    if not 0 <= t <= m:
        raise ValueError(f"trigger budget {t} must lie in [0, {m}]")
    votes = votes_from_predictions(preds, class_count)
    clean = votes.argmax(axis=1) + 1
    worst = None
    for subset in combinations(range(m), t):
        survived = 0
        for i in range(n):
            if clean[i] != labels[i]:
                continue
            base = votes[i].copy()
            for j in subset:
                base[preds[i, j] - 1] -= 1
            flipped = False
            for assignment in product(range(1, class_count + 1), repeat=t):
                trial = base.copy()
                for label in assignment:
                    trial[label - 1] += 1
                if int(trial.argmax()) + 1 != clean[i]:
                    flipped = True
                    break
            if not flipped:
                survived += 1
        worst = survived if worst is None else min(worst, survived)
    return worst / n


@dataclass(frozen=True)
class CertificationReport:
    """Per-sample clean-model records plus certified-accuracy tables."""

    records: tuple[SampleRecord, ...]
    group_count: int
    independent_accuracy: dict[int, float]
    joint_accuracy: dict[int, float]


def build_certification_report(model: EnsembleModel, dataset: ConceptDataset,
                               t_values: Sequence[int] | None = None,
                               *, joint_budget: int = 200_000) -> CertificationReport:
    records = make_records(model, dataset)
    m = model.assignment.m
    if t_values is None:
        t_values = range(min(m, 3) + 1)
    t_values = sorted(set(int(t) for t in t_values))
    independent = {t: independent_certified_accuracy_from_records(records, t) for t in t_values}
    joint = {
        t: joint_certified_accuracy_from_records(records, m, t, budget=joint_budget)
        for t in t_values
    }
    return CertificationReport(records, m, independent, joint)


def write_certification_csv(report: CertificationReport, path: str | Path) -> None:
    """Per-sample rows id,y,y_test,sigma; sigma printed as an exact half-integer."""
    with open(str(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "y", "y_test", "sigma"])
        for r in report.records:
            writer.writerow([r.sample_id, r.prediction, r.label, f"{float(r.certified_size):.1f}"])


def write_certification_summary(report: CertificationReport, path: str | Path) -> None:
    payload = {
        "group_count": report.group_count,
        "accuracy": {
            str(t): {
                "independent": report.independent_accuracy[t],
                "joint": report.joint_accuracy[t],
            }
            for t in sorted(report.independent_accuracy)
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
