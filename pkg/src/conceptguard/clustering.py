"""Concept-text embedding, deterministic k-means grouping, and dataset
partitioning by concept group.

Groups form a total, disjoint, covering partition of the concept indices with
no empty group, so a trigger touching ``|e|`` concepts can corrupt at most
``min(|e|, m)`` of the m sub-datasets. The same assignment object partitions
training and test data, which keeps the two stages aligned by construction.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .data import ConceptDataset, ConceptVocabulary, Sample
from .rng import rng_from_seed

KMEANS_TOL = 1e-6
KMEANS_MAX_ITER = 300
KMEANS_RESTARTS = 10

_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class GroupAssignment:
    """Total map concept index -> group index in {1..m}; every group non-empty."""

    group_of: tuple[int, ...]
    m: int

    def __post_init__(self):
        object.__setattr__(self, "group_of", tuple(int(g) for g in self.group_of))
        if self.m < 1:
            raise ValueError("group count must be at least 1")
        if not self.group_of:
            raise ValueError("assignment must cover at least one concept")
        present = set(self.group_of)
        if not present.issubset(range(1, self.m + 1)):
            raise ValueError(f"group indices must lie in 1..{self.m}")
        if present != set(range(1, self.m + 1)):
            missing = sorted(set(range(1, self.m + 1)) - present)
            raise ValueError(f"empty groups are not allowed, missing {missing}")

    @property
    def concept_count(self) -> int:
        return len(self.group_of)

    def group_indices(self, j: int) -> tuple[int, ...]:
        """Concept indices of group j, in ascending (original) order."""
        if not 1 <= j <= self.m:
            raise ValueError(f"group index {j} out of range 1..{self.m}")
        return tuple(i for i, g in enumerate(self.group_of) if g == j)

    def groups(self) -> tuple[tuple[int, ...], ...]:
        return tuple(self.group_indices(j) for j in range(1, self.m + 1))


def identity_assignment(concept_count: int) -> GroupAssignment:
    """Single group holding every concept; the undefended (m=1) layout."""
    return GroupAssignment((1,) * concept_count, 1)


@dataclass(frozen=True)
class SubDataset:
    """A dataset restricted to one group's concepts, sample order preserved."""

    group_index: int
    concept_indices: tuple[int, ...]
    samples: tuple[Sample, ...]
    class_count: int

    @cached_property
    def concept_matrix(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, len(self.concept_indices)), dtype=np.int64)
        return np.array([s.concepts for s in self.samples], dtype=np.int64)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


def embed_concepts(vocabulary: ConceptVocabulary) -> np.ndarray:
    """TF-IDF rows for each concept text, L2-normalized.

    Tokens are lowercase alphanumeric runs. IDF is ln(d / df); tokens present
    in every text therefore carry zero weight. Rows whose tokens all have zero
    weight stay zero vectors.
    """
    token_lists = [_TOKEN.findall(text.lower()) for text in vocabulary.texts]
    df = Counter(token for tokens in token_lists for token in set(tokens))
    tokens = sorted(df)
    column = {t: i for i, t in enumerate(tokens)}
    d = len(token_lists)
    matrix = np.zeros((d, len(tokens)))
    for row, toks in enumerate(token_lists):
        for t in toks:
            matrix[row, column[t]] += 1.0
    idf = np.array([math.log(d / df[t]) for t in tokens])
    matrix *= idf
    norms = np.linalg.norm(matrix, axis=1)
    nonzero = norms > 0
    matrix[nonzero] /= norms[nonzero, None]
    return matrix


def _kmeans_pp(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: D^2-sample several candidates per step and keep the
    one that lowers the potential most (ties to the earlier candidate)."""
    n_candidates = 2 + int(math.log(m)) if m > 1 else 1
    first = int(rng.integers(len(points)))
    chosen = {first}
    centroids = [points[first]]
    dist2 = ((points - points[first]) ** 2).sum(axis=1)
    while len(centroids) < m:
        total = dist2.sum()
        if total > 0:
            candidates = rng.choice(len(points), size=n_candidates, p=dist2 / total)
            best_idx, best_dist2, best_potential = None, None, None
            for idx in (int(c) for c in candidates):
                cand_dist2 = np.minimum(dist2, ((points - points[idx]) ** 2).sum(axis=1))
                potential = cand_dist2.sum()
                if best_potential is None or potential < best_potential:
                    best_idx, best_dist2, best_potential = idx, cand_dist2, potential
            idx, dist2 = best_idx, best_dist2
        else:
            # all remaining points coincide with a centroid
            idx = min(i for i in range(len(points)) if i not in chosen)
            dist2 = np.minimum(dist2, ((points - points[idx]) ** 2).sum(axis=1))
        chosen.add(idx)
        centroids.append(points[idx])
    return np.array(centroids)


def _fill_empty(points: np.ndarray, centroids: np.ndarray, assign: np.ndarray, m: int) -> np.ndarray:
    # an empty cluster steals the point farthest from its current centroid,
    # never draining a singleton cluster
    for j in range(m):
        if (assign == j).any():
            continue
        counts = np.bincount(assign, minlength=m)
        distance = ((points - centroids[assign]) ** 2).sum(axis=1)
        distance[counts[assign] <= 1] = -1.0
        assign[int(distance.argmax())] = j
    return assign


def _lloyd(points: np.ndarray, centroids: np.ndarray, m: int) -> tuple[np.ndarray, float]:
    assign = np.zeros(len(points), dtype=int)
    for _ in range(KMEANS_MAX_ITER):
        dist2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = dist2.argmin(axis=1)
        assign = _fill_empty(points, centroids, assign, m)
        new_centroids = np.array([points[assign == j].mean(axis=0) for j in range(m)])
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < KMEANS_TOL:
            break
    inertia = float(((points - centroids[assign]) ** 2).sum())
    return assign, inertia


def kmeans_cluster(embeddings: np.ndarray, m: int, seed: int,
                   restarts: int = KMEANS_RESTARTS) -> GroupAssignment:
    """Group concept embeddings with seeded k-means++ and Lloyd iterations.

    Runs ``restarts`` independent k-means++ initializations (sub-seeded from
    ``seed``) and keeps the lowest-inertia solution; a single Lloyd descent is
    unreliable on near-orthogonal TF-IDF rows. Deterministic given
    (embeddings, m, seed): assignment ties go to the lowest centroid index,
    inertia ties to the earlier restart, and each descent stops once the
    largest centroid shift falls below ``KMEANS_TOL`` or at
    ``KMEANS_MAX_ITER`` rounds.
    """
    points = np.asarray(embeddings, dtype=float)
    d = len(points)
    if m < 1:
        raise ValueError("group count must be at least 1")
    if m > d:
        raise ValueError(f"cannot split {d} concepts into {m} groups")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    best_assign, best_inertia = None, None
    for restart in range(restarts):
        rng = rng_from_seed(seed, restart)
        centroids = _kmeans_pp(points, m, rng)
        assign, inertia = _lloyd(points, centroids, m)
        if best_inertia is None or inertia < best_inertia - 1e-12:
            best_assign, best_inertia = assign, inertia
    return GroupAssignment(tuple(int(g) + 1 for g in best_assign), m)


def partition_dataset(dataset: ConceptDataset, assignment: GroupAssignment) -> tuple[SubDataset, ...]:
    """Restrict the dataset to each group; order, ids and labels unchanged."""
    if assignment.concept_count != dataset.vocabulary.concept_count:
        raise ValueError(
            f"assignment covers {assignment.concept_count} concepts, "
            f"dataset has {dataset.vocabulary.concept_count}"
        )
    subs = []
    for j in range(1, assignment.m + 1):
        indices = assignment.group_indices(j)
        samples = tuple(
            Sample(s.id, tuple(s.concepts[i] for i in indices), s.label)
            for s in dataset.samples
        )
        subs.append(SubDataset(j, indices, samples, dataset.class_count))
    return tuple(subs)


def write_assignment(assignment: GroupAssignment, path: str | Path) -> None:
    payload = {"m": assignment.m, "group_of": list(assignment.group_of)}
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def read_assignment(path: str | Path) -> GroupAssignment:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return GroupAssignment(tuple(data["group_of"]), int(data["m"]))
