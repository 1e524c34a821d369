"""Concept vocabularies, binary concept datasets, dataset file formats, and a
synthetic generator that produces clusterable concept texts with
class-dependent activation patterns.

Inputs are opaque sample ids carrying a binary concept vector and a 1-based
class label; there is no image pipeline here. Concept values are strictly
binary. Datasets are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np

from .rng import rng_from_seed

Polarity = Literal["positive", "negative"]

_WHITESPACE = re.compile(r"\s+")


class DatasetFormatError(ValueError):
    """Malformed dataset file. ``line`` is the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ConceptVocabulary:
    """Ordered concept texts; position k is the identity of concept index k."""

    texts: tuple[str, ...]

    def __post_init__(self):
        normalized = tuple(_WHITESPACE.sub(" ", t.strip()) for t in self.texts)
        if not normalized:
            raise ValueError("vocabulary needs at least one concept text")
        if any(not t for t in normalized):
            raise ValueError("concept texts must be non-empty")
        if len(set(normalized)) != len(normalized):
            raise ValueError("concept texts must be unique")
        object.__setattr__(self, "texts", normalized)

    @property
    def concept_count(self) -> int:
        return len(self.texts)


@dataclass(frozen=True)
class Sample:
    """One data point: opaque id, binary concept vector, 1-based class label.

    Ids are assigned by load or generation order starting at 0; they never
    affect computation, only reporting.
    """

    id: int
    concepts: tuple[int, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(int(v) for v in self.concepts))
        if any(v not in (0, 1) for v in self.concepts):
            raise ValueError(f"sample {self.id}: concept values must be 0 or 1")
        if self.label < 1:
            raise ValueError(f"sample {self.id}: labels are 1-based, got {self.label}")


@dataclass(frozen=True)
class ConceptDataset:
    vocabulary: ConceptVocabulary
    samples: tuple[Sample, ...]
    class_count: int

    def __post_init__(self):
        d = self.vocabulary.concept_count
        for s in self.samples:
            if len(s.concepts) != d:
                raise ValueError(
                    f"sample {s.id}: concept vector has length {len(s.concepts)}, expected {d}"
                )
            if s.label > self.class_count:
                raise ValueError(
                    f"sample {s.id}: label {s.label} exceeds class count {self.class_count}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def concept_matrix(self) -> np.ndarray:
        """(n, d) int matrix of concept values, sample order preserved."""
        if not self.samples:
            return np.zeros((0, self.vocabulary.concept_count), dtype=np.int64)
        return np.array([s.concepts for s in self.samples], dtype=np.int64)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated dataset.

    Concepts are split into ``family_count`` contiguous families of related
    texts. Each class activates its designated template concepts with
    probability ``activation_prob_on`` and every other concept with
    ``activation_prob_off``.
    """

    class_count: int
    concept_count: int
    family_count: int
    samples_per_class: int
    activation_prob_on: float = 0.95
    activation_prob_off: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.family_count == 0:
            raise ValueError("family_count must be at least 1")
        if not 1 <= self.family_count <= self.concept_count:
            raise ValueError("family_count must lie in [1, concept_count]")
        if self.class_count < 1:
            raise ValueError("class_count must be at least 1")
        if self.samples_per_class < 0:
            raise ValueError("samples_per_class must be non-negative")
        for p in (self.activation_prob_on, self.activation_prob_off):
            if not 0.0 <= p <= 1.0:
                raise ValueError("activation probabilities must lie in [0, 1]")


_FAMILY_WORDS = (
    "plumage", "beak", "wing", "tail", "eye", "breast", "crest", "throat",
    "leg", "song", "habitat", "gait", "claw", "nape", "crown", "belly",
)
_VALUE_WORDS = (
    "black", "white", "red", "blue", "green", "brown", "grey", "yellow",
    "orange", "purple", "spotted", "striped", "curved", "hooked", "narrow",
    "rounded",
)


def _family_word(f: int) -> str:
    return _FAMILY_WORDS[f] if f < len(_FAMILY_WORDS) else f"trait{f}"


def _value_word(f: int, position: int) -> str:
    # each family cycles its own 3-word value pool; the family suffix keeps
    # pools disjoint across families so shared value tokens never leak
    # similarity between families
    base = _VALUE_WORDS[(f + position % 3) % len(_VALUE_WORDS)]
    return f"{base}{f}"


def synthetic_families(spec: SyntheticSpec) -> tuple[tuple[int, ...], ...]:
    """Contiguous, balanced partition of concept indices into families."""
    base, extra = divmod(spec.concept_count, spec.family_count)
    blocks = []
    start = 0
    for f in range(spec.family_count):
        size = base + (1 if f < extra else 0)
        blocks.append(tuple(range(start, start + size)))
        start += size
    return tuple(blocks)


def _signal_slots(spec: SyntheticSpec, blocks: tuple[tuple[int, ...], ...],
                  f: int) -> tuple[int, ...]:
    # the last family is pure background (no class ever activates it), so a
    # low-relevance trigger concentrates there; every other family is all
    # class-signal slots
    if spec.family_count >= 2 and f == spec.family_count - 1:
        return ()
    return blocks[f]


def synthetic_vocabulary(spec: SyntheticSpec) -> ConceptVocabulary:
    texts = []
    for f, block in enumerate(synthetic_families(spec)):
        word = _family_word(f)
        for position, k in enumerate(block):
            texts.append(f"{word} attribute {k} is {_value_word(f, position)}")
    return ConceptVocabulary(tuple(texts))


def synthetic_class_templates(spec: SyntheticSpec) -> tuple[frozenset[int], ...]:
    """Per-class sets of template concepts, drawn from each family's signal slots.

    Templates are redrawn on collision so classes stay distinguishable whenever
    the slot space allows it.
    """
    blocks = synthetic_families(spec)
    rng = rng_from_seed(spec.seed, 0)
    templates: list[frozenset[int]] = []
    seen: set[frozenset[int]] = set()
    for _ in range(spec.class_count):
        template = frozenset()
        for attempt in range(200):
            picks: list[int] = []
            for f in range(spec.family_count):
                slots = np.array(_signal_slots(spec, blocks, f), dtype=int)
                if len(slots) == 0:
                    continue
                # keep the per-family choice space non-trivial so distinct
                # classes can draw distinct templates
                take = max(1, min(3, len(slots) - 1))
                picks.extend(int(i) for i in rng.choice(slots, size=take, replace=False))
            template = frozenset(picks)
            if template not in seen:
                break
        seen.add(template)
        templates.append(template)
    return tuple(templates)


def generate_synthetic(spec: SyntheticSpec) -> ConceptDataset:
    """Generate a dataset; a pure function of ``spec`` including its seed."""
    vocabulary = synthetic_vocabulary(spec)
    templates = synthetic_class_templates(spec)
    rng = rng_from_seed(spec.seed, 1)
    d = spec.concept_count
    samples = []
    sid = 0
    for label in range(1, spec.class_count + 1):
        probs = np.full(d, spec.activation_prob_off)
        probs[sorted(templates[label - 1])] = spec.activation_prob_on
        draws = rng.random((spec.samples_per_class, d)) < probs
        for row in draws:
            samples.append(Sample(sid, tuple(int(v) for v in row), label))
            sid += 1
    return ConceptDataset(vocabulary, tuple(samples), spec.class_count)


def dataset_polarity(dataset: ConceptDataset) -> Polarity:
    """Whether concept values are mostly ones (positive) or zeros (negative).

    A mean of exactly 0.5 resolves to negative.
    """
    if not dataset.samples:
        raise ValueError("polarity is undefined for an empty dataset")
    return "positive" if dataset.concept_matrix.mean() > 0.5 else "negative"


# ---------------------------------------------------------------------------
# File formats. Dataset rows are JSONL objects {"concepts":[0,1,...],"label":3}
# or CSV with header c1,...,cd,label; labels are 1-based in both. The concept
# vocabulary lives in a plain-text sidecar (one text per line, line k is
# concept index k) found at <dataset>.vocab.txt unless given explicitly.
# ---------------------------------------------------------------------------


def default_vocab_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".vocab.txt")


def load_vocabulary(path: str | Path) -> ConceptVocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return ConceptVocabulary(tuple(lines))


def save_vocabulary(vocabulary: ConceptVocabulary, path: str | Path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocabulary.texts), encoding="utf-8")


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("jsonl", "csv"):
        return suffix
    raise ValueError(f"cannot infer dataset format from suffix {path.suffix!r}")


def _check_row(concepts, label, d: int, class_count: int | None, line: int) -> tuple[tuple[int, ...], int]:
    if len(concepts) != d:
        raise DatasetFormatError(f"expected {d} concept values, got {len(concepts)}", line)
    values = []
    for v in concepts:
        if isinstance(v, bool) or v not in (0, 1):
            raise DatasetFormatError(f"concept value {v!r} is not binary", line)
        values.append(int(v))
    if isinstance(label, bool) or not isinstance(label, int):
        raise DatasetFormatError(f"label {label!r} is not an integer", line)
    if label < 1:
        raise DatasetFormatError(f"label {label} is out of range (labels are 1-based)", line)
    if class_count is not None and label > class_count:
        raise DatasetFormatError(f"label {label} exceeds class count {class_count}", line)
    return tuple(values), label


def _parse_jsonl(path: Path, d: int, class_count: int | None) -> list[tuple[tuple[int, ...], int]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                raise DatasetFormatError("blank line in JSONL dataset", line_no)
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", line_no) from exc
            if not isinstance(obj, dict) or "concepts" not in obj or "label" not in obj:
                raise DatasetFormatError('row must be an object with "concepts" and "label"', line_no)
            if not isinstance(obj["concepts"], list):
                raise DatasetFormatError('"concepts" must be a list', line_no)
            rows.append(_check_row(obj["concepts"], obj["label"], d, class_count, line_no))
    return rows


def _parse_csv(path: Path, d: int, class_count: int | None) -> list[tuple[tuple[int, ...], int]]:
    expected_header = [f"c{i}" for i in range(1, d + 1)] + ["label"]
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        if header != expected_header:
            raise DatasetFormatError(
                f"bad CSV header, expected c1,...,c{d},label", line=1
            )
        for line_no, record in enumerate(reader, start=2):
            if len(record) != d + 1:
                raise DatasetFormatError(f"expected {d + 1} columns, got {len(record)}", line_no)
            try:
                concepts = [int(v) for v in record[:d]]
                label = int(record[d])
            except ValueError as exc:
                raise DatasetFormatError(f"non-integer cell ({exc})", line_no) from exc
            rows.append(_check_row(concepts, label, d, class_count, line_no))
    return rows


def load_dataset(
    path: str | Path,
    format: str | None = None,
    *,
    vocab_path: str | Path | None = None,
    class_count: int | None = None,
) -> ConceptDataset:
    """Load a dataset file plus its vocabulary sidecar.

    ``class_count`` defaults to the largest label present (0 for an empty
    file). Sample order is preserved and ids are assigned by row order.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    vocabulary = load_vocabulary(vocab_path or default_vocab_path(path))
    d = vocabulary.concept_count
    if fmt == "jsonl":
        rows = _parse_jsonl(path, d, class_count)
    elif fmt == "csv":
        rows = _parse_csv(path, d, class_count)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    if class_count is None:
        class_count = max((label for _, label in rows), default=0)
    samples = tuple(Sample(i, concepts, label) for i, (concepts, label) in enumerate(rows))
    return ConceptDataset(vocabulary, samples, class_count)


def save_dataset(dataset: ConceptDataset, path: str | Path, format: str | None = None) -> None:
    """Write the dataset in canonical form plus its vocabulary sidecar."""
    path = Path(path)
    fmt = format or _infer_format(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for s in dataset.samples:
                fh.write(json.dumps({"concepts": list(s.concepts), "label": s.label},
                                    separators=(",", ":")) + "\n")
    elif fmt == "csv":
        d = dataset.vocabulary.concept_count
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"c{i}" for i in range(1, d + 1)] + ["label"])
            for s in dataset.samples:
                writer.writerow(list(s.concepts) + [s.label])
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    save_vocabulary(dataset.vocabulary, default_vocab_path(path))


def split_dataset(
    dataset: ConceptDataset, test_fraction: float, seed: int
) -> tuple[ConceptDataset, ConceptDataset]:
    """Seeded stratified split; original ids and sample order are kept."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError("test_fraction must lie in [0, 1]")
    rng = rng_from_seed(seed)
    labels = dataset.labels
    test_mask = np.zeros(len(dataset.samples), dtype=bool)
    for label in range(1, dataset.class_count + 1):
        positions = np.flatnonzero(labels == label)
        n_test = int(round(test_fraction * len(positions)))
        perm = rng.permutation(len(positions))
        test_mask[positions[perm[:n_test]]] = True
    train = tuple(s for s, held_out in zip(dataset.samples, test_mask) if not held_out)
    test = tuple(s for s, held_out in zip(dataset.samples, test_mask) if held_out)
    return (
        ConceptDataset(dataset.vocabulary, train, dataset.class_count),
        ConceptDataset(dataset.vocabulary, test, dataset.class_count),
    )
