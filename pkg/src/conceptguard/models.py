"""Base concept-to-label classifiers and the majority-vote ensemble.

Each base classifier is trained on one group's concept restriction with
full-batch gradient descent (multinomial logistic by default, optionally one
ReLU hidden layer). The ensemble counts one vote per base classifier and
predicts the argmax vote count, breaking ties toward the smaller class index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .clustering import (
    GroupAssignment,
    SubDataset,
    identity_assignment,
    partition_dataset,
    read_assignment,
    write_assignment,
)
from .data import ConceptDataset
from .rng import rng_from_seed


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    weight_decay: float = 5e-5
    hidden_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.hidden_size is not None and self.hidden_size < 1:
            raise ValueError("hidden_size must be positive when set")


@dataclass(frozen=True, eq=False)
class BaseClassifier:
    """Trained parameters for one group; prediction is pure in (params, input)."""

    group_index: int
    input_dim: int
    class_count: int
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int
    epochs: int
    final_loss: float

    def scores(self, inputs: np.ndarray) -> np.ndarray:
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of shape (n, {self.input_dim})")
        if len(self.weights) == 1:
            return x @ self.weights[0] + self.biases[0]
        hidden = np.maximum(x @ self.weights[0] + self.biases[0], 0.0)
        return hidden @ self.weights[1] + self.biases[1]

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """1-based labels; score ties resolve to the smaller class index."""
        return self.scores(inputs).argmax(axis=1) + 1


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels - 1]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def fit_classifier(
    matrix: np.ndarray,
    labels: np.ndarray,
    class_count: int,
    config: TrainingConfig,
    group_index: int = 1,
) -> BaseClassifier:
    """Full-batch gradient descent on softmax cross-entropy, seeded and fixed-budget.

    The linear model starts from zero parameters; the hidden variant uses
    seeded He-scaled gaussian init so runs stay reproducible.
    """
    x = np.asarray(matrix, dtype=float)
    y = np.asarray(labels, dtype=int)
    n, dim = x.shape
    if n == 0:
        raise ValueError("cannot train on an empty sub-dataset")
    if dim == 0:
        raise ValueError("cannot train on zero concept dimensions")
    if class_count < 2:
        raise ValueError("training needs at least two classes")
    onehot = np.zeros((n, class_count))
    onehot[np.arange(n), y - 1] = 1.0

    lr, wd = config.learning_rate, config.weight_decay
    if config.hidden_size is None:
        w = np.zeros((dim, class_count))
        b = np.zeros(class_count)
        for _ in range(config.epochs):
            probs = _softmax(x @ w + b)
            grad = (probs - onehot) / n
            w -= lr * (x.T @ grad + wd * w)
            b -= lr * grad.sum(axis=0)
        weights, biases = (w,), (b,)
        final = _cross_entropy(_softmax(x @ w + b), y)
    else:
        h = config.hidden_size
        rng = rng_from_seed(config.seed)
        w1 = rng.standard_normal((dim, h)) * math.sqrt(2.0 / dim)
        b1 = np.zeros(h)
        w2 = rng.standard_normal((h, class_count)) * math.sqrt(2.0 / h)
        b2 = np.zeros(class_count)
        for _ in range(config.epochs):
            pre = x @ w1 + b1
            hidden = np.maximum(pre, 0.0)
            probs = _softmax(hidden @ w2 + b2)
            grad = (probs - onehot) / n
            grad_hidden = (grad @ w2.T) * (pre > 0)
            w2 -= lr * (hidden.T @ grad + wd * w2)
            b2 -= lr * grad.sum(axis=0)
            w1 -= lr * (x.T @ grad_hidden + wd * w1)
            b1 -= lr * grad_hidden.sum(axis=0)
        weights, biases = (w1, w2), (b1, b2)
        hidden = np.maximum(x @ w1 + b1, 0.0)
        final = _cross_entropy(_softmax(hidden @ w2 + b2), y)

    return BaseClassifier(
        group_index=group_index,
        input_dim=dim,
        class_count=class_count,
        weights=weights,
        biases=biases,
        seed=config.seed,
        epochs=config.epochs,
        final_loss=final,
    )


def train_base(sub: SubDataset, config: TrainingConfig) -> BaseClassifier:
    """Train one base classifier on a group's restricted dataset."""
    return fit_classifier(
        sub.concept_matrix.astype(float), sub.labels, sub.class_count, config,
        group_index=sub.group_index,
    )


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    assignment: GroupAssignment
    classifiers: tuple[BaseClassifier, ...]
    class_count: int

    def __post_init__(self):
        if len(self.classifiers) != self.assignment.m:
            raise ValueError("one classifier per group is required")
        for j, clf in enumerate(self.classifiers, start=1):
            if clf.group_index != j:
                raise ValueError(f"classifier at position {j} has group_index {clf.group_index}")
            if clf.class_count != self.class_count:
                raise ValueError("all classifiers must share the ensemble class count")


def train_ensemble(dataset: ConceptDataset, assignment: GroupAssignment,
                   config: TrainingConfig) -> EnsembleModel:
    """Train one base classifier per group; base j runs with seed config.seed + j."""
    subs = partition_dataset(dataset, assignment)
    classifiers = tuple(
        train_base(sub, replace(config, seed=config.seed + sub.group_index))
        for sub in subs
    )
    return EnsembleModel(assignment, classifiers, dataset.class_count)


def train_direct(dataset: ConceptDataset, config: TrainingConfig) -> EnsembleModel:
    """Undefended baseline: a single classifier over all concepts (m = 1)."""
    return train_ensemble(dataset, identity_assignment(dataset.vocabulary.concept_count), config)


@dataclass(frozen=True)
class VoteCounts:
    """Votes per class; counts[l-1] base classifiers predicted class l."""

    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise ValueError("vote counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def class_count(self) -> int:
        return len(self.counts)


def group_prediction_matrix(model: EnsembleModel, matrix: np.ndarray) -> np.ndarray:
    """(n, m) matrix of per-group 1-based predictions for full concept rows."""
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.assignment.concept_count:
        raise ValueError(f"expected inputs of shape (n, {model.assignment.concept_count})")
    columns = [
        clf.predict(x[:, list(indices)])
        for clf, indices in zip(model.classifiers, model.assignment.groups())
    ]
    return np.stack(columns, axis=1)


def votes_from_predictions(predictions: np.ndarray, class_count: int) -> np.ndarray:
    """(n, L) vote-count matrix from an (n, m) per-group prediction matrix."""
    preds = np.asarray(predictions, dtype=int)
    n = preds.shape[0]
    votes = np.zeros((n, class_count), dtype=int)
    for j in range(preds.shape[1]):
        votes[np.arange(n), preds[:, j] - 1] += 1
    return votes


def vote_counts(model: EnsembleModel, concepts) -> VoteCounts:
    """Votes of all base classifiers on their restrictions of one concept vector."""
    row = np.asarray(concepts, dtype=float).reshape(1, -1)
    preds = group_prediction_matrix(model, row)
    return VoteCounts(tuple(votes_from_predictions(preds, model.class_count)[0]))


def ensemble_predict_matrix(model: EnsembleModel, matrix: np.ndarray) -> np.ndarray:
    preds = group_prediction_matrix(model, matrix)
    votes = votes_from_predictions(preds, model.class_count)
    return votes.argmax(axis=1) + 1


def ensemble_predict(model: EnsembleModel, concepts) -> int:
    """Majority-vote label; vote ties resolve to the smaller class index."""
    row = np.asarray(concepts, dtype=float).reshape(1, -1)
    return int(ensemble_predict_matrix(model, row)[0])


# ---------------------------------------------------------------------------
# Model bundle: a directory with assignment.json, manifest.json and one
# base_<j>.json per classifier holding JSON arrays of parameters.
# ---------------------------------------------------------------------------


def save_ensemble(model: EnsembleModel, directory: str | Path,
                  extra_manifest: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_assignment(model.assignment, directory / "assignment.json")
    manifest = {
        "class_count": model.class_count,
        "group_count": model.assignment.m,
        "concept_count": model.assignment.concept_count,
        "bases": [f"base_{j:03d}.json" for j in range(1, model.assignment.m + 1)],
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for clf in model.classifiers:
        payload = {
            "group_index": clf.group_index,
            "input_dim": clf.input_dim,
            "class_count": clf.class_count,
            "seed": clf.seed,
            "epochs": clf.epochs,
            "final_loss": clf.final_loss,
            "layers": [
                {"weights": w.tolist(), "bias": b.tolist()}
                for w, b in zip(clf.weights, clf.biases)
            ],
        }
        (directory / f"base_{clf.group_index:03d}.json").write_text(
            json.dumps(payload) + "\n", encoding="utf-8"
        )


def load_ensemble(directory: str | Path) -> EnsembleModel:
    directory = Path(directory)
    assignment = read_assignment(directory / "assignment.json")
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    classifiers = []
    for name in manifest["bases"]:
        data = json.loads((directory / name).read_text(encoding="utf-8"))
        classifiers.append(BaseClassifier(
            group_index=data["group_index"],
            input_dim=data["input_dim"],
            class_count=data["class_count"],
            weights=tuple(np.array(layer["weights"], dtype=float) for layer in data["layers"]),
            biases=tuple(np.array(layer["bias"], dtype=float) for layer in data["layers"]),
            seed=data["seed"],
            epochs=data["epochs"],
            final_loss=data["final_loss"],
        ))
    return EnsembleModel(assignment, tuple(classifiers), manifest["class_count"])
