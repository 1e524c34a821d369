import dataclasses

import numpy as np
import pytest

from conceptguard.clustering import GroupAssignment, identity_assignment, partition_dataset
from conceptguard.data import ConceptDataset, ConceptVocabulary, Sample, SyntheticSpec, generate_synthetic
from conceptguard.attack import Trigger, embed_trigger
from conceptguard.models import (
    BaseClassifier,
    EnsembleModel,
    TrainingConfig,
    VoteCounts,
    ensemble_predict,
    ensemble_predict_matrix,
    fit_classifier,
    group_prediction_matrix,
    load_ensemble,
    save_ensemble,
    train_base,
    train_direct,
    train_ensemble,
    vote_counts,
)
from conceptguard.rng import rng_from_seed


def constant_classifier(group_index, input_dim, class_count, label):
    """Zero weights with a bias spike: predicts `label` for every input."""
    bias = np.zeros(class_count)
    bias[label - 1] = 1.0
    return BaseClassifier(
        group_index=group_index, input_dim=input_dim, class_count=class_count,
        weights=(np.zeros((input_dim, class_count)),), biases=(bias,),
        seed=0, epochs=0, final_loss=0.0,
    )


def constant_ensemble(labels, class_count):
    """One singleton group per constant vote."""
    m = len(labels)
    assignment = GroupAssignment(tuple(range(1, m + 1)), m=m)
    classifiers = tuple(
        constant_classifier(j + 1, 1, class_count, label)
        for j, label in enumerate(labels)
    )
    return EnsembleModel(assignment, classifiers, class_count)


def dataset_from_rows(rows, labels, class_count=None):
    d = len(rows[0])
    vocab = ConceptVocabulary(tuple(f"concept token {i}" for i in range(d)))
    samples = tuple(Sample(i, tuple(r), y) for i, (r, y) in enumerate(zip(rows, labels)))
    return ConceptDataset(vocab, samples, class_count or max(labels))


class TestTrainBase:
    def test_linearly_separable_reaches_perfect_training_accuracy(self):
        rows, labels = [], []
        for i in range(40):
            if i % 2:
                rows.append([1, 0])
                labels.append(1)
            else:
                rows.append([0, 1])
                labels.append(2)
        ds = dataset_from_rows(rows, labels)
        sub = partition_dataset(ds, identity_assignment(2))[0]
        clf = train_base(sub, TrainingConfig(epochs=300, seed=0))
        assert (clf.predict(sub.concept_matrix.astype(float)) == sub.labels).all()

    def test_same_seed_gives_identical_parameters(self):
        ds = generate_synthetic(SyntheticSpec(
            class_count=3, concept_count=9, family_count=3, samples_per_class=20, seed=4))
        sub = partition_dataset(ds, identity_assignment(9))[0]
        a = train_base(sub, TrainingConfig(epochs=50, seed=3))
        b = train_base(sub, TrainingConfig(epochs=50, seed=3))
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(a.biases, b.biases):
            assert np.array_equal(ba, bb)

    def test_constant_features_predict_majority_label(self):
        rows = [[1, 1]] * 9
        labels = [2, 2, 2, 2, 2, 1, 1, 1, 3]
        ds = dataset_from_rows(rows, labels)
        sub = partition_dataset(ds, identity_assignment(2))[0]
        clf = train_base(sub, TrainingConfig(epochs=400, seed=0))
        assert clf.predict(np.array([[1.0, 1.0]]))[0] == 2

    def test_empty_sub_dataset_rejected(self):
        vocab = ConceptVocabulary(("a b", "c d"))
        ds = ConceptDataset(vocab, (), 2)
        sub = partition_dataset(ds, identity_assignment(2))[0]
        with pytest.raises(ValueError, match="empty"):
            train_base(sub, TrainingConfig())

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValueError, match="zero concept"):
            fit_classifier(np.zeros((3, 0)), np.array([1, 2, 1]), 2, TrainingConfig())

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="two classes"):
            fit_classifier(np.ones((3, 2)), np.array([1, 1, 1]), 1, TrainingConfig())

    def test_hidden_layer_variant_trains_and_is_deterministic(self):
        ds = generate_synthetic(SyntheticSpec(
            class_count=3, concept_count=9, family_count=3, samples_per_class=30, seed=4))
        sub = partition_dataset(ds, identity_assignment(9))[0]
        cfg = TrainingConfig(epochs=200, hidden_size=16, seed=5)
        a = train_base(sub, cfg)
        b = train_base(sub, cfg)
        assert len(a.weights) == 2
        assert np.array_equal(a.weights[0], b.weights[0])
        acc = (a.predict(sub.concept_matrix.astype(float)) == sub.labels).mean()
        assert acc > 0.8

    def test_permuting_input_columns_permutes_weights(self):
        rng = rng_from_seed(8)
        x = rng.integers(0, 2, size=(60, 5)).astype(float)
        labels = rng.integers(1, 4, size=60)
        perm = [3, 0, 4, 1, 2]
        a = fit_classifier(x, labels, 3, TrainingConfig(epochs=120, seed=0))
        b = fit_classifier(x[:, perm], labels, 3, TrainingConfig(epochs=120, seed=0))
        assert np.allclose(a.weights[0][perm], b.weights[0])
        assert np.array_equal(a.predict(x), b.predict(x[:, perm]))


class TestVotes:
    def test_vote_counts_example(self):
        model = constant_ensemble([1, 1, 2], class_count=2)
        counts = vote_counts(model, [0, 0, 0])
        assert counts.counts == (2, 1)
        assert counts.total == 3

    def test_m_one_puts_all_mass_on_single_prediction(self):
        model = constant_ensemble([2], class_count=3)
        assert vote_counts(model, [1]).counts == (0, 1, 0)

    def test_votes_sum_to_m_on_random_inputs(self):
        ds = generate_synthetic(SyntheticSpec(
            class_count=3, concept_count=12, family_count=3, samples_per_class=15, seed=1))
        assignment = GroupAssignment((1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3), m=3)
        model = train_ensemble(ds, assignment, TrainingConfig(epochs=40, seed=2))
        rng = rng_from_seed(3)
        for _ in range(20):
            c = rng.integers(0, 2, size=12)
            assert vote_counts(model, c).total == 3

    def test_dimension_mismatch_rejected(self):
        model = constant_ensemble([1, 2], class_count=2)
        with pytest.raises(ValueError, match="shape"):
            vote_counts(model, [0, 0, 0])

    def test_ensemble_predict_majority(self):
        assert ensemble_predict(constant_ensemble([1, 1, 2], 2), [0, 0, 0]) == 1

    def test_tie_prefers_smaller_class_index(self):
        model = constant_ensemble([1, 1, 1, 2, 2, 2], class_count=2)
        assert ensemble_predict(model, [0] * 6) == 1

    def test_tie_among_maxima_excluding_empty_class(self):
        model = constant_ensemble([2, 2, 2, 2, 2, 3, 3, 3, 3, 3], class_count=3)
        assert ensemble_predict(model, [0] * 10) == 2

    def test_relabeling_group_order_keeps_votes(self):
        ds = generate_synthetic(SyntheticSpec(
            class_count=3, concept_count=8, family_count=2, samples_per_class=20, seed=6))
        assignment = GroupAssignment((1, 1, 2, 2, 3, 3, 1, 2), m=3)
        model = train_ensemble(ds, assignment, TrainingConfig(epochs=60, seed=1))
        # renumber groups with the permutation 1->3, 2->1, 3->2
        mapping = {1: 3, 2: 1, 3: 2}
        new_group_of = tuple(mapping[g] for g in assignment.group_of)
        relabeled = GroupAssignment(new_group_of, m=3)
        by_new_index = sorted(model.classifiers, key=lambda c: mapping[c.group_index])
        new_classifiers = tuple(
            dataclasses.replace(c, group_index=mapping[c.group_index])
            for c in by_new_index
        )
        permuted = EnsembleModel(relabeled, new_classifiers, model.class_count)
        rng = rng_from_seed(4)
        for _ in range(25):
            c = rng.integers(0, 2, size=8)
            assert vote_counts(model, c).counts == vote_counts(permuted, c).counts
            assert ensemble_predict(model, c) == ensemble_predict(permuted, c)


class TestVoteBound:
    def test_triggered_votes_move_at_most_hit_group_count(self):
        ds = generate_synthetic(SyntheticSpec(
            class_count=4, concept_count=18, family_count=3, samples_per_class=30, seed=9))
        assignment = GroupAssignment(tuple(1 + (i % 3) for i in range(18)), m=3)
        model = train_ensemble(ds, assignment, TrainingConfig(epochs=80, seed=5))
        rng = rng_from_seed(10)
        for _ in range(100):
            c = tuple(int(v) for v in rng.integers(0, 2, size=18))
            size = int(rng.integers(1, 19))
            indices = rng.permutation(18)[:size]
            trig = Trigger(tuple((int(k), int(rng.integers(0, 2))) for k in indices))
            before = np.array(vote_counts(model, c).counts)
            after = np.array(vote_counts(model, embed_trigger(c, trig)).counts)
            hit_groups = {assignment.group_of[k] for k in trig.concept_indices}
            delta = np.abs(after - before)
            assert delta.max() <= len(hit_groups) <= trig.size
            assert delta.sum() / 2 <= len(hit_groups)


class TestDirectBaseline:
    def test_direct_training_is_single_group(self):
        ds = generate_synthetic(SyntheticSpec(
            class_count=2, concept_count=6, family_count=2, samples_per_class=15, seed=2))
        model = train_direct(ds, TrainingConfig(epochs=30, seed=0))
        assert model.assignment.m == 1
        assert model.classifiers[0].input_dim == 6


class TestBundleIO:
    def test_roundtrip_preserves_parameters_and_predictions(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(
            class_count=3, concept_count=10, family_count=2, samples_per_class=20, seed=8))
        assignment = GroupAssignment(tuple(1 + (i % 2) for i in range(10)), m=2)
        model = train_ensemble(ds, assignment, TrainingConfig(epochs=40, seed=7))
        save_ensemble(model, tmp_path / "bundle", {"note": "test"})
        loaded = load_ensemble(tmp_path / "bundle")
        assert loaded.assignment == model.assignment
        assert loaded.class_count == model.class_count
        for a, b in zip(model.classifiers, loaded.classifiers):
            for wa, wb in zip(a.weights, b.weights):
                assert np.array_equal(wa, wb)
        x = ds.concept_matrix
        assert np.array_equal(ensemble_predict_matrix(model, x),
                              ensemble_predict_matrix(loaded, x))

    def test_ensemble_validates_group_order(self):
        clf = constant_classifier(2, 1, 2, 1)
        with pytest.raises(ValueError, match="group_index"):
            EnsembleModel(GroupAssignment((1,), m=1), (clf,), 2)


class TestVoteCountsType:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            VoteCounts((1, -1))
