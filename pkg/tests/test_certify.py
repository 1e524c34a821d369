import json
from fractions import Fraction

import numpy as np
import pytest

from conceptguard.attack import Trigger, embed_trigger
from conceptguard.certify import (
    SampleRecord,
    adversarial_joint_accuracy,
    build_certification_report,
    certified_size,
    flip_oracle,
    independent_certified_accuracy,
    independent_certified_accuracy_from_records,
    joint_certified_accuracy,
    joint_certified_accuracy_from_records,
    joint_condition,
    make_records,
    records_from_predictions,
    write_certification_csv,
    write_certification_summary,
)
from conceptguard.clustering import GroupAssignment
from conceptguard.data import SyntheticSpec, generate_synthetic, split_dataset
from conceptguard.models import TrainingConfig, train_ensemble, vote_counts, ensemble_predict
from conceptguard.rng import rng_from_seed


def record_from_counts(counts, label, preds=None):
    counts = tuple(counts)
    y = int(np.argmax(counts)) + 1
    if preds is None:
        preds = []
        for cls, c in enumerate(counts, start=1):
            preds.extend([cls] * c)
    return SampleRecord(
        sample_id=0,
        group_predictions=tuple(preds),
        vote_counts=counts,
        prediction=y,
        label=label,
        certified_size=certified_size(counts, y),
    )


class TestCertifiedSize:
    def test_margin_with_three_classes(self):
        assert certified_size((7, 2, 1), 1) == Fraction(5, 2)

    def test_tie_gives_zero(self):
        assert certified_size((3, 3), 1) == 0

    def test_tie_adjustment_when_winner_has_larger_index(self):
        # winner 2 over rival 1: the rival wins ties, so it gets +1
        assert certified_size((0, 5), 2) == 2

    def test_rejects_non_winner(self):
        with pytest.raises(ValueError, match="not the vote winner"):
            certified_size((3, 3), 2)
        with pytest.raises(ValueError, match="not the vote winner"):
            certified_size((1, 5), 1)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError, match="two classes"):
            certified_size((5,), 1)

    def test_half_integer_in_range_on_random_profiles(self):
        rng = rng_from_seed(1)
        for _ in range(300):
            m = int(rng.integers(1, 10))
            L = int(rng.integers(2, 6))
            counts = rng.multinomial(m, np.ones(L) / L)
            y = int(np.argmax(counts)) + 1
            sigma = certified_size(counts, y)
            assert sigma >= 0
            assert sigma <= Fraction(m, 2)
            assert (2 * sigma).denominator == 1


class TestFlipOracle:
    def test_examples(self):
        assert flip_oracle((7, 2, 1), 1, 2) is True
        assert flip_oracle((7, 2, 1), 1, 3) is False
        assert flip_oracle((3, 3), 1, 0) is True
        assert flip_oracle((3, 3), 1, 1) is False

    def test_k_zero_true_for_any_winner(self):
        rng = rng_from_seed(2)
        for _ in range(50):
            counts = rng.multinomial(6, np.ones(3) / 3)
            y = int(np.argmax(counts)) + 1
            assert flip_oracle(counts, y, 0) is True

    def test_matches_certified_size_on_random_profiles(self):
        rng = rng_from_seed(3)
        for _ in range(300):
            m = int(rng.integers(2, 9))
            L = int(rng.integers(2, 6))
            counts = rng.multinomial(m, rng.dirichlet(np.ones(L)))
            y = int(np.argmax(counts)) + 1
            sigma = certified_size(counts, y)
            for k in range(int(sigma) + 1):
                assert flip_oracle(counts, y, k) is True
            assert flip_oracle(counts, y, int(sigma) + 1) is False

    def test_budget_error_reports_count(self):
        with pytest.raises(ValueError, match="exceed"):
            flip_oracle((10, 10, 10, 10, 10), 1, 30, budget=10)

    def test_rejects_k_above_m(self):
        with pytest.raises(ValueError, match="must lie"):
            flip_oracle((2, 1), 1, 4)


class TestJointCondition:
    def test_empty_subset_reduces_to_winner_condition(self):
        rec = record_from_counts((4, 2), label=1)
        assert joint_condition(rec, (), rec.prediction) is True

    def test_all_votes_for_winner_survives_one_corruption(self):
        # m=3, every base predicts y=1, two classes
        rec = record_from_counts((3, 0), label=1, preds=(1, 1, 1))
        assert joint_condition(rec, (1,), 1) is True

    def test_two_one_split_fails_under_one_corruption(self):
        # predictions (y, y, 2): corrupting group 1 gives lhs 1, rhs 2
        rec = record_from_counts((2, 1), label=1, preds=(1, 1, 2))
        assert joint_condition(rec, (1,), 1) is False


class TestJointAccuracy:
    def trained_setup(self):
        ds = generate_synthetic(SyntheticSpec(
            class_count=4, concept_count=16, family_count=4, samples_per_class=40, seed=12))
        train, test = split_dataset(ds, 0.25, seed=13)
        assignment = GroupAssignment(tuple(1 + (i % 4) for i in range(16)), m=4)
        model = train_ensemble(train, assignment, TrainingConfig(epochs=120, seed=14))
        return model, test

    def test_t_zero_equals_clean_accuracy(self):
        model, test = self.trained_setup()
        records = make_records(model, test)
        clean = np.mean([r.prediction == r.label for r in records])
        assert joint_certified_accuracy(model, test, 0) == pytest.approx(clean)
        assert independent_certified_accuracy(model, test, 0) == pytest.approx(clean)

    def test_t_equals_m_gives_zero(self):
        model, test = self.trained_setup()
        assert joint_certified_accuracy(model, test, 4) == 0.0

    def test_joint_at_least_independent_and_monotone(self):
        model, test = self.trained_setup()
        records = make_records(model, test)
        m = model.assignment.m
        previous_ind, previous_joint = 1.0, 1.0
        for t in range(m + 1):
            ind = independent_certified_accuracy_from_records(records, t)
            joint = joint_certified_accuracy_from_records(records, m, t)
            assert joint >= ind
            assert ind <= previous_ind + 1e-12
            assert joint <= previous_joint + 1e-12
            previous_ind, previous_joint = ind, joint

    def test_matches_brute_force_oracle_on_random_instances(self):
        rng = rng_from_seed(21)
        for _ in range(60):
            m = int(rng.integers(2, 7))
            n = int(rng.integers(2, 15))
            L = int(rng.integers(2, 5))
            t = int(rng.integers(0, min(3, m) + 1))
            preds = rng.integers(1, L + 1, size=(n, m))
            labels = rng.integers(1, L + 1, size=n)
            records = records_from_predictions(preds, labels, L)
            assert (joint_certified_accuracy_from_records(records, m, t)
                    == adversarial_joint_accuracy(preds, labels, L, t))

    def test_budget_error_reports_count(self):
        preds = np.ones((3, 10), dtype=int)
        labels = np.ones(3, dtype=int)
        records = records_from_predictions(preds, labels, 2)
        with pytest.raises(ValueError, match="252"):
            joint_certified_accuracy_from_records(records, 10, 5, budget=100)

    def test_independent_toy_sigma_table(self):
        # three correct samples with sigma 2.5, 0, 1 -> at t=1 only 2 qualify
        recs = (
            record_from_counts((7, 2, 1), label=1),
            record_from_counts((3, 3, 0), label=1),
            record_from_counts((4, 2, 0), label=1),
        )
        assert [float(r.certified_size) for r in recs] == [2.5, 0.0, 1.0]
        assert independent_certified_accuracy_from_records(recs, 1) == pytest.approx(2 / 3)

    def test_t_above_half_m_gives_zero_independent(self):
        model, test = self.trained_setup()
        m = model.assignment.m
        assert independent_certified_accuracy(model, test, m // 2 + 1) == 0.0

    def test_empty_test_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            independent_certified_accuracy_from_records((), 0)


class TestEndToEndVoteArithmetic:
    def test_trigger_within_certified_size_cannot_change_prediction(self):
        m, d = 5, 20
        ds = generate_synthetic(SyntheticSpec(
            class_count=4, concept_count=d, family_count=5, samples_per_class=50, seed=31))
        train, test = split_dataset(ds, 0.3, seed=32)
        assignment = GroupAssignment(tuple(1 + (i % m) for i in range(d)), m=m)
        model = train_ensemble(train, assignment, TrainingConfig(epochs=150, seed=33))
        records = make_records(model, test)
        rng = rng_from_seed(34)
        exercised = 0
        for record, sample in zip(records, test.samples):
            sigma = record.certified_size
            if sigma < 1:
                continue
            size = int(sigma)
            # trigger confined to `size` groups so at most `size` <= sigma
            # groups can be corrupted
            groups = list(rng.permutation(m)[:size] + 1)
            candidate_concepts = [k for k in range(d)
                                  if assignment.group_of[k] in groups]
            chosen = rng.permutation(len(candidate_concepts))[:size]
            trig = Trigger(tuple(
                (int(candidate_concepts[i]), int(rng.integers(0, 2))) for i in chosen
            ))
            attacked = embed_trigger(sample.concepts, trig)
            # restrictions outside the hit groups are bit-identical
            for j in range(1, m + 1):
                if j not in groups:
                    idxs = assignment.group_indices(j)
                    assert tuple(attacked[i] for i in idxs) == \
                        tuple(sample.concepts[i] for i in idxs)
            assert ensemble_predict(model, attacked) == record.prediction
            exercised += 1
        assert exercised > 20


class TestReportIO:
    def test_csv_and_summary_formats(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(
            class_count=3, concept_count=9, family_count=3, samples_per_class=20, seed=41))
        train, test = split_dataset(ds, 0.25, seed=42)
        assignment = GroupAssignment(tuple(1 + (i % 3) for i in range(9)), m=3)
        model = train_ensemble(train, assignment, TrainingConfig(epochs=80, seed=43))
        report = build_certification_report(model, test, t_values=[0, 1])
        write_certification_csv(report, tmp_path / "cert.csv")
        write_certification_summary(report, tmp_path / "cert.json")
        lines = (tmp_path / "cert.csv").read_text().splitlines()
        assert lines[0] == "id,y,y_test,sigma"
        assert len(lines) == len(test.samples) + 1
        first = lines[1].split(",")
        assert first[0] == str(test.samples[0].id)
        assert float(first[3]) * 2 == int(float(first[3]) * 2)  # half integer
        payload = json.loads((tmp_path / "cert.json").read_text())
        assert payload["group_count"] == 3
        assert set(payload["accuracy"]) == {"0", "1"}
        for cell in payload["accuracy"].values():
            assert cell["joint"] >= cell["independent"]
