import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projtune.errors import InvalidInputError, ShapeError
from projtune.evaluation import (CSV_COLUMNS, BaseNewSplit, accuracy,
                                 base_new_evaluate, evaluate, harmonic_mean,
                                 per_class_accuracy, report_csv, total_hm_t1,
                                 total_hm_t2)
from projtune.model import FeatureBank, TextClassifier, class_logits, predict
from projtune.numerics import l2_normalize_rows

from conftest import random_instance

pos = st.floats(min_value=1e-3, max_value=100.0)


class TestAccuracy:
    def test_basic(self):
        assert accuracy([1, 2, 3, 4], [1, 2, 0, 4]) == 0.75

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            accuracy([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            accuracy([1, 2], [1])

    def test_per_class(self):
        preds = [0, 0, 1, 1]
        labels = [0, 1, 1, 1]
        assert per_class_accuracy(preds, labels, 3) == [1.0, 2 / 3, 0.0]


class TestHarmonicMean:
    def test_symmetric(self):
        assert harmonic_mean(3.0, 7.0) == harmonic_mean(7.0, 3.0)

    def test_equal_inputs_fixed_point(self):
        assert harmonic_mean(42.0, 42.0) == pytest.approx(42.0)

    def test_zero_dominates(self):
        assert harmonic_mean(0.0, 50.0) == 0.0

    def test_undefined_at_origin(self):
        with pytest.raises(InvalidInputError):
            harmonic_mean(0.0, 0.0)

    def test_negative_rejected(self):
        with pytest.raises(InvalidInputError):
            harmonic_mean(-1.0, 2.0)

    @given(pos, pos)
    @settings(max_examples=100, deadline=None)
    def test_bounded_by_min_and_geometric_mean(self, a, b):
        h = harmonic_mean(a, b)
        assert min(a, b) - 1e-9 <= h <= np.sqrt(a * b) + 1e-9

    def test_published_value_single_pair(self):
        # base/new pair reported for a prompt-gradient baseline
        assert harmonic_mean(73.29, 65.96) == pytest.approx(69.43, abs=0.01)


class TestTotalHarmonicMeans:
    # per-dataset (base, new) accuracies for the frozen-encoder reference row
    REFERENCE_PAIRS = [
        (72.43, 68.14), (96.84, 94.00), (91.17, 97.26), (63.37, 74.89),
        (72.08, 77.80), (90.10, 91.22), (27.19, 36.29), (69.36, 75.35),
        (53.24, 59.90), (56.48, 64.05), (70.53, 77.50),
    ]

    def test_t1_mean_of_per_dataset_hms(self):
        assert total_hm_t1(self.REFERENCE_PAIRS) == pytest.approx(71.59,
                                                                  abs=0.02)

    def test_t2_hm_of_averages(self):
        # convention check against published averaged accuracies
        assert total_hm_t2([(69.34, 74.22)]) == pytest.approx(71.70,
                                                              abs=0.01)

    def test_t2_differs_from_t1_in_general(self):
        pairs = [(90.0, 10.0), (10.0, 90.0)]
        assert total_hm_t1(pairs) == pytest.approx(18.0)
        assert total_hm_t2(pairs) == pytest.approx(50.0)

    def test_single_pair_conventions_agree(self):
        assert total_hm_t1([(60.0, 80.0)]) == total_hm_t2([(60.0, 80.0)])

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            total_hm_t1([])
        with pytest.raises(InvalidInputError):
            total_hm_t2([])


class TestBaseNewSplit:
    def test_valid(self):
        BaseNewSplit([0, 1, 2], [3, 4])

    def test_overlap_rejected(self):
        with pytest.raises(InvalidInputError):
            BaseNewSplit([0, 1], [1, 2])

    def test_gap_rejected(self):
        with pytest.raises(InvalidInputError):
            BaseNewSplit([0, 1], [3])

    def test_empty_side_rejected(self):
        with pytest.raises(InvalidInputError):
            BaseNewSplit([0, 1], [])


class TestEvaluate:
    def test_report_fields(self, rng):
        head, cls, bank = random_instance(rng, n=20)
        report = evaluate(head, cls, bank, bank.labels, method="zs", seed=3)
        preds = predict(class_logits(head, cls, bank, view=0))
        assert report.accuracy == accuracy(preds, bank.labels)
        assert report.n_test == 20
        assert len(report.per_class_acc) == cls.n_classes

    def test_json_percent_two_decimals(self, rng):
        head, cls, bank = random_instance(rng, n=16)
        report = evaluate(head, cls, bank, bank.labels)
        payload = json.loads(report.to_json())
        assert payload["accuracy_pct"] == f"{100 * report.accuracy:.2f}"

    def test_csv_schema(self, rng):
        head, cls, bank = random_instance(rng)
        report = evaluate(head, cls, bank, bank.labels, method="m")
        text = report_csv([report.to_csv_row(dataset="d", shots=4)])
        rows = list(csv.DictReader(io.StringIO(text)))
        assert list(rows[0].keys()) == CSV_COLUMNS
        assert rows[0]["method"] == "m"
        assert rows[0]["shots"] == "4"


class TestBaseNewEvaluate:
    def _two_sides(self, rng):
        head, _, _ = random_instance(rng, d_pre=8, d_emb=4)
        t = l2_normalize_rows(rng.standard_normal((6, 4)))
        cls_b = TextClassifier(T=t[:3], class_names=["a", "b", "c"])
        cls_n = TextClassifier(T=t[3:], class_names=["d", "e", "f"])
        bank_b = FeatureBank(X=rng.standard_normal((9, 1, 8)),
                             labels=rng.integers(0, 3, size=9))
        bank_n = FeatureBank(X=rng.standard_normal((9, 1, 8)),
                             labels=rng.integers(0, 3, size=9))
        return head, cls_b, cls_n, bank_b, bank_n

    def test_classifier_swap(self, rng):
        head, cls_b, cls_n, bank_b, bank_n = self._two_sides(rng)
        acc_b, acc_n, hm = base_new_evaluate(head, cls_b, cls_n, bank_b,
                                             bank_b.labels, bank_n,
                                             bank_n.labels)
        exp_b = accuracy(predict(class_logits(head, cls_b, bank_b)),
                         bank_b.labels)
        exp_n = accuracy(predict(class_logits(head, cls_n, bank_n)),
                         bank_n.labels)
        assert (acc_b, acc_n) == (exp_b, exp_n)
        if acc_b > 0 or acc_n > 0:
            assert hm == harmonic_mean(acc_b, acc_n)

    def test_partial_name_overlap_rejected(self, rng):
        head, cls_b, _, bank_b, bank_n = self._two_sides(rng)
        t = l2_normalize_rows(rng.standard_normal((3, 4)))
        overlapping = TextClassifier(T=t, class_names=["c", "x", "y"])
        with pytest.raises(InvalidInputError):
            base_new_evaluate(head, cls_b, overlapping, bank_b,
                              bank_b.labels, bank_n, bank_n.labels)

    def test_identical_classifiers_allowed(self, rng):
        head, cls_b, _, bank_b, _ = self._two_sides(rng)
        base_new_evaluate(head, cls_b, cls_b, bank_b, bank_b.labels, bank_b,
                          bank_b.labels)
