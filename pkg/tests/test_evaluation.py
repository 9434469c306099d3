"""Average precision and mAP against brute-force enumeration oracles."""

from __future__ import annotations

import numpy as np
import pytest

from mvmil.datamodel import ScoreMatrix
from mvmil.evaluation import (PrCurve, average_precision, format_report,
                              mean_average_precision)
from oracles import average_precision_11pt, average_precision_enumeration


class TestAveragePrecision:
    def test_random_vectors_match_enumeration(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(2, 40))
            scores = rng.standard_normal(n)
            if rng.random() < 0.3:
                # coarse grid forces plenty of exact score ties
                scores = np.round(scores, 1)
            positives = rng.random(n) < 0.4
            if not positives.any():
                positives[int(rng.integers(0, n))] = True
            got = average_precision(scores, positives).ap
            want = average_precision_enumeration(scores, positives)
            assert got == pytest.approx(want, abs=1e-12), f"trial {trial}"

    def test_11pt_matches_enumeration(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            n = int(rng.integers(2, 40))
            scores = np.round(rng.standard_normal(n), 1)
            positives = rng.random(n) < 0.4
            if not positives.any():
                positives[int(rng.integers(0, n))] = True
            got = average_precision(scores, positives, mode="11-point").ap
            want = average_precision_11pt(scores, positives)
            assert got == pytest.approx(want, abs=1e-12), f"trial {trial}"

    def test_perfect_ranking_is_one(self):
        scores = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
        positives = np.array([True, True, False, False, False])
        assert average_precision(scores, positives).ap == 1.0

    def test_single_positive_ranked_last(self):
        # P=1 at the bottom of N+1 items: the one positive is found at
        # rank N+1 with precision exactly 1/(N+1)
        for n_neg in (1, 4, 9, 99):
            scores = np.arange(n_neg + 1, 0, -1, dtype=np.float64)
            positives = np.zeros(n_neg + 1, dtype=bool)
            positives[-1] = True
            got = average_precision(scores, positives).ap
            assert got == 1.0 / (n_neg + 1)

    def test_tie_broken_by_original_index(self):
        # identical scores: item order decides; positive first gives AP 1
        scores = np.zeros(3)
        assert average_precision(scores, np.array([True, False, False])).ap == 1.0
        assert average_precision(scores, np.array([False, False, True])).ap \
            == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_increasing_transform_invariant(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(30)
        positives = rng.random(30) < 0.3
        positives[0] = True
        base = average_precision(scores, positives).ap
        for f in (lambda s: 2.0 * s + 5.0, np.tanh, lambda s: s ** 3):
            assert average_precision(f(scores), positives).ap == base

    def test_duplicating_every_item_keeps_ap(self):
        # doubling every (score, label) pair leaves all precision levels at
        # the positive recall points unchanged
        scores = np.array([4.0, 3.0, 2.0, 1.0])
        positives = np.array([True, False, True, False])
        base = average_precision(scores, positives).ap
        dup = average_precision(np.repeat(scores, 2), np.repeat(positives, 2)).ap
        assert dup == pytest.approx(base, abs=1e-12)

    def test_needs_a_positive(self):
        with pytest.raises(ValueError, match="without positives"):
            average_precision(np.zeros(3), np.zeros(3, dtype=bool))

    def test_mode_validation(self):
        with pytest.raises(ValueError, match="mode"):
            average_precision(np.zeros(2), np.array([True, False]), mode="7-point")

    def test_curve_fields(self):
        scores = np.array([3.0, 2.0, 1.0])
        positives = np.array([True, False, True])
        curve = average_precision(scores, positives)
        assert np.allclose(curve.recall, [0.5, 0.5, 1.0], atol=1e-15)
        assert np.allclose(curve.precision, [1.0, 0.5, 2.0 / 3.0], atol=1e-15)
        assert curve.mode == "all-points"

    def test_11pt_close_to_all_points_when_dense(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal(400)
        positives = rng.random(400) < 0.3
        assert positives.sum() >= 50
        a = average_precision(scores, positives, mode="all-points").ap
        b = average_precision(scores, positives, mode="11-point").ap
        assert abs(a - b) < 0.05


class TestMeanAveragePrecision:
    def test_hand_mean(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.7], [0.2, 0.6]])
        labels = np.array([[1, 0], [0, 1], [0, 1]])
        aps, m = mean_average_precision(scores, labels)
        want0 = average_precision(scores[:, 0], labels[:, 0] == 1).ap
        want1 = average_precision(scores[:, 1], labels[:, 1] == 1).ap
        assert aps == [want0, want1]
        assert m == pytest.approx((want0 + want1) / 2.0, abs=1e-15)

    def test_accepts_score_matrix(self):
        sm = ScoreMatrix(bag_ids=("a", "b"), scores=np.array([[1.0, 0.0],
                                                              [0.0, 1.0]]))
        labels = np.array([[1, 0], [0, 1]])
        aps, m = mean_average_precision(sm, labels)
        assert m == 1.0 and aps == [1.0, 1.0]

    def test_empty_class_warns_and_skips(self):
        scores = np.array([[0.9, 0.5], [0.1, 0.4]])
        labels = np.array([[1, 0], [0, 0]])
        with pytest.warns(UserWarning, match="no positive"):
            aps, m = mean_average_precision(scores, labels)
        assert aps[1] is None
        assert m == aps[0]

    def test_all_empty_is_error(self):
        with pytest.warns(UserWarning):
            with pytest.raises(ValueError, match="undefined"):
                mean_average_precision(np.zeros((2, 2)),
                                       np.zeros((2, 2), dtype=np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="both"):
            mean_average_precision(np.zeros((2, 3)), np.zeros((2, 2)))


class TestPrCurveValidation:
    def test_recall_must_be_monotone(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            PrCurve(recall=np.array([0.5, 0.2]), precision=np.array([1.0, 1.0]),
                    ap=0.5, mode="all-points")

    def test_ranges(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            PrCurve(recall=np.array([0.5]), precision=np.array([1.5]),
                    ap=0.5, mode="all-points")


class TestFormatReport:
    def test_table_layout(self):
        text = format_report([0.5, None, 1.0], 0.75, ["cat", "dog", "bird"])
        lines = text.splitlines()
        assert lines[0].startswith("class")
        assert lines[1] == "cat    0.5000"
        assert lines[2] == "dog    n/a"
        assert lines[3] == "bird   1.0000"
        assert lines[4] == "mAP    0.7500"
        assert text.endswith("\n")

    def test_name_count_check(self):
        with pytest.raises(ValueError, match="class names"):
            format_report([0.5], 0.5, ["a", "b"])
