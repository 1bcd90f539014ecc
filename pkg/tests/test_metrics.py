"""Evaluation metrics against brute-force and rank-statistic oracles."""

import warnings

import numpy as np
import pytest
from scipy import stats

from dar.errors import DataError
from dar.metrics import (MetricsReport, auc_trapezoid, compute_metrics,
                         paired_ttest, roc_points)


def _scores_for(preds, q=5, margin=0.5):
    """Score rows whose argmax reproduces the given 1-based predictions."""
    rng = np.random.default_rng(0)
    scores = rng.random((len(preds), q)) * 0.4
    for i, p in enumerate(preds):
        scores[i, p - 1] = 0.6 + margin * rng.random()
    return scores


def _oracle_metrics(y_true, scores):
    """Independent loop-based implementation of the aggregate metrics."""
    y_true = np.asarray(y_true)
    y_pred = np.argmax(scores, axis=1) + 1
    acc = float(np.mean(y_pred == y_true))
    recalls, f1s, aucs = [], [], []
    for cls in sorted(set(y_true.tolist())):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p == cls)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p != cls)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != cls and p == cls)
        recall = tp / (tp + fn)
        precision = tp / (tp + fp) if tp + fp else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        recalls.append(recall)
        f1s.append(f1)
        pos = scores[y_true == cls, cls - 1]
        neg = scores[y_true != cls, cls - 1]
        if pos.size and neg.size:
            wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
            aucs.append(wins / (pos.size * neg.size))
    return acc, float(np.mean(recalls)), float(np.mean(f1s)), float(np.mean(aucs))


class TestComputeMetrics:
    def test_perfect_predictions(self):
        y = np.array([1, 2, 3, 4, 5, 1, 2])
        report = compute_metrics(y, _scores_for(y))
        assert report.accuracy == 1.0
        assert report.macro_recall == 1.0
        assert report.macro_f1 == 1.0
        assert report.macro_auc == 1.0

    def test_hand_worked_confusion(self):
        y_true = [1, 1, 2]
        scores = _scores_for([1, 2, 2])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = compute_metrics(np.array(y_true), scores)
        assert report.accuracy == pytest.approx(2 / 3)
        assert report.macro_recall == pytest.approx(0.75)
        assert report.macro_f1 == pytest.approx(2 / 3)

    def test_perfect_separation_auc(self):
        y = np.array([1, 1, 2, 2, 3, 3])
        scores = np.zeros((6, 5))
        for i, cls in enumerate(y):
            scores[i, cls - 1] = 1.0 + 0.01 * i
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = compute_metrics(y, scores)
        assert report.macro_auc == 1.0

    def test_matches_oracle_on_random_sets(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(8, 40))
            y = rng.integers(1, 6, n)
            while len(set(y.tolist())) < 2:
                y = rng.integers(1, 6, n)
            scores = rng.random((n, 5))
            if rng.random() < 0.3:
                scores = np.round(scores, 1)  # provoke ties
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                report = compute_metrics(y, scores)
            acc, rec, f1, auc = _oracle_metrics(y, scores)
            assert report.accuracy == pytest.approx(acc, abs=1e-12)
            assert report.macro_recall == pytest.approx(rec, abs=1e-12)
            assert report.macro_f1 == pytest.approx(f1, abs=1e-12)
            assert report.macro_auc == pytest.approx(auc, abs=1e-12)

    def test_auc_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(8)
        y = rng.integers(1, 6, 40)
        scores = rng.random((40, 5))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = compute_metrics(y, scores).macro_auc
            b = compute_metrics(y, np.exp(3 * scores)).macro_auc
        assert a == pytest.approx(b, abs=1e-12)

    def test_absent_class_warns_and_excluded(self):
        y = np.array([1, 1, 2, 2])
        scores = _scores_for([1, 1, 2, 2])
        with pytest.warns(UserWarning, match="absent"):
            report = compute_metrics(y, scores)
        assert report.classes == [1, 2]
        assert set(report.per_class) == {1, 2}

    def test_confusion_row_sums_equal_support(self):
        rng = np.random.default_rng(9)
        y = rng.integers(1, 6, 60)
        scores = rng.random((60, 5))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = compute_metrics(y, scores)
        for cls in report.classes:
            assert report.confusion[cls - 1].sum() == np.sum(y == cls)

    def test_empty_set_rejected(self):
        with pytest.raises(DataError):
            compute_metrics(np.array([]), np.zeros((0, 5)))

    def test_roc_endpoints(self):
        y = np.array([1, 1, 2, 2])
        fpr, tpr = roc_points(y == 1, np.array([0.9, 0.8, 0.3, 0.1]))
        assert fpr[0] == tpr[0] == 0.0
        assert fpr[-1] == tpr[-1] == 1.0
        assert auc_trapezoid(fpr, tpr) == 1.0

    def test_report_serializes(self):
        y = np.array([1, 2, 1, 2])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = compute_metrics(y, _scores_for([1, 2, 2, 1]))
        payload = report.to_json()
        assert '"accuracy"' in payload


class TestPairedTtest:
    def test_identical_sequences(self):
        assert paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_constant_nonzero_difference(self):
        assert paired_ttest([2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0]) == 0.0

    def test_documented_example(self):
        assert paired_ttest([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]) == 0.0

    def test_matches_scipy_on_generic_data(self):
        rng = np.random.default_rng(10)
        a = rng.random(12)
        b = a + rng.standard_normal(12) * 0.1
        assert paired_ttest(a, b) == pytest.approx(stats.ttest_rel(a, b).pvalue)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            paired_ttest([1.0, 2.0], [1.0])

    def test_needs_two_pairs(self):
        with pytest.raises(DataError):
            paired_ttest([1.0], [2.0])
