"""Classification metrics: accuracy, macro recall/F1, one-vs-rest ROC AUC.

Macro averages run over the classes actually present in the ground truth;
absent classes are excluded with a warning rather than imputed.  ROC curves
group tied scores, so the trapezoidal AUC equals the rank statistic
``(#(pos > neg) + 0.5 * #(pos == neg)) / (n_pos * n_neg)`` and is invariant
under strictly monotone transforms of the scores.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError


@dataclass
class MetricsReport:
    """Aggregate and per-class evaluation results for one prediction set."""

    accuracy: float
    macro_recall: float
    macro_f1: float
    macro_auc: float
    n: int
    classes: list[int]                        # classes present in ground truth
    per_class: dict[int, dict] = field(default_factory=dict)
    confusion: np.ndarray | None = None       # rows = truth, cols = prediction
    roc: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "macro_auc": self.macro_auc,
            "n": self.n,
            "classes": self.classes,
            "per_class": {str(c): v for c, v in self.per_class.items()},
            "confusion": self.confusion.tolist() if self.confusion is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def roc_points(y_bin: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest ROC curve from (0,0) to (1,1), tied scores grouped."""
    y_bin = np.asarray(y_bin, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(y_bin.sum())
    n_neg = y_bin.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = y_bin[order].astype(np.float64)
    # group boundaries: last index of each tie block
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    idx = np.concatenate([boundary, [y_bin.size - 1]])
    tp = np.cumsum(sorted_pos)[idx]
    fp = (idx + 1) - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return fpr, tpr


def auc_trapezoid(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.trapezoid(tpr, fpr))


def compute_metrics(y_true, scores, q: int | None = None,
                    keep_roc: bool = True) -> MetricsReport:
    """Evaluate class scores ``(N, Q)`` against 1-based true labels ``(N,)``.

    Predictions are the argmax of each score row.  Classes missing from the
    ground truth are dropped from every macro average (with a warning); a
    class without any ROC counterpart (degenerate single-class truth) is
    additionally dropped from the AUC average.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.size == 0:
        raise DataError("cannot evaluate an empty test set")
    if scores.ndim != 2 or scores.shape[0] != y_true.size:
        raise DataError(f"scores must be (N, Q), got {scores.shape} for N={y_true.size}")
    q = q or scores.shape[1]
    y_pred = np.argmax(scores, axis=1) + 1

    present = sorted(int(c) for c in np.unique(y_true))
    absent = [c for c in range(1, q + 1) if c not in present]
    if absent:
        warnings.warn(
            f"classes {absent} absent from ground truth; excluded from macro averages",
            stacklevel=2,
        )

    confusion = np.zeros((q, q), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[t - 1, p - 1] += 1

    accuracy = float(np.mean(y_pred == y_true))
    recalls, f1s, aucs = [], [], []
    per_class: dict[int, dict] = {}
    roc: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for c in present:
        tp = int(confusion[c - 1, c - 1])
        support = int(confusion[c - 1].sum())
        predicted = int(confusion[:, c - 1].sum())
        recall = tp / support
        precision = tp / predicted if predicted else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        entry = {"recall": recall, "precision": precision, "f1": f1,
                 "support": support}
        y_bin = y_true == c
        if y_bin.all():
            warnings.warn(f"class {c}: no negatives, AUC undefined", stacklevel=2)
            entry["auc"] = None
        else:
            fpr, tpr = roc_points(y_bin, scores[:, c - 1])
            entry["auc"] = auc_trapezoid(fpr, tpr)
            aucs.append(entry["auc"])
            if keep_roc:
                roc[c] = (fpr, tpr)
        recalls.append(recall)
        f1s.append(f1)
        per_class[c] = entry

    return MetricsReport(
        accuracy=accuracy,
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        macro_auc=float(np.mean(aucs)) if aucs else float("nan"),
        n=int(y_true.size),
        classes=present,
        per_class=per_class,
        confusion=confusion,
        roc=roc,
    )


def paired_ttest(runs_a, runs_b) -> float:
    """Two-sided paired t-test p-value over equal-length metric sequences.

    Degenerate cases follow a documented sign convention: when every paired
    difference is zero the sequences are indistinguishable (p = 1.0); when
    the differences are a nonzero constant the direction is certain (p = 0.0).
    """
    a = np.asarray(runs_a, dtype=np.float64)
    b = np.asarray(runs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"paired samples must be equal-length 1-D, got {a.shape} vs {b.shape}")
    if a.size < 2:
        raise DataError("paired t-test needs at least 2 pairs")
    diffs = a - b
    if np.all(diffs == diffs[0]):
        return 1.0 if diffs[0] == 0.0 else 0.0
    return float(stats.ttest_rel(a, b).pvalue)
