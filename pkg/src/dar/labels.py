"""Annotation records, the consistency-based divide rule, and label encodings.

Every training sample starts as an :class:`AnnotationRecord` holding the raw
list of per-annotator scores (integers in ``1..Q``).  The divide rule routes
each record into one of three disjoint subsets:

* consistent (``cr``): two or more scores, all equal -> one-hot label,
* inconsistent (``ic``): two or more scores, not all equal -> candidate label,
* low-reliability (``lr``): exactly one score -> one-hot label.

Candidate vectors mark every score some annotator gave; their elementwise
complement marks the scores no annotator gave, which is the supervision target
for counterfactual training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ManifestError

Q_DEFAULT = 5

ONEHOT = "onehot"
CANDIDATE = "candidate"
COMPLEMENT = "complement"

_MANIFEST_KEYS = ("id", "volume", "annotations", "center")


@dataclass(frozen=True)
class AnnotationRecord:
    """One sample: identity, volume reference, raw scores, lesion center."""

    id: str
    volume: str
    scores: tuple[int, ...]
    center: tuple[int, int, int]

    def validate(self, q: int) -> None:
        if not self.scores:
            raise DataError(f"record {self.id!r} has no scores")
        for s in self.scores:
            if not 1 <= s <= q:
                raise DataError(
                    f"record {self.id!r}: score {s} outside [1, {q}]"
                )


@dataclass(frozen=True, eq=False)
class LabelVector:
    """Q-dimensional binary encoding of a record's label information."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise DataError("label vector must be one-dimensional")
        if not np.all((v == 0.0) | (v == 1.0)):
            raise DataError("label vector entries must be 0 or 1")
        total = int(v.sum())
        q = v.size
        if self.kind == ONEHOT:
            if total != 1:
                raise DataError(f"onehot vector must sum to 1, got {total}")
        elif self.kind == CANDIDATE:
            if not 2 <= total <= q:
                raise DataError(
                    f"candidate vector must have between 2 and {q} ones, got {total}"
                )
        elif self.kind == COMPLEMENT:
            if total > q - 2:
                raise DataError(
                    f"complement vector must have at most {q - 2} ones, got {total}"
                )
        else:
            raise DataError(f"unknown label kind {self.kind!r}")

    @property
    def q(self) -> int:
        return self.values.size

    def class_index(self) -> int:
        """1-based class of a one-hot vector."""
        if self.kind != ONEHOT:
            raise DataError(f"class_index is only defined for onehot, got {self.kind!r}")
        return int(np.argmax(self.values)) + 1


def onehot(class_index: int, q: int) -> LabelVector:
    """One-hot vector for a 1-based class index."""
    if not 1 <= class_index <= q:
        raise DataError(f"class {class_index} outside [1, {q}]")
    v = np.zeros(q)
    v[class_index - 1] = 1.0
    return LabelVector(v, ONEHOT)


def candidate_from_scores(scores, q: int) -> LabelVector:
    """Candidate vector marking every distinct score in the list."""
    v = np.zeros(q)
    for s in scores:
        v[s - 1] = 1.0
    return LabelVector(v, CANDIDATE)


@dataclass
class PartitionedDataset:
    """The three disjoint subsets produced by the divide rule."""

    cr: list[tuple[AnnotationRecord, LabelVector]] = field(default_factory=list)
    ic: list[tuple[AnnotationRecord, LabelVector]] = field(default_factory=list)
    lr: list[tuple[AnnotationRecord, LabelVector]] = field(default_factory=list)

    @property
    def n1(self) -> int:
        return len(self.cr)

    @property
    def n2(self) -> int:
        return len(self.ic)

    @property
    def n3(self) -> int:
        return len(self.lr)

    def summary(self) -> dict:
        return {"cr": self.n1, "ic": self.n2, "lr": self.n3}


def load_manifest(path, q: int = Q_DEFAULT) -> list[AnnotationRecord]:
    """Read a JSON-Lines manifest into records, preserving file order.

    Each line must be a JSON object with keys ``id``, ``volume``,
    ``annotations`` and ``center``; unknown keys are ignored.  Duplicate ids
    and out-of-range scores are rejected with the offending line number.
    """
    records: list[AnnotationRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(obj, dict):
                raise ManifestError("record must be a JSON object", line=lineno)
            missing = [k for k in _MANIFEST_KEYS if k not in obj]
            if missing:
                raise ManifestError(f"missing keys {missing}", line=lineno)
            rid = obj["id"]
            if not isinstance(rid, str):
                raise ManifestError("id must be a string", line=lineno)
            if rid in seen:
                raise ManifestError(f"duplicate id {rid!r}", line=lineno)
            scores = obj["annotations"]
            if not isinstance(scores, list) or not scores:
                raise ManifestError("annotations must be a non-empty list", line=lineno)
            for s in scores:
                if not isinstance(s, int) or isinstance(s, bool):
                    raise ManifestError(f"score {s!r} is not an integer", line=lineno)
                if not 1 <= s <= q:
                    raise ManifestError(f"score {s} outside [1, {q}]", line=lineno)
            center = obj["center"]
            if not isinstance(center, list) or len(center) != 3:
                raise ManifestError("center must be a list of 3 integers", line=lineno)
            seen.add(rid)
            records.append(
                AnnotationRecord(
                    id=rid,
                    volume=str(obj["volume"]),
                    scores=tuple(int(s) for s in scores),
                    center=tuple(int(c) for c in center),
                )
            )
    return records


def partition_dataset(records, q: int = Q_DEFAULT) -> PartitionedDataset:
    """Apply the divide rule, attaching the appropriate label encoding.

    Membership depends only on each record's own scores, so the result is
    deterministic and order-independent at the subset level.
    """
    out = PartitionedDataset()
    for rec in records:
        rec.validate(q)
        n = len(rec.scores)
        distinct = set(rec.scores)
        if n == 1:
            out.lr.append((rec, onehot(rec.scores[0], q)))
        elif len(distinct) == 1:
            out.cr.append((rec, onehot(rec.scores[0], q)))
        else:
            out.ic.append((rec, candidate_from_scores(rec.scores, q)))
    return out


def encode_complement(candidate: LabelVector) -> LabelVector:
    """Elementwise ``1 - candidate``: the classes no annotator selected."""
    if candidate.kind != CANDIDATE:
        raise DataError(f"expected a candidate vector, got {candidate.kind!r}")
    return LabelVector(1.0 - candidate.values, COMPLEMENT)


def mean_proxy_label(scores, q: int = Q_DEFAULT) -> int:
    """Arithmetic mean of the scores rounded to the nearest class.

    Exact .5 ties round toward the higher score (the conservative choice for
    screening).  The result always lies within ``[min(scores), max(scores)]``.
    """
    scores = list(scores)
    if not scores:
        raise DataError("cannot take the mean of an empty score list")
    for s in scores:
        if not 1 <= s <= q:
            raise DataError(f"score {s} outside [1, {q}]")
    mean = sum(scores) / len(scores)
    proxy = int(math.floor(mean + 0.5))
    return min(max(proxy, 1), q)
