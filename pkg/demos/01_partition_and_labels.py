#!/usr/bin/env python3
"""Divide a mixed-annotation dataset into its three subsets.

Every record carries the raw scores its annotators gave.  Records whose
multiple annotators agree form the consistent set (one-hot labels), records
with disagreeing annotators form the inconsistent set (candidate masks), and
single-annotator records form the low-reliability set.  The inconsistent
set's real information is the complement mask: the classes nobody picked.
"""

import numpy as np

from dar import (AnnotationRecord, encode_complement, mean_proxy_label,
                 partition_dataset)

records = [
    AnnotationRecord("n01", "n01.nvol", (3, 3, 3), (32, 32, 32)),
    AnnotationRecord("n02", "n02.nvol", (2, 3), (30, 31, 29)),
    AnnotationRecord("n03", "n03.nvol", (4,), (33, 35, 31)),
    AnnotationRecord("n04", "n04.nvol", (1, 2, 1, 3), (28, 30, 34)),
    AnnotationRecord("n05", "n05.nvol", (5, 5), (36, 30, 30)),
]

part = partition_dataset(records, q=5)
print("subset sizes:", part.summary())

print("\nconsistent records get one-hot labels:")
for rec, label in part.cr:
    print(f"  {rec.id}: scores={rec.scores} -> {label.values.astype(int)}")

print("\ninconsistent records get candidate masks and complements:")
for rec, label in part.ic:
    comp = encode_complement(label)
    print(f"  {rec.id}: scores={rec.scores}")
    print(f"       candidate  {label.values.astype(int)}")
    print(f"       complement {comp.values.astype(int)}  <- certainly-wrong classes")

print("\nsingle-rater records keep their lone score:")
for rec, label in part.lr:
    print(f"  {rec.id}: scores={rec.scores} -> class {label.class_index()}")

print("\nmean-proxy labels (what the averaging baseline trains on):")
for rec in records:
    print(f"  {rec.id}: {rec.scores} -> {mean_proxy_label(rec.scores, q=5)}")
