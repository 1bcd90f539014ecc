#!/usr/bin/env python3
"""Tiny end-to-end run: synthesize, pretrain, fine-tune, fuse, evaluate.

Uses a deliberately small dataset and backbone so the whole two-stage
pipeline finishes in well under a minute.  The same functions scale to the
full desk-scale experiment by changing the config numbers.
"""

import tempfile
from pathlib import Path

import numpy as np

from dar import TrainConfig, load_truth
from dar.experiments import (PrepConfig, evaluate_on_truth, load_bundle,
                             pretrain_all, train_mv_dar, train_mv_prd)
from dar.network import VIEWS, dump_feature_maps
from dar.synthetic import SyntheticSpec, default_annotator_model, gen_dataset

spec = SyntheticSpec(n_samples=240, side=20, seed=5, center_jitter=1,
                     radius_lo=np.array([1.8, 2.6, 3.4, 4.2, 5.0]),
                     radius_hi=np.array([2.4, 3.2, 4.0, 4.8, 5.6]),
                     roughness=np.array([0.03, 0.06, 0.09, 0.12, 0.15]))
test_spec = SyntheticSpec(**{**spec.to_dict(), "n_samples": 80, "seed": 6})
model = default_annotator_model(5)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    train_manifest = gen_dataset(spec, model, tmp / "train")
    test_manifest = gen_dataset(test_spec, model, tmp / "test")

    prep = PrepConfig(crop_side=20, patch_size=16, window=(0.0, 1.0))
    train = load_bundle(train_manifest, prep)
    test = load_bundle(test_manifest, prep)
    truth = load_truth(tmp / "test" / "truth.json")
    print(f"train split: {train.part.summary()}   test: {test.n} samples")

    cfg = TrainConfig(batch_size=16, epochs=20, m=4, base_width=8,
                      input_size=16, lr_pretrain=3e-3, lr_finetune=1e-3,
                      seed=0)

    stage1 = pretrain_all(train, cfg)
    for view in VIEWS:
        losses = {r: f"{stage1[view][r].best_val_loss:.3f}" for r in stage1[view]}
        print(f"  pretrained {view}: best val losses {losses}")

    mv_dar, _ = train_mv_dar(train, cfg, stage1=stage1)
    mv_prd, _ = train_mv_prd(train, cfg, stage1=stage1)

    rep_dar = evaluate_on_truth(mv_dar, test, truth, keep_roc=False)
    rep_prd = evaluate_on_truth(mv_prd, test, truth, keep_roc=False)
    print(f"\nfull model:            accuracy {rep_dar.accuracy:.3f}, "
          f"macro AUC {rep_dar.macro_auc:.3f}")
    print(f"prediction-only model: accuracy {rep_prd.accuracy:.3f}, "
          f"macro AUC {rep_prd.macro_auc:.3f}")

    # inspect what the transferred blocks attend to for one sample
    sample = train.patches3[0, 0]
    out = dump_feature_maps(mv_dar.views["axial"], sample,
                            mv_dar.views["axial"].k, tmp / "maps")
    print(f"\nfeature-map dumps written: {[p.name for p in out]}")
