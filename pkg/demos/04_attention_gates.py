#!/usr/bin/env python3
"""The two parameter-free gates that couple the sibling networks.

Negative attention inverts the counterfactual network's activations and
multiplies them onto the prediction features: where the counterfactual net
is confident (it recognizes certainly-wrong evidence), the gate closes.
Consistent attention passes features where the prediction and
low-reliability networks agree.  Both outputs are summed back onto the
prediction features, and the sum replaces them for the next block.
"""

import numpy as np

from dar import ca_module, fuse_features, na_module, sigmoid

rng = np.random.default_rng(0)
f_prd = rng.standard_normal((1, 4, 4))

print("negative-attention gate (1 - sigmoid) at a few counterfactual levels:")
for level in (-40.0, -2.0, 0.0, 2.0, 40.0):
    f_cf = np.full_like(f_prd, level)
    out = na_module(f_cf, f_prd)
    ratio = float(np.mean(out / f_prd))
    print(f"  f_cf = {level:+6.1f} -> output ~= {ratio:5.3f} * f_prd")

print("\nconsistent-attention metric at a few disagreement levels:")
for shift in (0.0, 0.5, 2.0, 80.0):
    f_lr = f_prd + shift
    cm = 1.0 - np.abs(sigmoid(f_lr) - sigmoid(f_prd))
    print(f"  f_lr = f_prd + {shift:4.1f} -> mean agreement gate {float(cm.mean()):5.3f}")

print("\nfusion in the two limit regimes:")
sat_cf = np.full_like(f_prd, 40.0)     # counterfactual saturated: gate closed
fused = fuse_features(f_prd, na_module(sat_cf, f_prd), ca_module(f_prd, f_prd))
print(f"  closed negative gate + full agreement: fused = "
      f"{float(np.mean(fused / f_prd)):.3f} * f_prd  (expect 2)")

neg_cf = np.full_like(f_prd, -40.0)    # counterfactual silent: gate open
fused = fuse_features(f_prd, na_module(neg_cf, f_prd), ca_module(f_prd, f_prd))
print(f"  open negative gate   + full agreement: fused = "
      f"{float(np.mean(fused / f_prd)):.3f} * f_prd  (expect 3)")

# the gates are differentiable, so gradients flow into both sibling streams
from dar.network import ca_module_backward, na_module_backward

upstream = np.ones_like(f_prd)
d_cf, d_prd = na_module_backward(np.zeros_like(f_prd), f_prd, upstream)
print(f"\ngradient split at f_cf = 0: d/d_prd = {float(d_prd.mean()):.3f} "
      f"(the half-open gate), d/d_cf mean = {float(d_cf.mean()):+.3f}")
