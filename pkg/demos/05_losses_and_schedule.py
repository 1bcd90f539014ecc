#!/usr/bin/env python3
"""The three subset losses, their weighted combination, and the LR schedule.

The prediction and low-reliability networks minimize mean cross-entropy.
The counterfactual network maximizes the probability of every class outside
the candidate set: a sum of independent binary log terms over the complement
mask.  Fine-tuning combines all three on consistently labeled data.
"""

import math

import numpy as np

from dar import (LossConfig, ScheduleConfig, loss_cf, loss_dar, loss_prd,
                 poly_lr)

q = 5
uniform = np.full((1, q), 1 / q)
target = np.eye(q)[[2]]

print(f"cross-entropy of a uniform guess: {loss_prd(uniform, target):.5f} "
      f"(= ln {q} = {math.log(q):.5f})")

candidates = np.array([[0, 1, 1, 0, 0.0]])     # annotators said 2 or 3
half = np.full((1, q), 0.5)
print(f"counterfactual loss at all-0.5 predictions: "
      f"{loss_cf(half, candidates):.5f} (= 3 ln 2 = {3 * math.log(2):.5f})")

confident = np.where(candidates == 1, 0.2, 1 - 1e-9)
print(f"counterfactual loss when every excluded class is predicted: "
      f"{loss_cf(confident, candidates):.2e}")

print(f"degenerate full candidate set carries no information: "
      f"loss = {loss_cf(half, np.ones((1, q)))}")

rng = np.random.default_rng(0)
y_prd = np.full((1, q), 1 / q)
y_cf = rng.uniform(0.2, 0.8, (1, q))
y_lr = np.full((1, q), 1 / q)
total, comps = loss_dar(y_prd, y_cf, y_lr, target, LossConfig(mu=0.5, delta=0.5))
print("\ncombined fine-tuning objective:")
for name, value in comps.items():
    print(f"  {name}: {value:.5f}")
print("  (total = L_prd + 0.5 L_cf + 0.5 L_lr)")

print("\npolynomial decay over 10 steps (power 0.9):")
sched = ScheduleConfig(lr0=1e-3, total_steps=10, power=0.9)
rates = [poly_lr(t, sched) for t in range(11)]
print("  " + "  ".join(f"{r:.2e}" for r in rates))
