"""Training objectives for the three subset-specific networks, their weighted
combination, and the polynomial learning-rate schedule.

The prediction and low-reliability networks use mean cross-entropy against
one-hot labels.  The counterfactual network is trained to assign probability
one to every class *outside* the candidate set: its loss sums independent
binary log terms over the complement mask and divides by the batch size only
(no per-class renormalization).  Logs are clamped at a small floor so every
loss is finite and non-negative.

Alongside the probability-space loss values, this module provides the
analytic gradients with respect to pre-activation logits (through softmax or
sigmoid heads), which the trainers consume and which finite-difference checks
verify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

EPS_DEFAULT = 1e-7


@dataclass
class LossConfig:
    """Weights of the counterfactual and low-reliability terms, log floor."""

    mu: float = 0.5
    delta: float = 0.5
    eps: float = EPS_DEFAULT

    def __post_init__(self):
        if self.mu < 0 or self.delta < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 < self.eps <= 1e-3:
            raise ConfigError(f"eps must lie in (0, 1e-3], got {self.eps}")


@dataclass
class ScheduleConfig:
    """Polynomial decay: rate(t) = lr0 * (1 - t/T)**power."""

    lr0: float
    total_steps: int
    power: float = 0.9

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be at least 1")
        if self.power <= 0:
            raise ConfigError("power must be positive")


def poly_lr(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate at an integer step in ``[0, total_steps]``."""
    if not 0 <= step <= cfg.total_steps:
        raise ConfigError(
            f"step {step} outside [0, {cfg.total_steps}]"
        )
    return cfg.lr0 * (1.0 - step / cfg.total_steps) ** cfg.power


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_batch(pred, labels, name):
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[None, :]
    if labels.ndim == 1:
        labels = labels[None, :]
    if pred.shape != labels.shape:
        raise DataError(
            f"{name}: prediction batch {pred.shape} does not match labels {labels.shape}"
        )
    return pred, labels


def loss_prd(pred: np.ndarray, labels: np.ndarray, eps: float = EPS_DEFAULT) -> float:
    """Mean cross-entropy of probability rows against one-hot labels."""
    pred, labels = _check_batch(pred, labels, "loss_prd")
    sums = pred.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise DataError(f"loss_prd: predictions must sum to 1, got sums {sums}")
    clamped = np.clip(pred, eps, 1.0)
    return float(-(labels * np.log(clamped)).sum() / pred.shape[0])


def loss_lr(pred: np.ndarray, labels: np.ndarray, eps: float = EPS_DEFAULT) -> float:
    """Identical contract to :func:`loss_prd`, applied to single-rater labels."""
    return loss_prd(pred, labels, eps)


def loss_cf(pred: np.ndarray, candidates: np.ndarray,
            eps: float = EPS_DEFAULT) -> float:
    """Counterfactual loss: push sigmoid outputs to 1 on non-candidate classes.

    ``candidates`` rows are binary masks of annotator-given classes; the loss
    is ``-(1/N) * sum((1 - candidates) * log(pred))`` with the log clamped.
    """
    pred, candidates = _check_batch(pred, candidates, "loss_cf")
    if np.any(pred <= 0.0) or np.any(pred >= 1.0):
        raise DataError("loss_cf: predictions must lie strictly inside (0, 1)")
    clamped = np.clip(pred, eps, 1.0)
    return float(-((1.0 - candidates) * np.log(clamped)).sum() / pred.shape[0])


def loss_dar(y_prd: np.ndarray, y_cf: np.ndarray, y_lr: np.ndarray,
             labels: np.ndarray, cfg: LossConfig) -> tuple[float, dict]:
    """Combined fine-tuning objective over one-hot labels.

    The counterfactual term scores the complement of the one-hot label: a
    correct sample should drive the counterfactual head to 1 on the Q-1
    wrong classes.  Returns the total and the unweighted components.
    """
    l_prd = loss_prd(y_prd, labels, cfg.eps)
    pred, lab = _check_batch(y_cf, labels, "loss_dar[cf]")
    clamped = np.clip(pred, cfg.eps, 1.0)
    l_cf = float(-((1.0 - lab) * np.log(clamped)).sum() / pred.shape[0])
    l_lr = loss_lr(y_lr, labels, cfg.eps)
    total = l_prd + cfg.mu * l_cf + cfg.delta * l_lr
    return total, {"L_prd": l_prd, "L_cf": l_cf, "L_lr": l_lr, "L_total": total}


# ---------------------------------------------------------------------------
# Logit-space values and analytic gradients (what the trainers step on).
# ---------------------------------------------------------------------------

def ce_loss_and_grad(logits: np.ndarray, labels: np.ndarray,
                     eps: float = EPS_DEFAULT) -> tuple[float, np.ndarray]:
    """Cross-entropy through a softmax head; gradient w.r.t. the logits.

    Where the clamp is inactive the gradient reduces to ``(p - y) / N``; the
    general form chains the clamped log through the softmax Jacobian.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    p = softmax(logits)
    clamped = np.clip(p, eps, 1.0)
    n = logits.shape[0]
    loss = float(-(labels * np.log(clamped)).sum() / n)
    # dL/dp, zero where the clamp flattens the log
    dp = np.where(p > eps, -labels / clamped, 0.0) / n
    inner = np.sum(dp * p, axis=1, keepdims=True)
    dlogits = p * (dp - inner)
    return loss, dlogits


def cf_loss_and_grad(logits: np.ndarray, candidates: np.ndarray,
                     eps: float = EPS_DEFAULT) -> tuple[float, np.ndarray]:
    """Counterfactual loss through a sigmoid head; gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    y = sigmoid(logits)
    clamped = np.clip(y, eps, 1.0)
    n = logits.shape[0]
    mask = 1.0 - candidates
    loss = float(-(mask * np.log(clamped)).sum() / n)
    # d/dlogit of -log(clamp(sigmoid)): -(1 - y) when unclamped, else 0
    dlogits = np.where(y > eps, -mask * (1.0 - y), 0.0) / n
    return loss, dlogits


def dar_loss_and_grad(logits_prd: np.ndarray, logits_cf: np.ndarray,
                      logits_lr: np.ndarray, labels: np.ndarray,
                      cfg: LossConfig) -> tuple[float, dict, tuple]:
    """Total fine-tuning loss, components, and per-head logit gradients."""
    l_prd, d_prd = ce_loss_and_grad(logits_prd, labels, cfg.eps)
    l_cf, d_cf = cf_loss_and_grad(logits_cf, labels, cfg.eps)
    l_lr, d_lr = ce_loss_and_grad(logits_lr, labels, cfg.eps)
    total = l_prd + cfg.mu * l_cf + cfg.delta * l_lr
    comps = {"L_prd": l_prd, "L_cf": l_cf, "L_lr": l_lr, "L_total": total}
    return total, comps, (d_prd, cfg.mu * d_cf, cfg.delta * d_lr)
