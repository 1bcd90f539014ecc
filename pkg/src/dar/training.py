"""Two-stage trainers: per-role pretraining, DAR fine-tuning, fusion fitting.

All trainers share one loop skeleton: split off a validation fraction, shuffle
per epoch, augment each training sample online, take Adam steps under a
polynomial learning-rate decay, track the validation loss (including an
epoch-0 evaluation of the initial parameters), keep the best-validation
parameters, and stop early after a patience of non-improving epochs.

Randomness is derived from a single seed through named spawn order
(split, shuffle, augment, init), so a run is a pure function of
(config, seed, data).  The degenerate fine-tuning configuration (transfer
disabled, zero sibling weights) consumes randomness identically to plain
single-network training and therefore reproduces its trace exactly.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .losses import (LossConfig, ScheduleConfig, ce_loss_and_grad,
                     cf_loss_and_grad, dar_loss_and_grad, poly_lr, softmax)
from .network import (VIEWS, BackboneSpec, DarModel, MvModel, averaging_fusion,
                      dar_backward_batch, dar_forward_batch,
                      default_backbone_spec, default_transfer_start,
                      init_backbone_params, mv_forward_batch,
                      plain_backward_batch, plain_forward_batch,
                      view_probabilities_batch)
from .metrics import MetricsReport, compute_metrics
from .volume import apply_augment_patch, draw_augment_params


@dataclass
class TrainConfig:
    """Hyperparameters for both training stages."""

    batch_size: int = 32
    epochs: int = 100
    lr_pretrain: float = 1e-4
    lr_finetune: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    poly_power: float = 0.9
    loss: LossConfig = field(default_factory=LossConfig)
    m: int = 6
    k: int | None = None            # None -> default_transfer_start(m)
    base_width: int = 8
    input_size: int = 64
    q: int = 5
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.1
    augment: bool = True
    augment_fill: float = 0.0
    freeze_siblings: bool = False   # fine-tune updates all three nets by default

    def __post_init__(self):
        if not 0.0 < self.val_fraction <= 0.5:
            raise ConfigError(f"val_fraction must lie in (0, 0.5], got {self.val_fraction}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")

    @property
    def transfer_start(self) -> int:
        return self.k if self.k is not None else default_transfer_start(self.m)

    def backbone_spec(self) -> BackboneSpec:
        return default_backbone_spec(m=self.m, base_width=self.base_width,
                                     input_size=self.input_size, q=self.q)


@dataclass
class TrainResult:
    """Best parameters plus the per-epoch and per-step record of a run."""

    params: dict
    best_val_loss: float
    best_epoch: int
    epochs_run: int
    steps_per_epoch: int
    history: list = field(default_factory=list)
    step_log: list = field(default_factory=list)


class Adam:
    """Standard Adam with bias correction; one instance per parameter set."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _split_validation(n: int, frac: float, rng: np.random.Generator):
    if n >= 2:
        n_val = min(max(1, int(round(frac * n))), n - 1)
    else:
        n_val = 0
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _augment_batch(patches, rng, fill):
    out = np.empty_like(patches)
    for i in range(patches.shape[0]):
        out[i] = apply_augment_patch(patches[i], draw_augment_params(rng), fill=fill)
    return out


def _epoch_batches(n_train, batch_size, rng):
    order = rng.permutation(n_train)
    for start in range(0, n_train, batch_size):
        yield order[start:start + batch_size]


def _loop(n: int, cfg: TrainConfig, lr0: float, seed: int, train_step, val_loss,
          snapshot, restore) -> TrainResult:
    """Shared epoch loop; callbacks own the model-specific math.

    ``train_step(batch_idx, aug_patches, lr, step)`` returns a step-log dict;
    ``val_loss(val_idx)`` scores the current parameters; ``snapshot()`` /
    ``restore(state)`` capture and reinstall the best parameters.
    """
    root = np.random.SeedSequence(seed)
    split_ss, shuffle_ss, augment_ss = root.spawn(3)
    split_rng = np.random.default_rng(split_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    augment_rng = np.random.default_rng(augment_ss)

    train_idx, val_idx = _split_validation(n, cfg.val_fraction, split_rng)
    if val_idx.size == 0:
        val_idx = train_idx
    n_train = train_idx.size
    steps_per_epoch = -(-n_train // cfg.batch_size)
    schedule = ScheduleConfig(lr0=lr0, total_steps=steps_per_epoch * cfg.epochs,
                              power=cfg.poly_power)

    best_val = val_loss(val_idx)
    best_state = snapshot()
    best_epoch = 0
    history = [{"epoch": 0, "val_loss": best_val}]
    step_log: list = []
    step = 0
    epochs_run = 0
    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        train_losses = []
        for batch in _epoch_batches(n_train, cfg.batch_size, shuffle_rng):
            idx = train_idx[batch]
            lr = poly_lr(step, schedule)
            entry = train_step(idx, augment_rng, lr, step)
            step_log.append(entry)
            train_losses.append(entry["L_total"])
            step += 1
        vl = val_loss(val_idx)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(train_losses)),
            "val_loss": vl,
        })
        if vl < best_val:
            best_val = vl
            best_state = snapshot()
            best_epoch = epoch
        elif epoch - best_epoch > cfg.patience:
            break
    params = restore(best_state)
    return TrainResult(params=params, best_val_loss=best_val, best_epoch=best_epoch,
                       epochs_run=epochs_run, steps_per_epoch=steps_per_epoch,
                       history=history, step_log=step_log)


def _role_loss_and_grad(role: str, logits, labels, eps):
    if role == "cf":
        return cf_loss_and_grad(logits, labels, eps)
    return ce_loss_and_grad(logits, labels, eps)


def _log_entry(step, lr, comps):
    return {
        "step": step,
        "lr": lr,
        "L_prd": comps.get("L_prd"),
        "L_cf": comps.get("L_cf"),
        "L_lr": comps.get("L_lr"),
        "L_total": comps["L_total"],
    }


def pretrain(role: str, patches, labels, cfg: TrainConfig,
             init_params: dict | None = None) -> TrainResult:
    """Train one network on its subset with the role-specific loss.

    ``role`` is ``prd``/``lr`` (softmax head, one-hot labels) or ``cf``
    (sigmoid head, candidate labels).  10% of the data is held out for
    validation; the returned parameters are the validation-best snapshot.
    """
    if role not in ("prd", "cf", "lr"):
        raise ConfigError(f"unknown role {role!r}")
    patches = np.asarray(patches, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float64)
    if patches.shape[0] == 0:
        raise DataError(f"cannot pretrain {role}: empty subset")
    if labels.shape[0] != patches.shape[0]:
        raise DataError("patches and labels disagree in length")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise DataError("labels must be binary masks")
    sums = labels.sum(axis=1)
    if role == "cf":
        if np.any(sums < 2):
            raise DataError("counterfactual pretraining needs candidate labels "
                            "(at least two marked classes per row)")
    elif np.any(sums != 1):
        raise DataError(f"{role} pretraining needs one-hot labels")

    spec = cfg.backbone_spec()
    root = np.random.SeedSequence(cfg.seed)
    _, _, _, init_ss = root.spawn(4)
    params = (copy.deepcopy(init_params) if init_params is not None
              else init_backbone_params(spec, np.random.default_rng(init_ss)))
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    eps = cfg.loss.eps

    def train_step(idx, aug_rng, lr, step):
        batch = patches[idx]
        if cfg.augment:
            batch = _augment_batch(batch, aug_rng, cfg.augment_fill)
        _, logits, cache = plain_forward_batch(spec, params, batch, want_cache=True)
        loss, dlogits = _role_loss_and_grad(role, logits, labels[idx], eps)
        grads = plain_backward_batch(spec, params, cache, dlogits)
        opt.step(params, grads, lr)
        comps = {"L_total": loss, f"L_{role}": loss}
        return _log_entry(step, lr, comps)

    def val_loss(idx):
        total, count = 0.0, 0
        for start in range(0, idx.size, cfg.batch_size):
            sel = idx[start:start + cfg.batch_size]
            _, logits, _ = plain_forward_batch(spec, params, patches[sel])
            loss, _ = _role_loss_and_grad(role, logits, labels[sel], eps)
            total += loss * sel.size
            count += sel.size
        return total / count

    return _loop(
        patches.shape[0], cfg, cfg.lr_pretrain, cfg.seed, train_step, val_loss,
        snapshot=lambda: copy.deepcopy(params),
        restore=lambda st: st,
    )


@dataclass
class DarTrainResult(TrainResult):
    """TrainResult whose ``params`` field holds a DarModel."""


def finetune_dar(params_prd: dict, params_cf: dict, params_lr: dict,
                 patches, labels, cfg: TrainConfig) -> DarTrainResult:
    """Fine-tune the three-network submodel on consistently labeled samples.

    Optimizes the combined objective through the attention transfer at
    blocks ``k..m``; all three parameter sets update unless
    ``cfg.freeze_siblings`` pins the counterfactual / low-reliability nets.
    """
    patches = np.asarray(patches, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float64)
    if patches.shape[0] == 0:
        raise DataError("cannot fine-tune: empty subset")
    spec = cfg.backbone_spec()
    for name, p in (("prd", params_prd), ("cf", params_cf), ("lr", params_lr)):
        if p is None:
            raise ConfigError(f"fine-tuning needs a {name} checkpoint")
        probe = init_backbone_params(spec, np.random.default_rng(0))
        for key, arr in probe.items():
            if key not in p or p[key].shape != arr.shape:
                raise ConfigError(
                    f"{name} checkpoint does not match the configured backbone "
                    f"(parameter {key!r})"
                )

    model = DarModel(spec=spec, k=cfg.transfer_start,
                     prd=copy.deepcopy(params_prd),
                     cf=copy.deepcopy(params_cf),
                     lr=copy.deepcopy(params_lr))
    opts = {role: Adam(getattr(model, role), cfg.beta1, cfg.beta2, cfg.adam_eps)
            for role in ("prd", "cf", "lr")}

    def train_step(idx, aug_rng, lr, step):
        batch = patches[idx]
        if cfg.augment:
            batch = _augment_batch(batch, aug_rng, cfg.augment_fill)
        _, _, _, _, cache = dar_forward_batch(model, batch, want_cache=True)
        lg_prd, lg_cf, lg_lr = cache["logits"]
        total, comps, (d_prd, d_cf, d_lr) = dar_loss_and_grad(
            lg_prd, lg_cf, lg_lr, labels[idx], cfg.loss)
        g_prd, g_cf, g_lr = dar_backward_batch(model, cache, d_prd, d_cf, d_lr)
        opts["prd"].step(model.prd, g_prd, lr)
        if not cfg.freeze_siblings:
            opts["cf"].step(model.cf, g_cf, lr)
            opts["lr"].step(model.lr, g_lr, lr)
        return _log_entry(step, lr, comps)

    def val_loss(idx):
        total, count = 0.0, 0
        for start in range(0, idx.size, cfg.batch_size):
            sel = idx[start:start + cfg.batch_size]
            _, _, _, _, cache = dar_forward_batch(model, patches[sel], want_cache=True)
            lg_prd, lg_cf, lg_lr = cache["logits"]
            loss, _, _ = dar_loss_and_grad(lg_prd, lg_cf, lg_lr, labels[sel], cfg.loss)
            total += loss * sel.size
            count += sel.size
        return total / count

    def snapshot():
        return {r: copy.deepcopy(getattr(model, r)) for r in ("prd", "cf", "lr")}

    def restore(state):
        return DarModel(spec=spec, k=model.k, prd=state["prd"],
                        cf=state["cf"], lr=state["lr"])

    result = _loop(patches.shape[0], cfg, cfg.lr_finetune, cfg.seed,
                   train_step, val_loss, snapshot, restore)
    return DarTrainResult(**result.__dict__)


def fit_fusion_layer(view_probs, labels, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray, TrainResult]:
    """Fit the 3Q -> Q affine fusion on fixed per-view probabilities.

    Initialized at the averaging map, trained with cross-entropy; the inputs
    are frozen features so no augmentation applies.
    """
    view_probs = np.asarray(view_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n, n_views, q = view_probs.shape
    if n_views != 3:
        raise DataError(f"expected three views, got {n_views}")
    concat = view_probs.reshape(n, 3 * q)
    w, b = averaging_fusion(q, dtype=np.float64)
    params = {"w": w, "b": b}
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    eps = cfg.loss.eps

    def fusion_logits(idx):
        return concat[idx] @ params["w"].T + params["b"]

    def train_step(idx, aug_rng, lr, step):
        logits = fusion_logits(idx)
        loss, dlogits = ce_loss_and_grad(logits, labels[idx], eps)
        grads = {"w": dlogits.T @ concat[idx], "b": dlogits.sum(axis=0)}
        opt.step(params, grads, lr)
        return _log_entry(step, lr, {"L_total": loss, "L_prd": loss})

    def val_loss(idx):
        loss, _ = ce_loss_and_grad(fusion_logits(idx), labels[idx], eps)
        return loss

    cfg_no_aug = replace(cfg, augment=False)
    result = _loop(n, cfg_no_aug, cfg.lr_pretrain, cfg.seed, train_step, val_loss,
                   snapshot=lambda: (params["w"].copy(), params["b"].copy()),
                   restore=lambda st: st)
    w_best, b_best = result.params
    return w_best, b_best, result


def train_fusion(models: dict[str, DarModel], patches3, labels,
                 cfg: TrainConfig) -> tuple[MvModel, TrainResult]:
    """Train only the fusion layer over three frozen per-view submodels."""
    if set(models) != set(VIEWS):
        raise ConfigError(f"need one submodel per view {VIEWS}, got {set(models)}")
    specs = {v: models[v].spec.to_dict() for v in VIEWS}
    if any(specs[v] != specs[VIEWS[0]] for v in VIEWS):
        raise ConfigError("per-view submodels disagree on the backbone layout")
    patches3 = np.asarray(patches3, dtype=np.float32)
    q = models[VIEWS[0]].spec.q
    w0, b0 = averaging_fusion(q, dtype=np.float64)
    stub = MvModel(views=models, fusion_w=w0, fusion_b=b0)
    probs = view_probabilities_batch(stub, patches3)
    w, b, result = fit_fusion_layer(probs, labels, cfg)
    return MvModel(views=models, fusion_w=w, fusion_b=b), result


def evaluate_mv(mv: MvModel, patches3, y_true, keep_roc: bool = True,
                chunk: int = 256) -> MetricsReport:
    """Score a multi-view model on a labeled test set."""
    patches3 = np.asarray(patches3, dtype=np.float32)
    y_true = np.asarray(y_true, dtype=np.int64)
    if patches3.shape[0] == 0:
        raise DataError("cannot evaluate an empty test set")
    scores = []
    for start in range(0, patches3.shape[0], chunk):
        logits, _ = mv_forward_batch(mv, patches3[start:start + chunk])
        scores.append(softmax(logits))
    return compute_metrics(y_true, np.concatenate(scores), q=mv.q, keep_roc=keep_roc)
