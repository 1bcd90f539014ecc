"""Experiment configuration: JSON files, dotted overrides, run-dir hashing.

A config file is plain JSON; unknown top-level sections are rejected so typos
fail fast.  ``--set a.b.c=value`` overrides parse the value as JSON when
possible and as a bare string otherwise.  The resolved config is hashed
(sha256, first 8 hex digits) to name run directories, and a copy is written
into every run directory so any run can be reproduced from its artifacts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

from .errors import ConfigError
from .experiments import DEFAULT_WEIGHT_GRID, PrepConfig
from .losses import LossConfig
from .training import TrainConfig

_TRAIN_KEYS = {
    "batch_size", "epochs", "lr_pretrain", "lr_finetune", "beta1", "beta2",
    "adam_eps", "poly_power", "mu", "delta", "eps", "m", "k", "base_width",
    "input_size", "q", "seed", "patience", "val_fraction", "augment",
    "augment_fill", "freeze_siblings",
}

DEFAULT_CONFIG: dict = {
    "manifest": None,
    "test_manifest": None,
    "truth": None,
    "out": "runs",
    "q": 5,
    "prep": {
        "crop_side": 64,
        "patch_size": 64,
        "window": [0.0, 1.0],
        "resample": True,
    },
    "train": {
        "batch_size": 32,
        "epochs": 100,
        "lr_pretrain": 1e-4,
        "lr_finetune": 5e-5,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "poly_power": 0.9,
        "mu": 0.5,
        "delta": 0.5,
        "eps": 1e-7,
        "m": 6,
        "k": None,
        "base_width": 8,
        "seed": 0,
        "patience": 10,
        "val_fraction": 0.1,
        "augment": True,
        "augment_fill": 0.0,
        "freeze_siblings": False,
    },
    "sweep": {"mu": list(DEFAULT_WEIGHT_GRID), "delta": list(DEFAULT_WEIGHT_GRID)},
    "robustness": {"fractions": [0.2, 0.4, 0.6, 0.8, 1.0], "seeds": None},
    "compare": {"seeds": None},
    "crossval": {"folds": 5, "repeats": 5},
    "synth": None,
    "cache": None,
    "checkpoints": {"pretrain_dir": None, "dar_dir": None, "mv": None},
    "dump": {"record": None, "block": None, "view": "axial"},
}


def load_config(path=None) -> dict:
    """Defaults overlaid with the user's JSON config file (if any)."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
        for key, value in user.items():
            if isinstance(cfg.get(key), dict) and isinstance(value, dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def apply_overrides(cfg: dict, pairs: list[str]) -> dict:
    """Apply ``key.path=value`` overrides in order."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:8]


def output_root(cfg: dict) -> Path:
    return Path(os.environ.get("DAR_OUT", cfg.get("out") or "runs"))


def run_directory(cfg: dict, command: str) -> Path:
    seed = cfg["train"].get("seed", 0)
    return output_root(cfg) / f"{command}-{config_hash(cfg)}-s{seed}"


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    unknown = set(t) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown train keys {sorted(unknown)}")
    loss = LossConfig(mu=t.get("mu", 0.5), delta=t.get("delta", 0.5),
                      eps=t.get("eps", 1e-7))
    return TrainConfig(
        batch_size=int(t.get("batch_size", 32)),
        epochs=int(t.get("epochs", 100)),
        lr_pretrain=float(t.get("lr_pretrain", 1e-4)),
        lr_finetune=float(t.get("lr_finetune", 5e-5)),
        beta1=float(t.get("beta1", 0.9)),
        beta2=float(t.get("beta2", 0.999)),
        adam_eps=float(t.get("adam_eps", 1e-8)),
        poly_power=float(t.get("poly_power", 0.9)),
        loss=loss,
        m=int(t.get("m", 6)),
        k=None if t.get("k") is None else int(t["k"]),
        base_width=int(t.get("base_width", 8)),
        input_size=int(t.get("input_size") or cfg["prep"]["patch_size"]),
        q=int(t.get("q", cfg.get("q", 5))),
        seed=int(t.get("seed", 0)),
        patience=int(t.get("patience", 10)),
        val_fraction=float(t.get("val_fraction", 0.1)),
        augment=bool(t.get("augment", True)),
        augment_fill=float(t.get("augment_fill", 0.0)),
        freeze_siblings=bool(t.get("freeze_siblings", False)),
    )


def prep_config(cfg: dict) -> PrepConfig:
    return PrepConfig.from_dict(cfg["prep"])


def require(cfg: dict, key: str, command: str):
    value = cfg.get(key)
    if value is None:
        raise ConfigError(f"command {command!r} requires config key {key!r}")
    return value
