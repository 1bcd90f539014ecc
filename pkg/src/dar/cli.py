"""Command-line surface wiring the library into reproducible pipelines.

Usage::

    dar <command> [--config path.json] [--set key=value ...] [--seed N]
                  [--jobs K] [--plot]

Every invocation resolves its config (file, then overrides, then --seed),
creates a run directory named ``<command>-<confighash>-s<seed>`` under the
output root (``DAR_OUT`` environment variable wins over the config), writes
the resolved config there, and emits its artifacts into that directory only.
Errors print machine-readable JSON on stderr and map to distinct exit codes:
2 for config problems, 3 for data problems, 4 for anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as exp
from .config import (apply_overrides, load_config, prep_config, require,
                     run_directory, train_config)
from .errors import ConfigError, DarError, DataError
from .labels import load_manifest, partition_dataset
from .network import (VIEWS, DarModel, dump_feature_maps, load_backbone,
                      load_dar_model, load_mv_model, save_backbone,
                      save_dar_model, save_mv_model)
from .synthetic import (AnnotatorModel, SyntheticSpec, default_annotator_model,
                        gen_dataset, load_truth)
from .training import evaluate_mv, finetune_dar, train_fusion

COMMANDS = ("synth", "partition", "preprocess", "pretrain", "finetune",
            "fuse-train", "eval", "crossval", "sweep", "robustness",
            "compare", "dump-features")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dar",
        description="divide-and-rule training and evaluation pipelines",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dotted path, JSON value)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override train.seed")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for folds/fractions")
    parser.add_argument("--plot", action="store_true",
                        help="render PNG plots of the emitted CSVs")
    return parser


def _emit_error(kind: str, exc: Exception) -> None:
    payload = {"error": {"kind": kind, "message": str(exc),
                         "type": type(exc).__name__}}
    print(json.dumps(payload), file=sys.stderr)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _train_bundle(cfg: dict, run_dir: Path) -> exp.DataBundle:
    manifest = require(cfg, "manifest", "this command")
    cache = cfg.get("cache") or (run_dir / "patches.npz")
    return exp.load_bundle(manifest, prep_config(cfg), q=int(cfg["q"]),
                           cache_path=cache)


def _test_bundle(cfg: dict, run_dir: Path) -> tuple[exp.DataBundle, dict]:
    manifest = require(cfg, "test_manifest", "evaluation")
    truth = load_truth(require(cfg, "truth", "evaluation"))
    bundle = exp.load_bundle(manifest, prep_config(cfg), q=int(cfg["q"]),
                             cache_path=run_dir / "test_patches.npz")
    return bundle, truth


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def cmd_synth(cfg, run_dir, args):
    section = cfg.get("synth") or {}
    spec_dict = dict(section.get("spec") or {})
    spec_dict.setdefault("seed", cfg["train"]["seed"])
    spec = SyntheticSpec.from_dict(spec_dict)
    ann = (AnnotatorModel.from_dict(section["annotators"])
           if section.get("annotators") else default_annotator_model(spec.q))
    out_dir = Path(section.get("out_dir") or (run_dir / "dataset"))
    manifest = gen_dataset(spec, ann, out_dir)
    summary = {
        "manifest": str(manifest),
        "truth": str(out_dir / "truth.json"),
        "n_samples": spec.n_samples,
        "q": spec.q,
    }
    exp.write_json(run_dir / "synth.json", summary)
    _print(summary)
    return 0


def cmd_partition(cfg, run_dir, args):
    manifest = require(cfg, "manifest", "partition")
    records = load_manifest(manifest, int(cfg["q"]))
    part = partition_dataset(records, int(cfg["q"]))
    detail = {
        "cr": [r.id for r, _ in part.cr],
        "ic": [r.id for r, _ in part.ic],
        "lr": [r.id for r, _ in part.lr],
    }
    exp.write_json(run_dir / "partition.json", detail)
    _print(part.summary())
    return 0


def cmd_preprocess(cfg, run_dir, args):
    manifest = require(cfg, "manifest", "preprocess")
    cache = Path(cfg.get("cache") or (run_dir / "patches.npz"))
    ids, patches = exp.preprocess_dataset(manifest, prep_config(cfg),
                                          q=int(cfg["q"]), cache_path=cache)
    summary = {"cache": str(cache), "n": len(ids),
               "patch_shape": list(patches.shape[1:])}
    exp.write_json(run_dir / "preprocess.json", summary)
    _print(summary)
    return 0


def cmd_pretrain(cfg, run_dir, args):
    bundle = _train_bundle(cfg, run_dir)
    tcfg = train_config(cfg)
    stage1 = exp.pretrain_all(bundle, tcfg)
    spec = tcfg.backbone_spec()
    summary = {}
    for view in VIEWS:
        for role in ("prd", "cf", "lr"):
            res = stage1[view][role]
            save_backbone(run_dir / f"pre_{view}_{role}.ckpt", spec, res.params,
                          role=role, view=view)
            exp.write_step_log(run_dir / f"log_pre_{view}_{role}.jsonl", res.step_log)
            summary[f"{view}/{role}"] = {
                "best_val_loss": res.best_val_loss,
                "best_epoch": res.best_epoch,
                "epochs_run": res.epochs_run,
            }
    exp.write_json(run_dir / "pretrain.json", summary)
    _print({"checkpoints": str(run_dir), "runs": summary})
    return 0


def cmd_finetune(cfg, run_dir, args):
    pre_dir = Path(require(cfg["checkpoints"], "pretrain_dir", "finetune"))
    bundle = _train_bundle(cfg, run_dir)
    tcfg = train_config(cfg)
    summary = {}
    for vi, view in enumerate(VIEWS):
        params = {}
        for role in ("prd", "cf", "lr"):
            _, p, _ = load_backbone(pre_dir / f"pre_{view}_{role}.ckpt")
            params[role] = p
        res = finetune_dar(params["prd"], params["cf"], params["lr"],
                           bundle.patches3[bundle.cr_idx][:, vi],
                           bundle.cr_labels,
                           replace(tcfg, seed=exp.stage_seed(tcfg.seed, f"ft:{view}")))
        save_dar_model(run_dir / f"dar_{view}.ckpt", res.params, view=view)
        exp.write_step_log(run_dir / f"log_ft_{view}.jsonl", res.step_log)
        summary[view] = {"best_val_loss": res.best_val_loss,
                         "best_epoch": res.best_epoch}
    exp.write_json(run_dir / "finetune.json", summary)
    _print({"checkpoints": str(run_dir), "runs": summary})
    return 0


def cmd_fuse_train(cfg, run_dir, args):
    dar_dir = Path(require(cfg["checkpoints"], "dar_dir", "fuse-train"))
    bundle = _train_bundle(cfg, run_dir)
    tcfg = train_config(cfg)
    models = {view: load_dar_model(dar_dir / f"dar_{view}.ckpt") for view in VIEWS}
    mv, res = train_fusion(models, bundle.patches3[bundle.cr_idx],
                           bundle.cr_labels,
                           replace(tcfg, seed=exp.stage_seed(tcfg.seed, "fusion")))
    save_mv_model(run_dir / "mv.ckpt", mv)
    exp.write_step_log(run_dir / "log_fusion.jsonl", res.step_log)
    summary = {"checkpoint": str(run_dir / "mv.ckpt"),
               "best_val_loss": res.best_val_loss}
    exp.write_json(run_dir / "fuse.json", summary)
    _print(summary)
    return 0


def cmd_eval(cfg, run_dir, args):
    mv = load_mv_model(require(cfg["checkpoints"], "mv", "eval"))
    if cfg.get("test_manifest") and cfg.get("truth"):
        bundle, truth = _test_bundle(cfg, run_dir)
        report = exp.evaluate_on_truth(mv, bundle, truth)
    else:
        bundle = _train_bundle(cfg, run_dir)
        if bundle.cr_idx.size == 0:
            raise DataError("no consistently annotated samples to evaluate on")
        report = evaluate_mv(mv, bundle.patches3[bundle.cr_idx],
                             bundle.cr_class_indices())
    exp.write_metrics_json(run_dir / "metrics.json", report)
    exp.write_metrics_csv(run_dir / "metrics.csv", [{
        "accuracy": report.accuracy,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "macro_auc": report.macro_auc,
        "n": report.n,
    }])
    exp.write_roc_csvs(run_dir, report)
    if args.plot:
        _plot_roc(run_dir, report)
    _print({"accuracy": report.accuracy, "macro_auc": report.macro_auc,
            "metrics": str(run_dir / "metrics.json")})
    return 0


def _crossval_unit(payload: dict) -> dict:
    """One (repeat, fold) unit for --jobs; reloads data via the shared cache."""
    cfg = payload["cfg"]
    bundle = exp.load_bundle(cfg["manifest"], prep_config(cfg), q=int(cfg["q"]),
                             cache_path=payload["cache"])
    tcfg = train_config(cfg)
    classes = bundle.cr_class_indices()
    fold_rng = np.random.default_rng(exp.stage_seed(payload["repeat_seed"], "folds"))
    fold_sets = exp.stratified_folds(classes, payload["folds"], fold_rng)
    test_rows = fold_sets[payload["fold"]]
    train_rows = np.setdiff1d(np.arange(classes.size), test_rows)
    run_cfg = replace(tcfg, seed=exp.stage_seed(payload["repeat_seed"],
                                                f"fold:{payload['fold']}"))
    mv, _ = exp.train_mv_dar(bundle, run_cfg, cr_rows=train_rows)
    report = evaluate_mv(mv, bundle.patches3[bundle.cr_idx[test_rows]],
                         classes[test_rows], keep_roc=False)
    return {
        "repeat": payload["repeat"], "fold": payload["fold"],
        "accuracy": report.accuracy, "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1, "macro_auc": report.macro_auc,
        "test_ids": [bundle.ids[bundle.cr_idx[i]] for i in test_rows],
    }


def cmd_crossval(cfg, run_dir, args):
    bundle = _train_bundle(cfg, run_dir)
    tcfg = train_config(cfg)
    folds = int(cfg["crossval"]["folds"])
    repeats = int(cfg["crossval"]["repeats"])
    if args.jobs > 1:
        cache = str(cfg.get("cache") or (run_dir / "patches.npz"))
        units = [
            {"cfg": cfg, "cache": cache, "folds": folds, "repeat": r,
             "repeat_seed": tcfg.seed + r, "fold": f}
            for r in range(repeats) for f in range(folds)
        ]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_crossval_unit, units))
        for row in rows:
            exp.write_json(run_dir / "units" / f"r{row['repeat']}_f{row['fold']}.json", row)
        agg = {
            name: {
                "mean": float(np.mean([r[name] for r in rows])),
                "std": float(np.std([r[name] for r in rows])),
                "values": [r[name] for r in rows],
            }
            for name in ("accuracy", "macro_recall", "macro_f1", "macro_auc")
        }
        folds_detail = [{"repeat": r["repeat"], "fold": r["fold"],
                         "test_ids": r["test_ids"]} for r in rows]
        csv_rows = [{k: r[k] for k in ("repeat", "fold", "accuracy",
                                       "macro_recall", "macro_f1", "macro_auc")}
                    for r in rows]
    else:
        result = exp.crossval(bundle, tcfg, folds=folds, repeats=repeats)
        agg = result["aggregate"]
        folds_detail = result["folds"]
        csv_rows = [
            {"repeat": run["repeat"], "fold": run["fold"],
             "accuracy": run["report"].accuracy,
             "macro_recall": run["report"].macro_recall,
             "macro_f1": run["report"].macro_f1,
             "macro_auc": run["report"].macro_auc}
            for run in result["runs"]
        ]
    exp.write_json(run_dir / "metrics.json", agg)
    exp.write_metrics_csv(run_dir / "metrics.csv", csv_rows)
    exp.write_json(run_dir / "folds.json", folds_detail)
    _print({"aggregate": {k: v["mean"] for k, v in agg.items()},
            "runs": len(csv_rows)})
    return 0


def cmd_sweep(cfg, run_dir, args):
    bundle = _train_bundle(cfg, run_dir)
    test_bundle, truth = _test_bundle(cfg, run_dir)
    tcfg = train_config(cfg)
    grid = {k: v for k, v in (cfg.get("sweep") or {}).items() if v}
    rows = exp.hyper_sweep(bundle, tcfg, test_bundle, truth, grid=grid)
    exp.write_metrics_csv(run_dir / "curve.csv", rows)
    exp.write_json(run_dir / "sweep.json", rows)
    if args.plot:
        _plot_sweep(run_dir, rows)
    _print({"rows": len(rows), "curve": str(run_dir / "curve.csv")})
    return 0


def _robustness_unit(payload: dict) -> dict:
    cfg = payload["cfg"]
    bundle = exp.load_bundle(cfg["manifest"], prep_config(cfg), q=int(cfg["q"]),
                             cache_path=payload["cache"])
    test_bundle = exp.load_bundle(cfg["test_manifest"], prep_config(cfg),
                                  q=int(cfg["q"]), cache_path=payload["test_cache"])
    truth = load_truth(cfg["truth"])
    tcfg = replace(train_config(cfg), seed=payload["seed"])
    point = exp.robustness_point(bundle, tcfg, payload["fraction"],
                                 test_bundle, truth)
    return {"seed": payload["seed"], "fraction": payload["fraction"],
            "kind": point["kind"], "accuracy": point["report"].accuracy,
            "macro_auc": point["report"].macro_auc}


def cmd_robustness(cfg, run_dir, args):
    tcfg = train_config(cfg)
    fractions = [float(f) for f in cfg["robustness"]["fractions"]]
    seeds = cfg["robustness"].get("seeds") or [tcfg.seed]
    if args.jobs > 1:
        bundle_cache = str(cfg.get("cache") or (run_dir / "patches.npz"))
        _train_bundle(cfg, run_dir)            # materialize the shared cache
        _test_bundle(cfg, run_dir)
        units = [
            {"cfg": cfg, "cache": bundle_cache,
             "test_cache": str(run_dir / "test_patches.npz"),
             "fraction": f, "seed": int(s)}
            for s in seeds for f in fractions
        ]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_robustness_unit, units))
        for row in rows:
            exp.write_json(run_dir / "units" / f"s{row['seed']}_f{row['fraction']}.json", row)
        curve = [
            {"fraction": f,
             "mean_accuracy": float(np.mean([r["accuracy"] for r in rows
                                             if r["fraction"] == f])),
             "accuracies": [r["accuracy"] for r in rows if r["fraction"] == f]}
            for f in fractions
        ]
    else:
        bundle = _train_bundle(cfg, run_dir)
        test_bundle, truth = _test_bundle(cfg, run_dir)
        result = exp.robustness_sweep(bundle, tcfg, test_bundle, truth,
                                      fractions=fractions, seeds=[int(s) for s in seeds])
        rows = [{"seed": p["seed"], "fraction": p["fraction"], "kind": p["kind"],
                 "accuracy": p["report"].accuracy,
                 "macro_auc": p["report"].macro_auc}
                for p in result["points"]]
        curve = result["curve"]
    exp.write_metrics_csv(run_dir / "curve.csv", rows)
    exp.write_json(run_dir / "robustness.json", {"points": rows, "curve": curve})
    if args.plot:
        _plot_curve(run_dir, curve)
    _print({"curve": [{k: p[k] for k in ("fraction", "mean_accuracy")}
                      for p in curve]})
    return 0


def cmd_compare(cfg, run_dir, args):
    bundle = _train_bundle(cfg, run_dir)
    test_bundle, truth = _test_bundle(cfg, run_dir)
    tcfg = train_config(cfg)
    seeds = cfg["compare"].get("seeds")
    result = exp.compare_models(bundle, tcfg, test_bundle, truth,
                                seeds=None if seeds is None
                                else [int(s) for s in seeds])
    out = {
        "seeds": result["seeds"],
        "table": result["table"],
        "pvalues": result["pvalues"],
    }
    exp.write_json(run_dir / "compare.json", out)
    csv_rows = [
        {"model": name, "seed": seed, "accuracy": acc}
        for name, accs in result["accuracies"].items()
        for seed, acc in zip(result["seeds"], accs)
    ]
    exp.write_metrics_csv(run_dir / "metrics.csv", csv_rows)
    _print({"accuracy_means": {name: result["table"][name]["accuracy"]["mean"]
                               for name in result["table"]},
            "pvalues": result["pvalues"]})
    return 0


def cmd_dump_features(cfg, run_dir, args):
    dump = cfg["dump"]
    record_id = require(dump, "record", "dump-features")
    block = int(require(dump, "block", "dump-features"))
    view = dump.get("view") or "axial"
    if view not in VIEWS:
        raise ConfigError(f"unknown view {view!r}")
    checkpoints = cfg["checkpoints"]
    if checkpoints.get("dar_dir"):
        model = load_dar_model(Path(checkpoints["dar_dir"]) / f"dar_{view}.ckpt")
    elif checkpoints.get("mv"):
        model = load_mv_model(checkpoints["mv"]).views[view]
    else:
        raise ConfigError("dump-features needs checkpoints.dar_dir or checkpoints.mv")
    bundle = _train_bundle(cfg, run_dir)
    if record_id not in bundle.ids:
        raise DataError(f"record {record_id!r} not in manifest")
    row = bundle.ids.index(record_id)
    patch = bundle.patches3[row, VIEWS.index(view)]
    paths = dump_feature_maps(model, patch, block, run_dir)
    _print({"images": [str(p) for p in paths]})
    return 0


# ---------------------------------------------------------------------------
# Optional plot renderings of already-emitted CSVs.
# ---------------------------------------------------------------------------

def _plot_roc(run_dir, report):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots()
    for cls, (fpr, tpr) in report.roc.items():
        ax.plot(fpr, tpr, label=f"class {cls}")
    ax.plot([0, 1], [0, 1], "k--", lw=0.5)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend()
    fig.savefig(run_dir / "roc.png", dpi=120)
    plt.close(fig)


def _plot_curve(run_dir, curve):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots()
    xs = [p["fraction"] for p in curve]
    ys = [p["mean_accuracy"] for p in curve]
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("fraction of ambiguous data")
    ax.set_ylabel("mean accuracy")
    fig.savefig(run_dir / "curve.png", dpi=120)
    plt.close(fig)


def _plot_sweep(run_dir, rows):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots()
    if rows and "mu" in rows[0] and "delta" in rows[0]:
        mus = sorted({r["mu"] for r in rows})
        deltas = sorted({r["delta"] for r in rows})
        grid = np.full((len(mus), len(deltas)), np.nan)
        for r in rows:
            grid[mus.index(r["mu"]), deltas.index(r["delta"])] = r["accuracy"]
        im = ax.imshow(grid, origin="lower", aspect="auto")
        ax.set_xticks(range(len(deltas)), [f"{d:g}" for d in deltas])
        ax.set_yticks(range(len(mus)), [f"{m:g}" for m in mus])
        ax.set_xlabel("delta")
        ax.set_ylabel("mu")
        fig.colorbar(im, ax=ax, label="accuracy")
    else:
        key = next(k for k in ("k", "mu", "delta") if rows and k in rows[0])
        xs = [r[key] for r in rows]
        ys = [r["accuracy"] for r in rows]
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel(key)
        ax.set_ylabel("accuracy")
    fig.savefig(run_dir / "sweep.png", dpi=120)
    plt.close(fig)


_HANDLERS = {
    "synth": cmd_synth,
    "partition": cmd_partition,
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "fuse-train": cmd_fuse_train,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
    "sweep": cmd_sweep,
    "robustness": cmd_robustness,
    "compare": cmd_compare,
    "dump-features": cmd_dump_features,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.set)
        if args.seed is not None:
            cfg["train"]["seed"] = args.seed
        run_dir = run_directory(cfg, args.command)
        run_dir.mkdir(parents=True, exist_ok=True)
        exp.write_json(run_dir / "resolved_config.json", cfg)
        return _HANDLERS[args.command](cfg, run_dir, args)
    except ConfigError as exc:
        _emit_error("config", exc)
        return 2
    except (DataError, FileNotFoundError) as exc:
        _emit_error("data", exc)
        return 3
    except DarError as exc:
        _emit_error("runtime", exc)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _emit_error("runtime", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
