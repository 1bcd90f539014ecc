"""End-to-end pipelines: preprocessing, model assembly, evaluation harnesses.

A manifest plus its volumes becomes a :class:`DataBundle` of per-view patch
arrays and subset label matrices.  On top of that sit three model pipelines:

* ``train_mv_dar``       - pretrain three roles per view, fine-tune each view's
                           submodel on the consistent subset, fit the fusion;
* ``train_plain_mv``     - prediction networks only, plus fusion (the
                           prediction-only baseline, and the mean-proxy
                           baseline when fed proxy labels);
* ``baseline_ave``       - converts every record to its rounded-mean proxy
                           label and runs ``train_plain_mv`` on all data.

Harnesses: repeated stratified cross-validation over the consistent subset
(inconsistent / single-rater data are training-only externals in every fold),
an ambiguous-data robustness sweep, hyperparameter grid sweeps that reuse the
stage-1 checkpoints, and a model comparison with paired t-tests.

Stage seeds derive from (config seed, stage tag), so any stage reruns
identically in isolation and shared stages are shared bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .labels import (AnnotationRecord, PartitionedDataset, load_manifest,
                     mean_proxy_label, onehot, partition_dataset)
from .metrics import MetricsReport, compute_metrics, paired_ttest
from .network import VIEWS, DarModel, MvModel
from .synthetic import load_truth
from .training import (TrainConfig, evaluate_mv, finetune_dar, pretrain,
                       train_fusion)
from .volume import (UNIT_WINDOW, crop_cube, extract_triplanar,
                     normalize_intensity, read_volume, resample_isotropic,
                     resize_patch)


@dataclass
class PrepConfig:
    """Preprocessing parameters from raw volume to normalized view patches."""

    crop_side: int = 64
    patch_size: int = 64
    window: tuple[float, float] = UNIT_WINDOW
    resample: bool = True

    def __post_init__(self):
        self.window = (float(self.window[0]), float(self.window[1]))
        if self.window[0] >= self.window[1]:
            raise ConfigError(f"window must satisfy lo < hi, got {self.window}")

    @property
    def fill(self) -> float:
        # out-of-volume crop padding at the window minimum (air-equivalent)
        return self.window[0]

    def to_dict(self) -> dict:
        return {
            "crop_side": self.crop_side,
            "patch_size": self.patch_size,
            "window": list(self.window),
            "resample": self.resample,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrepConfig":
        d = dict(d)
        if "window" in d:
            d["window"] = tuple(d["window"])
        return cls(**d)


def preprocess_record(record: AnnotationRecord, manifest_dir: Path,
                      prep: PrepConfig) -> np.ndarray:
    """One record -> ``(3, S, S)`` float32 normalized view patches."""
    volume = read_volume(manifest_dir / record.volume)
    center = record.center
    if prep.resample:
        spacing = volume.spacing
        volume = resample_isotropic(volume)
        center = tuple(
            min(int(round(c * s)), d - 1)
            for c, s, d in zip(center, spacing, volume.dims)
        )
    cube = crop_cube(volume, center, side=prep.crop_side, fill=prep.fill)
    triplet = extract_triplanar(cube)
    views = []
    for patch in triplet.views:
        patch = resize_patch(patch, prep.patch_size)
        views.append(normalize_intensity(patch, *prep.window))
    return np.stack(views).astype(np.float32)


def preprocess_dataset(manifest_path, prep: PrepConfig, q: int = 5,
                       cache_path=None) -> tuple[list[str], np.ndarray]:
    """Patches for every manifest record, optionally cached as an ``.npz``."""
    manifest_path = Path(manifest_path)
    records = load_manifest(manifest_path, q)
    ids = [r.id for r in records]
    prep_key = json.dumps(prep.to_dict(), sort_keys=True)
    if cache_path is not None and Path(cache_path).exists():
        with np.load(cache_path, allow_pickle=False) as npz:
            if (str(npz["prep_key"]) == prep_key
                    and list(npz["ids"]) == ids):
                return ids, npz["patches"]
    patches = np.stack([
        preprocess_record(r, manifest_path.parent, prep) for r in records
    ])
    if cache_path is not None:
        Path(cache_path).parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(cache_path, patches=patches,
                            ids=np.array(ids), prep_key=np.array(prep_key))
    return ids, patches


@dataclass
class DataBundle:
    """A preprocessed manifest: patches, partition, and label matrices."""

    ids: list[str]
    patches3: np.ndarray                 # (N, 3, S, S)
    records: list[AnnotationRecord]
    part: PartitionedDataset
    q: int
    cr_idx: np.ndarray = field(init=False)
    ic_idx: np.ndarray = field(init=False)
    lr_idx: np.ndarray = field(init=False)
    cr_labels: np.ndarray = field(init=False)      # one-hot
    ic_candidates: np.ndarray = field(init=False)  # candidate masks
    lr_labels: np.ndarray = field(init=False)      # one-hot
    proxy_labels: np.ndarray = field(init=False)   # rounded-mean one-hot, all records

    def __post_init__(self):
        row = {rid: i for i, rid in enumerate(self.ids)}
        self.cr_idx = np.array([row[r.id] for r, _ in self.part.cr], dtype=np.int64)
        self.ic_idx = np.array([row[r.id] for r, _ in self.part.ic], dtype=np.int64)
        self.lr_idx = np.array([row[r.id] for r, _ in self.part.lr], dtype=np.int64)
        self.cr_labels = np.stack([lv.values for _, lv in self.part.cr]) \
            if self.part.cr else np.zeros((0, self.q))
        self.ic_candidates = np.stack([lv.values for _, lv in self.part.ic]) \
            if self.part.ic else np.zeros((0, self.q))
        self.lr_labels = np.stack([lv.values for _, lv in self.part.lr]) \
            if self.part.lr else np.zeros((0, self.q))
        self.proxy_labels = np.stack([
            onehot(mean_proxy_label(r.scores, self.q), self.q).values
            for r in self.records
        ])

    @property
    def n(self) -> int:
        return len(self.ids)

    def cr_class_indices(self) -> np.ndarray:
        """1-based class of each consistent record."""
        return np.argmax(self.cr_labels, axis=1) + 1


def load_bundle(manifest_path, prep: PrepConfig, q: int = 5,
                cache_path=None) -> DataBundle:
    records = load_manifest(manifest_path, q)
    ids, patches3 = preprocess_dataset(manifest_path, prep, q=q, cache_path=cache_path)
    part = partition_dataset(records, q)
    return DataBundle(ids=ids, patches3=patches3, records=records, part=part, q=q)


def stage_seed(seed: int, tag: str) -> int:
    """Deterministic per-stage seed from the run seed and a stage tag."""
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


def _cfg_for(cfg: TrainConfig, tag: str) -> TrainConfig:
    return replace(cfg, seed=stage_seed(cfg.seed, tag))


# ---------------------------------------------------------------------------
# Model pipelines.
# ---------------------------------------------------------------------------

def pretrain_all(bundle: DataBundle, cfg: TrainConfig,
                 ic_rows: np.ndarray | None = None,
                 lr_rows: np.ndarray | None = None,
                 cr_rows: np.ndarray | None = None,
                 roles=("prd", "cf", "lr")) -> dict:
    """Stage 1: per-view, per-role pretraining.

    ``*_rows`` restrict each subset to a selection of its own rows (used by
    cross-validation folds and the robustness subsampling); None means all.
    Returns ``{view: {role: TrainResult}}``.
    """
    cr_rows = np.arange(bundle.cr_idx.size) if cr_rows is None else cr_rows
    ic_rows = np.arange(bundle.ic_idx.size) if ic_rows is None else ic_rows
    lr_rows = np.arange(bundle.lr_idx.size) if lr_rows is None else lr_rows
    subsets = {
        "prd": (bundle.patches3[bundle.cr_idx[cr_rows]], bundle.cr_labels[cr_rows]),
        "cf": (bundle.patches3[bundle.ic_idx[ic_rows]], bundle.ic_candidates[ic_rows]),
        "lr": (bundle.patches3[bundle.lr_idx[lr_rows]], bundle.lr_labels[lr_rows]),
    }
    out: dict = {}
    for vi, view in enumerate(VIEWS):
        out[view] = {}
        for role in roles:
            patches, labels = subsets[role]
            out[view][role] = pretrain(
                role, patches[:, vi], labels, _cfg_for(cfg, f"pre:{view}:{role}"))
    return out


def finetune_all(stage1: dict, bundle: DataBundle, cfg: TrainConfig,
                 cr_rows: np.ndarray | None = None) -> dict:
    """Stage 2: per-view fine-tuning on the consistent subset."""
    cr_rows = np.arange(bundle.cr_idx.size) if cr_rows is None else cr_rows
    patches = bundle.patches3[bundle.cr_idx[cr_rows]]
    labels = bundle.cr_labels[cr_rows]
    out = {}
    for vi, view in enumerate(VIEWS):
        out[view] = finetune_dar(
            stage1[view]["prd"].params,
            stage1[view]["cf"].params,
            stage1[view]["lr"].params,
            patches[:, vi], labels, _cfg_for(cfg, f"ft:{view}"))
    return out


def train_mv_dar(bundle: DataBundle, cfg: TrainConfig,
                 stage1: dict | None = None,
                 cr_rows: np.ndarray | None = None,
                 ic_rows: np.ndarray | None = None,
                 lr_rows: np.ndarray | None = None) -> tuple[MvModel, dict]:
    """Full pipeline: pretrain, fine-tune per view, fit the fusion layer."""
    if stage1 is None:
        stage1 = pretrain_all(bundle, cfg, ic_rows=ic_rows, lr_rows=lr_rows,
                              cr_rows=cr_rows)
    stage2 = finetune_all(stage1, bundle, cfg, cr_rows=cr_rows)
    cr_rows_eff = np.arange(bundle.cr_idx.size) if cr_rows is None else cr_rows
    models = {view: stage2[view].params for view in VIEWS}
    mv, fusion_res = train_fusion(
        models, bundle.patches3[bundle.cr_idx[cr_rows_eff]],
        bundle.cr_labels[cr_rows_eff], _cfg_for(cfg, "fusion"))
    info = {"stage1": stage1, "stage2": stage2, "fusion": fusion_res}
    return mv, info


def train_plain_mv(patches3: np.ndarray, labels: np.ndarray,
                   cfg: TrainConfig,
                   prd_results: dict | None = None) -> tuple[MvModel, dict]:
    """Prediction networks per view plus fusion; no siblings, no transfer.

    ``prd_results`` may supply already-pretrained per-view prediction
    networks (``{view: TrainResult}``) to reuse; they must have been trained
    with the standard stage tags for the reuse to be equivalent.
    """
    spec = cfg.backbone_spec()
    if prd_results is None:
        prd_results = {}
        for vi, view in enumerate(VIEWS):
            prd_results[view] = pretrain(
                "prd", patches3[:, vi], labels, _cfg_for(cfg, f"pre:{view}:prd"))
    models = {
        view: DarModel(spec=spec, k=spec.m + 1, prd=prd_results[view].params,
                       cf=None, lr=None)
        for view in VIEWS
    }
    mv, fusion_res = train_fusion(models, patches3, labels, _cfg_for(cfg, "fusion"))
    return mv, {"stage1": prd_results, "fusion": fusion_res}


def train_mv_prd(bundle: DataBundle, cfg: TrainConfig,
                 stage1: dict | None = None,
                 cr_rows: np.ndarray | None = None) -> tuple[MvModel, dict]:
    """Prediction-only baseline on the consistent subset."""
    cr_rows = np.arange(bundle.cr_idx.size) if cr_rows is None else cr_rows
    prd_results = ({view: stage1[view]["prd"] for view in VIEWS}
                   if stage1 is not None else None)
    return train_plain_mv(bundle.patches3[bundle.cr_idx[cr_rows]],
                          bundle.cr_labels[cr_rows], cfg, prd_results=prd_results)


def baseline_ave(bundle: DataBundle, cfg: TrainConfig) -> tuple[MvModel, dict]:
    """Mean-proxy baseline: every record collapsed to its rounded-mean label,
    then the plain multi-view pipeline on all records."""
    return train_plain_mv(bundle.patches3, bundle.proxy_labels, cfg)


def evaluate_on_truth(mv: MvModel, test_bundle: DataBundle, truth: dict[str, int],
                      keep_roc: bool = True) -> MetricsReport:
    """Score a model against a ground-truth sidecar for the test manifest."""
    missing = [rid for rid in test_bundle.ids if rid not in truth]
    if missing:
        raise DataError(f"truth sidecar missing ids, e.g. {missing[:3]}")
    y_true = np.array([truth[rid] for rid in test_bundle.ids], dtype=np.int64)
    return evaluate_mv(mv, test_bundle.patches3, y_true, keep_roc=keep_roc)


# ---------------------------------------------------------------------------
# Cross-validation over the consistent subset.
# ---------------------------------------------------------------------------

def stratified_folds(classes: np.ndarray, folds: int,
                     rng: np.random.Generator) -> list[np.ndarray]:
    """Disjoint, exhaustive folds balanced per class where possible."""
    n = classes.size
    if n < folds:
        raise DataError(f"cannot make {folds} folds from {n} samples")
    assignment = np.empty(n, dtype=np.int64)
    cursor = 0
    for cls in np.unique(classes):
        members = np.flatnonzero(classes == cls)
        members = members[rng.permutation(members.size)]
        for j, idx in enumerate(members):
            assignment[idx] = (cursor + j) % folds
        cursor += members.size
    return [np.flatnonzero(assignment == f) for f in range(folds)]


def crossval(bundle: DataBundle, cfg: TrainConfig, folds: int = 5,
             repeats: int = 5, repeat_seeds: list[int] | None = None,
             keep_roc: bool = False) -> dict:
    """Repeated stratified cross-validation of the full pipeline.

    Folds partition the consistent subset only; inconsistent and single-rater
    data are external training material in every fold and never reach a test
    fold.  Repeats differ by seed offset unless ``repeat_seeds`` is given.
    """
    if repeat_seeds is None:
        repeat_seeds = [cfg.seed + r for r in range(repeats)]
    classes = bundle.cr_class_indices()
    runs = []
    fold_records = []
    for r, rseed in enumerate(repeat_seeds):
        fold_rng = np.random.default_rng(stage_seed(rseed, "folds"))
        fold_sets = stratified_folds(classes, folds, fold_rng)
        for f, test_rows in enumerate(fold_sets):
            train_rows = np.setdiff1d(np.arange(classes.size), test_rows)
            run_cfg = replace(cfg, seed=stage_seed(rseed, f"fold:{f}"))
            mv, _ = train_mv_dar(bundle, run_cfg, cr_rows=train_rows)
            y_true = classes[test_rows]
            report = evaluate_mv(
                mv, bundle.patches3[bundle.cr_idx[test_rows]], y_true,
                keep_roc=keep_roc)
            runs.append({"repeat": r, "fold": f, "report": report})
            fold_records.append({
                "repeat": r, "fold": f,
                "test_ids": [bundle.ids[bundle.cr_idx[i]] for i in test_rows],
            })
    return {
        "runs": runs,
        "folds": fold_records,
        "aggregate": aggregate_reports([run["report"] for run in runs]),
    }


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Mean and standard deviation of the scalar metrics over runs."""
    out = {}
    for name in ("accuracy", "macro_recall", "macro_f1", "macro_auc"):
        values = np.array([getattr(rep, name) for rep in reports], dtype=np.float64)
        out[name] = {"mean": float(values.mean()),
                     "std": float(values.std()),
                     "values": values.tolist()}
    return out


# ---------------------------------------------------------------------------
# Robustness to the amount of ambiguous training data.
# ---------------------------------------------------------------------------

def subsample_rows(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """A sorted random selection of ``round(fraction * n)`` of ``n`` rows."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must lie in [0, 1], got {fraction}")
    take = int(round(fraction * n))
    return np.sort(rng.permutation(n)[:take])


def robustness_point(bundle: DataBundle, cfg: TrainConfig, fraction: float,
                     test_bundle: DataBundle, truth: dict[str, int],
                     prd_results: dict | None = None) -> dict:
    """One sweep point: subsample the ambiguous subsets, train, evaluate.

    At fraction 0 no ambiguous data remains and the pipeline degenerates to
    the prediction-only baseline.
    """
    rng = np.random.default_rng(stage_seed(cfg.seed, f"subsample:{fraction}"))
    ic_rows = subsample_rows(bundle.ic_idx.size, fraction, rng)
    lr_rows = subsample_rows(bundle.lr_idx.size, fraction, rng)
    if ic_rows.size == 0 or lr_rows.size == 0:
        mv, _ = train_mv_prd(bundle, cfg,
                             stage1=None if prd_results is None
                             else {v: {"prd": prd_results[v]} for v in VIEWS})
        kind = "plain"
    else:
        if prd_results is None:
            stage1 = pretrain_all(bundle, cfg, ic_rows=ic_rows, lr_rows=lr_rows)
        else:
            stage1 = pretrain_all(bundle, cfg, ic_rows=ic_rows, lr_rows=lr_rows,
                                  roles=("cf", "lr"))
            stage1 = {v: dict(stage1[v], prd=prd_results[v]) for v in VIEWS}
        mv, _ = train_mv_dar(bundle, cfg, stage1=stage1)
        kind = "dar"
    report = evaluate_on_truth(mv, test_bundle, truth, keep_roc=False)
    return {"fraction": fraction, "kind": kind, "report": report,
            "n_ic": int(ic_rows.size), "n_lr": int(lr_rows.size)}


def robustness_sweep(bundle: DataBundle, cfg: TrainConfig,
                     test_bundle: DataBundle, truth: dict[str, int],
                     fractions=(0.2, 0.4, 0.6, 0.8, 1.0),
                     seeds: list[int] | None = None) -> dict:
    """Accuracy versus the fraction of ambiguous data used for training.

    The prediction-network pretraining does not depend on the fraction and is
    shared across all points of one seed.
    """
    seeds = [cfg.seed] if seeds is None else seeds
    points = []
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed)
        prd_results = {
            view: pretrain(
                "prd",
                bundle.patches3[bundle.cr_idx][:, vi],
                bundle.cr_labels,
                _cfg_for(seed_cfg, f"pre:{view}:prd"))
            for vi, view in enumerate(VIEWS)
        }
        for fraction in fractions:
            point = robustness_point(bundle, seed_cfg, float(fraction),
                                     test_bundle, truth, prd_results=prd_results)
            point["seed"] = seed
            points.append(point)
    curve = []
    for fraction in fractions:
        accs = [p["report"].accuracy for p in points if p["fraction"] == fraction]
        curve.append({"fraction": float(fraction),
                      "mean_accuracy": float(np.mean(accs)),
                      "accuracies": accs})
    return {"points": points, "curve": curve}


# ---------------------------------------------------------------------------
# Hyperparameter sweeps reusing the stage-1 checkpoints.
# ---------------------------------------------------------------------------

DEFAULT_WEIGHT_GRID = (0.40, 0.45, 0.50, 0.55, 0.60)


def sweep_grid(grid: dict[str, list]) -> list[dict]:
    """Cross product of the listed axes (subset of mu / delta / k)."""
    axes = [(name, list(values)) for name, values in grid.items() if values]
    if not axes:
        raise ConfigError("sweep grid is empty")
    unknown = [name for name, _ in axes if name not in ("mu", "delta", "k")]
    if unknown:
        raise ConfigError(f"unknown sweep axes {unknown}")
    combos = [{}]
    for name, values in axes:
        combos = [dict(c, **{name: v}) for c in combos for v in values]
    return combos


def hyper_sweep(bundle: DataBundle, cfg: TrainConfig,
                test_bundle: DataBundle, truth: dict[str, int],
                grid: dict[str, list] | None = None) -> list[dict]:
    """Evaluate the pipeline across a mu/delta/k grid.

    Pretraining is grid-independent and runs once; each combination reruns
    fine-tuning, fusion and evaluation.
    """
    if grid is None:
        grid = {"mu": list(DEFAULT_WEIGHT_GRID), "delta": list(DEFAULT_WEIGHT_GRID)}
    combos = sweep_grid(grid)
    stage1 = pretrain_all(bundle, cfg)
    rows = []
    for combo in combos:
        run_cfg = cfg
        if "mu" in combo or "delta" in combo:
            run_cfg = replace(run_cfg, loss=replace(
                cfg.loss, mu=combo.get("mu", cfg.loss.mu),
                delta=combo.get("delta", cfg.loss.delta)))
        if "k" in combo:
            run_cfg = replace(run_cfg, k=int(combo["k"]))
        mv, _ = train_mv_dar(bundle, run_cfg, stage1=stage1)
        report = evaluate_on_truth(mv, test_bundle, truth, keep_roc=False)
        rows.append(dict(combo, accuracy=report.accuracy,
                         macro_recall=report.macro_recall,
                         macro_f1=report.macro_f1,
                         macro_auc=report.macro_auc))
    return rows


# ---------------------------------------------------------------------------
# Model comparison with paired tests.
# ---------------------------------------------------------------------------

def compare_models(bundle: DataBundle, cfg: TrainConfig,
                   test_bundle: DataBundle, truth: dict[str, int],
                   seeds: list[int] | None = None) -> dict:
    """Full model vs. prediction-only vs. mean-proxy over paired seeds."""
    seeds = [cfg.seed + i for i in range(3)] if seeds is None else list(seeds)
    rows = {"mv_dar": [], "mv_prd": [], "ave": []}
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed)
        stage1 = pretrain_all(bundle, seed_cfg)
        mv_dar, _ = train_mv_dar(bundle, seed_cfg, stage1=stage1)
        mv_prd, _ = train_mv_prd(bundle, seed_cfg, stage1=stage1)
        ave, _ = baseline_ave(bundle, seed_cfg)
        rows["mv_dar"].append(evaluate_on_truth(mv_dar, test_bundle, truth, keep_roc=False))
        rows["mv_prd"].append(evaluate_on_truth(mv_prd, test_bundle, truth, keep_roc=False))
        rows["ave"].append(evaluate_on_truth(ave, test_bundle, truth, keep_roc=False))
    table = {name: aggregate_reports(reports) for name, reports in rows.items()}
    acc = {name: [rep.accuracy for rep in reports] for name, reports in rows.items()}
    pvalues = {
        "mv_dar_vs_mv_prd": paired_ttest(acc["mv_dar"], acc["mv_prd"]),
        "mv_dar_vs_ave": paired_ttest(acc["mv_dar"], acc["ave"]),
    }
    return {"seeds": seeds, "table": table, "accuracies": acc, "pvalues": pvalues}


# ---------------------------------------------------------------------------
# Report writers (deterministic byte-for-byte given identical inputs).
# ---------------------------------------------------------------------------

def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_metrics_json(path, report: MetricsReport) -> None:
    write_json(path, report.to_dict())


def write_metrics_csv(path, rows: list[dict]) -> None:
    """One row per run; the union of keys forms the header."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def write_roc_csvs(out_dir, report: MetricsReport) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for cls, (fpr, tpr) in report.roc.items():
        path = out_dir / f"roc_{cls}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            writer.writerows(zip(fpr.tolist(), tpr.tolist()))
        paths.append(path)
    return paths


def write_step_log(path, step_log: list[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in step_log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def labels_from_truth(bundle: DataBundle, truth: dict[str, int]) -> np.ndarray:
    return np.array([truth[rid] for rid in bundle.ids], dtype=np.int64)
