"""Synthetic volumetric datasets with a controllable annotator-noise model.

Each sample is a cube containing one blob over low-amplitude background noise.
Blob radius, intensity and boundary irregularity all grow monotonically with
the class index, so "severity" is an ordinal, learnable property.  Annotators
are simulated by drawing a rater count and then i.i.d. scores from the row of
a confusion matrix, which makes the consistent/inconsistent/single-rater
proportions of the resulting dataset a computable function of the model.

Ground truth goes to a separate sidecar file that training code never reads;
only evaluation may consult it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .labels import Q_DEFAULT
from .volume import Volume, write_volume

_TOL = 1e-9


@dataclass
class AnnotatorModel:
    """Row-stochastic confusion matrix plus a distribution over rater counts."""

    confusion: np.ndarray                 # (Q, Q): row = true class, col = emitted score
    count_dist: np.ndarray                # probabilities over 1..4 raters

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.float64)
        self.count_dist = np.asarray(self.count_dist, dtype=np.float64)
        if self.confusion.ndim != 2 or self.confusion.shape[0] != self.confusion.shape[1]:
            raise ConfigError(f"confusion must be square, got {self.confusion.shape}")
        if np.any(self.confusion < 0):
            raise ConfigError("confusion entries must be non-negative")
        rows = self.confusion.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > _TOL):
            raise ConfigError(f"confusion rows must sum to 1, got sums {rows}")
        if self.count_dist.ndim != 1 or self.count_dist.size != 4:
            raise ConfigError("count_dist must have 4 entries (1..4 raters)")
        if np.any(self.count_dist < 0) or abs(self.count_dist.sum() - 1.0) > _TOL:
            raise ConfigError("count_dist must be a probability vector")

    @property
    def q(self) -> int:
        return self.confusion.shape[0]

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "count_dist": self.count_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotatorModel":
        return cls(np.asarray(d["confusion"]), np.asarray(d["count_dist"]))


def tridiagonal_confusion(q: int = Q_DEFAULT, truth: float = 0.7,
                          neighbor: float = 0.15) -> np.ndarray:
    """Confusion with mass on the true score and its adjacent scores.

    Interior rows get ``truth`` on the diagonal and ``neighbor`` on each side;
    edge rows fold the missing neighbor's mass onto the existing one so the
    truth mass stays exactly ``truth`` for every class.
    """
    if truth + 2 * neighbor != 1.0:
        raise ConfigError("truth + 2*neighbor must equal 1")
    m = np.zeros((q, q))
    for c in range(q):
        m[c, c] = truth
        left, right = c - 1, c + 1
        if left < 0:
            m[c, right] = 2 * neighbor
        elif right >= q:
            m[c, left] = 2 * neighbor
        else:
            m[c, left] = neighbor
            m[c, right] = neighbor
    return m


def identity_confusion(q: int = Q_DEFAULT) -> np.ndarray:
    return np.eye(q)


def default_annotator_model(q: int = Q_DEFAULT) -> AnnotatorModel:
    """Noise model whose expected subset split approximates 15/55/30 CR/IC/LR.

    30% single-rater samples land in the low-reliability set by construction;
    the tridiagonal noise then fixes how often multi-rater scores all agree.
    """
    return AnnotatorModel(
        confusion=tridiagonal_confusion(q),
        count_dist=np.array([0.30, 0.0, 0.0, 0.70]),
    )


@dataclass
class SyntheticSpec:
    """Geometry and sampling parameters for one synthetic dataset."""

    q: int = Q_DEFAULT
    n_samples: int = 2000
    side: int = 64
    class_prior: np.ndarray = field(default_factory=lambda: np.full(Q_DEFAULT, 0.2))
    # adjacent radius ranges overlap, so the ordinal classes are genuinely
    # confusable and label quality matters
    radius_lo: np.ndarray = field(default_factory=lambda: 4.0 + 1.5 * np.arange(1, Q_DEFAULT + 1))
    radius_hi: np.ndarray = field(default_factory=lambda: 6.2 + 1.5 * np.arange(1, Q_DEFAULT + 1))
    intensity_lo: np.ndarray = field(default_factory=lambda: 0.44 + 0.055 * np.arange(1, Q_DEFAULT + 1))
    intensity_hi: np.ndarray = field(default_factory=lambda: 0.57 + 0.055 * np.arange(1, Q_DEFAULT + 1))
    roughness: np.ndarray = field(default_factory=lambda: 0.06 * np.arange(1, Q_DEFAULT + 1))
    edge_width: float = 2.0
    noise_amp: float = 0.045
    center_jitter: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("class_prior", "radius_lo", "radius_hi", "intensity_lo",
                     "intensity_hi", "roughness"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.size != self.q:
                raise ConfigError(f"{name} must have {self.q} entries, got {arr.size}")
            setattr(self, name, arr)
        if abs(self.class_prior.sum() - 1.0) > _TOL or np.any(self.class_prior < 0):
            raise ConfigError("class_prior must be a probability vector")
        if np.any(np.diff(self.radius_lo) < 0) or np.any(np.diff(self.radius_hi) < 0):
            raise ConfigError("radius ranges must be monotone in the class index")
        if np.any(self.radius_hi <= self.radius_lo):
            raise ConfigError("radius_hi must exceed radius_lo")

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "n_samples": self.n_samples,
            "side": self.side,
            "class_prior": self.class_prior.tolist(),
            "radius_lo": self.radius_lo.tolist(),
            "radius_hi": self.radius_hi.tolist(),
            "intensity_lo": self.intensity_lo.tolist(),
            "intensity_hi": self.intensity_hi.tolist(),
            "roughness": self.roughness.tolist(),
            "edge_width": self.edge_width,
            "noise_amp": self.noise_amp,
            "center_jitter": self.center_jitter,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        kwargs = dict(d)
        for name in ("class_prior", "radius_lo", "radius_hi", "intensity_lo",
                     "intensity_hi", "roughness"):
            if name in kwargs:
                kwargs[name] = np.asarray(kwargs[name], dtype=np.float64)
        return cls(**kwargs)


def gen_volume(class_index: int, spec: SyntheticSpec,
               rng: np.random.Generator) -> tuple[Volume, tuple[int, int, int]]:
    """One cube with a single class-dependent blob over bounded uniform noise.

    Outside the blob's support (radius * (1 + roughness) plus the edge width)
    voxel magnitudes never exceed the noise amplitude.
    """
    if not 1 <= class_index <= spec.q:
        raise DataError(f"class {class_index} outside [1, {spec.q}]")
    c = class_index - 1
    side = spec.side
    jitter = spec.center_jitter
    center = tuple(
        int(side // 2 + rng.integers(-jitter, jitter + 1)) for _ in range(3)
    )
    radius = float(rng.uniform(spec.radius_lo[c], spec.radius_hi[c]))
    intensity = float(rng.uniform(spec.intensity_lo[c], spec.intensity_hi[c]))
    rough = float(spec.roughness[c])

    # Smooth directional modulation of the radius: a few random quadratic
    # lobes, normalized into [-1, 1], scaled by the class roughness.
    dirs = rng.standard_normal((3, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    amps = rng.uniform(-1.0, 1.0, size=3)

    ax = np.arange(side, dtype=np.float64)
    dx = (ax - center[0])[:, None, None]
    dy = (ax - center[1])[None, :, None]
    dz = (ax - center[2])[None, None, :]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(dist > 0, 1.0 / np.maximum(dist, 1e-12), 0.0)
    ux, uy, uz = dx * inv, dy * inv, dz * inv
    lobes = sum(
        a * (ux * d[0] + uy * d[1] + uz * d[2]) ** 2 for a, d in zip(amps, dirs)
    )
    denom = np.sum(np.abs(amps))
    if denom > 0:
        lobes = lobes / denom
    local_radius = radius * (1.0 + rough * lobes)

    blob = np.clip((local_radius - dist) / spec.edge_width, 0.0, 1.0)
    noise = rng.uniform(-spec.noise_amp, spec.noise_amp, size=(side, side, side))
    voxels = np.clip(blob * intensity + noise, 0.0, 1.0).astype(np.float32)
    return Volume(voxels, (1.0, 1.0, 1.0)), center


def simulate_annotators(true_class: int, model: AnnotatorModel,
                        rng: np.random.Generator) -> list[int]:
    """Draw a rater count, then that many i.i.d. scores from the truth row."""
    if not 1 <= true_class <= model.q:
        raise DataError(f"class {true_class} outside [1, {model.q}]")
    n = int(rng.choice(np.arange(1, 5), p=model.count_dist))
    row = model.confusion[true_class - 1]
    scores = rng.choice(np.arange(1, model.q + 1), size=n, p=row)
    return [int(s) for s in scores]


def expected_subset_fractions(model: AnnotatorModel,
                              class_prior: np.ndarray) -> tuple[float, float, float]:
    """Exact (consistent, inconsistent, single-rater) probabilities of the model."""
    prior = np.asarray(class_prior, dtype=np.float64)
    p_lr = float(model.count_dist[0])
    p_cr = 0.0
    for c in range(model.q):
        row = model.confusion[c]
        for idx, p_n in enumerate(model.count_dist[1:], start=2):
            p_cr += prior[c] * p_n * float(np.sum(row ** idx))
    return p_cr, 1.0 - p_cr - p_lr, p_lr


def gen_dataset(spec: SyntheticSpec, model: AnnotatorModel, out_dir) -> Path:
    """Write volumes, a JSONL manifest and a ground-truth sidecar; return the manifest path.

    Per-sample state is derived from spawned seeds, so the dataset is fully
    determined by ``spec.seed`` and samples could be generated in any order.
    """
    if model.q != spec.q:
        raise ConfigError(f"annotator model Q={model.q} does not match spec Q={spec.q}")
    out_dir = Path(out_dir)
    vol_dir = out_dir / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(spec.seed)
    class_rng = np.random.default_rng(root.spawn(1)[0])
    classes = class_rng.choice(
        np.arange(1, spec.q + 1), size=spec.n_samples, p=spec.class_prior
    )
    sample_seeds = root.spawn(spec.n_samples)

    manifest_path = out_dir / "manifest.jsonl"
    truth: dict[str, int] = {}
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for i, (cls, seed) in enumerate(zip(classes, sample_seeds)):
            rng = np.random.default_rng(seed)
            vol, center = gen_volume(int(cls), spec, rng)
            scores = simulate_annotators(int(cls), model, rng)
            rid = f"s{i:05d}"
            rel = f"volumes/{rid}.nvol"
            write_volume(vol, out_dir / rel)
            rec = {
                "id": rid,
                "volume": rel,
                "annotations": scores,
                "center": list(center),
            }
            fh.write(json.dumps(rec) + "\n")
            truth[rid] = int(cls)

    with open(out_dir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
    with open(out_dir / "generator_config.json", "w", encoding="utf-8") as fh:
        json.dump({"spec": spec.to_dict(), "annotators": model.to_dict()},
                  fh, indent=2, sort_keys=True)
    return manifest_path


def load_truth(path) -> dict[str, int]:
    """Read a ground-truth sidecar ``{id: true_class}``."""
    with open(path, "r", encoding="utf-8") as fh:
        return {str(k): int(v) for k, v in json.load(fh).items()}
