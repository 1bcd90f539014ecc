"""Backbone, sibling-network attention transfer, and multi-view fusion.

The backbone is a stack of ``m`` convolutional blocks sharing one layout
across the three sibling networks so that equal-depth feature maps have
identical shapes.  A block rectifies its input, applies a 3x3 convolution
(stride 1 or 2), then a per-sample, per-channel spatial normalization with a
learnable gain and shift.  Block outputs are therefore signed, which the
sigmoid-based attention gates rely on.  A global-average-pool + affine head
produces Q logits.

Three parameter-free gates couple the siblings at blocks ``k..m``:

* negative attention suppresses what the counterfactual network activates:
  ``(1 - sigmoid(f_cf)) * f_prd``;
* consistent attention emphasizes where the prediction and low-reliability
  networks agree: ``(1 - |sigmoid(f_lr) - sigmoid(f_prd)|) * f_prd``;
* fusion adds both gate outputs back onto ``f_prd``, and the sum replaces
  ``f_prd`` as the input of the next prediction block.

Everything is plain numpy with hand-derived backward passes; forwards are
deterministic functions of (parameters, input).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .losses import sigmoid, softmax

NORM_EPS = 1e-5

VIEWS = ("axial", "sagittal", "coronal")
ROLES = ("prd", "cf", "lr")

CHECKPOINT_MAGIC = b"DARC"


def default_transfer_start(m: int) -> int:
    """First transferred block for an m-block backbone.

    Scales the reference configuration (start at block 11 of 16, i.e. five
    blocks before the last) proportionally: ``k = m - ceil(5*m/16)``.
    """
    return max(1, m - math.ceil(5 * m / 16))


@dataclass(frozen=True)
class BackboneSpec:
    """Static layout shared by sibling networks: block channels/strides, input size."""

    m: int
    channels: tuple[int, ...]
    strides: tuple[int, ...]
    input_size: int
    q: int
    in_channels: int = 1

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError(f"backbone needs at least 2 blocks, got m={self.m}")
        if len(self.channels) != self.m or len(self.strides) != self.m:
            raise ConfigError("channels and strides must list one entry per block")
        if any(s not in (1, 2) for s in self.strides):
            raise ConfigError("block strides must be 1 or 2")
        if self.q < 2:
            raise ConfigError("q must be at least 2")

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """(C, H, W) emitted by each block for a spec-sized input."""
        shapes = []
        size = self.input_size
        for c, s in zip(self.channels, self.strides):
            size = (size - 1) // s + 1
            shapes.append((c, size, size))
        return shapes

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "channels": list(self.channels),
            "strides": list(self.strides),
            "input_size": self.input_size,
            "q": self.q,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(
            m=int(d["m"]),
            channels=tuple(int(c) for c in d["channels"]),
            strides=tuple(int(s) for s in d["strides"]),
            input_size=int(d["input_size"]),
            q=int(d["q"]),
            in_channels=int(d.get("in_channels", 1)),
        )


def default_backbone_spec(m: int = 6, base_width: int = 8, input_size: int = 64,
                          q: int = 5) -> BackboneSpec:
    """Stride 2 on odd blocks, width doubling after each downsampling pair."""
    strides = tuple(2 if i % 2 == 0 else 1 for i in range(m))
    channels = tuple(base_width * 2 ** (i // 2) for i in range(m))
    return BackboneSpec(m=m, channels=channels, strides=strides,
                        input_size=input_size, q=q)


def init_backbone_params(spec: BackboneSpec, rng: np.random.Generator,
                         dtype=np.float32) -> dict[str, np.ndarray]:
    """He-style init for conv kernels, unit gain / zero shift for the norms."""
    params: dict[str, np.ndarray] = {}
    c_in = spec.in_channels
    for i, c_out in enumerate(spec.channels, start=1):
        fan_in = c_in * 9
        params[f"block{i}.w"] = (
            rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / fan_in)
        ).astype(dtype)
        params[f"block{i}.gamma"] = np.ones(c_out, dtype=dtype)
        params[f"block{i}.beta"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    params["head.w"] = (
        rng.standard_normal((spec.q, c_in)) * np.sqrt(1.0 / c_in)
    ).astype(dtype)
    params["head.b"] = np.zeros(spec.q, dtype=dtype)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# Convolutional block: relu -> 3x3 conv (pad 1) -> spatial norm with affine.
# ---------------------------------------------------------------------------

def _conv3x3_forward(w, x, stride):
    """im2col into a contiguous buffer, then one batched GEMM."""
    n, c_in, h_in, w_in = x.shape
    c_out = w.shape[0]
    h_out = (h_in - 1) // stride + 1
    w_out = (w_in - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    length = h_out * w_out
    dtype = np.result_type(x, w)
    cols6 = np.empty((n, c_in, 3, 3, h_out, w_out), dtype=dtype)
    for di in range(3):
        for dj in range(3):
            cols6[:, :, di, dj] = xp[:, :, di:di + stride * (h_out - 1) + 1:stride,
                                     dj:dj + stride * (w_out - 1) + 1:stride]
    cols = cols6.reshape(n, c_in * 9, length)
    y = np.matmul(w.reshape(c_out, c_in * 9).astype(dtype, copy=False), cols)
    return y.reshape(n, c_out, h_out, w_out), (cols, xp.shape)


def _conv3x3_backward(w, conv_cache, stride, dy):
    cols, xp_shape = conv_cache
    n, c_out, h_out, w_out = dy.shape
    c_in = w.shape[1]
    length = h_out * w_out
    dy2 = dy.reshape(n, c_out, length)
    dw = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = np.matmul(w.reshape(c_out, c_in * 9).T, dy2)
    dcols6 = dcols.reshape(n, c_in, 3, 3, h_out, w_out)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di:di + stride * (h_out - 1) + 1:stride,
                dj:dj + stride * (w_out - 1) + 1:stride] += dcols6[:, :, di, dj]
    return dw, dxp[:, :, 1:-1, 1:-1]


def block_forward(params, i, x, stride, want_cache=False):
    """One block on a batch ``(N, C_in, H, W)``; returns output and cache."""
    w = params[f"block{i}.w"]
    gamma = params[f"block{i}.gamma"]
    beta = params[f"block{i}.beta"]
    mask = x > 0
    h = np.maximum(x, 0)
    y, conv_cache = _conv3x3_forward(w, h, stride)
    y -= y.mean(axis=(2, 3), keepdims=True)
    var = np.einsum("nchw,nchw->nc", y, y) / (y.shape[2] * y.shape[3])
    inv = 1.0 / np.sqrt(var + NORM_EPS)[:, :, None, None]
    z = y
    z *= inv
    out = gamma[None, :, None, None] * z + beta[None, :, None, None]
    cache = (i, mask, conv_cache, stride, z, inv, gamma, w) if want_cache else None
    return out, cache


def block_backward(params, cache, dout):
    """Gradients of one block; returns (dx, {param grads})."""
    i, mask, conv_cache, stride, z, inv, gamma, w = cache
    dgamma = (dout * z).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dz = dout * gamma[None, :, None, None]
    dy = inv * (dz - dz.mean(axis=(2, 3), keepdims=True)
                - z * (dz * z).mean(axis=(2, 3), keepdims=True))
    dw, dh = _conv3x3_backward(w, conv_cache, stride, dy)
    dx = np.where(mask, dh, 0.0 * dh)
    return dx, {f"block{i}.w": dw, f"block{i}.gamma": dgamma, f"block{i}.beta": dbeta}


def head_forward(params, f_top, want_cache=False):
    """Rectify, global-average-pool and affinely map the top feature block."""
    w, b = params["head.w"], params["head.b"]
    mask = f_top > 0
    g = np.where(mask, f_top, 0.0 * f_top).mean(axis=(2, 3))
    logits = g @ w.T + b
    cache = (mask, g, w) if want_cache else None
    return logits, cache


def head_backward(cache, dlogits):
    mask, g, w = cache
    dw = dlogits.T @ g
    db = dlogits.sum(axis=0)
    dg = dlogits @ w
    p = mask.shape[2] * mask.shape[3]
    df = np.where(mask, dg[:, :, None, None] / p, 0.0)
    return df, {"head.w": dw, "head.b": db}


def _check_input(spec: BackboneSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None, None, :, :]
    elif x.ndim == 3:
        x = x[:, None, :, :]
    if x.ndim != 4 or x.shape[1] != spec.in_channels or \
            x.shape[2] != spec.input_size or x.shape[3] != spec.input_size:
        raise ShapeError(
            f"expected patches of shape ({spec.input_size}, {spec.input_size}), "
            f"got input of shape {np.asarray(x).shape}"
        )
    return x


def plain_forward_batch(spec, params, x, want_cache=False):
    """All block outputs plus head logits for a batch of patches."""
    x = _check_input(spec, x)
    feats, caches = [], []
    cur = x
    for i, stride in enumerate(spec.strides, start=1):
        cur, cache = block_forward(params, i, cur, stride, want_cache)
        feats.append(cur)
        caches.append(cache)
    logits, head_cache = head_forward(params, cur, want_cache)
    return feats, logits, (caches, head_cache) if want_cache else None


def plain_backward_batch(spec, params, cache, dlogits, taps=None):
    """Backward through a plain stream.

    ``taps`` maps a 1-based block index to an extra gradient arriving at that
    block's output (the attention-path contributions for sibling streams).
    """
    caches, head_cache = cache
    grads: dict[str, np.ndarray] = {}
    if dlogits is not None:
        dcur, g = head_backward(head_cache, dlogits)
        grads.update(g)
    else:
        top = caches[-1]
        dcur = np.zeros_like(top[4])  # same shape as top block output
        grads["head.w"] = np.zeros_like(params["head.w"])
        grads["head.b"] = np.zeros_like(params["head.b"])
    for i in range(spec.m, 0, -1):
        if taps and i in taps:
            dcur = dcur + taps[i]
        dcur, g = block_backward(params, caches[i - 1], dcur)
        grads.update(g)
    return grads


def backbone_forward(spec, params, patch):
    """Single-patch forward: per-block feature maps (blocks 1..m) and Q logits."""
    feats, logits, _ = plain_forward_batch(spec, params, patch)
    return [f[0] for f in feats], logits[0]


# ---------------------------------------------------------------------------
# Attention modules (parameter-free) and feature fusion.
# ---------------------------------------------------------------------------

def _check_same_shape(a, b, what):
    if np.asarray(a).shape != np.asarray(b).shape:
        raise ShapeError(f"{what}: shapes {np.asarray(a).shape} and "
                         f"{np.asarray(b).shape} differ")


def na_module(f_cf: np.ndarray, f_prd: np.ndarray) -> np.ndarray:
    """Negative attention: ``(1 - sigmoid(f_cf)) * f_prd`` elementwise."""
    _check_same_shape(f_cf, f_prd, "na_module")
    return (1.0 - sigmoid(f_cf)) * f_prd


def na_module_backward(f_cf, f_prd, dout):
    """Gradients of the negative-attention output w.r.t. both inputs."""
    s = sigmoid(f_cf)
    d_prd = dout * (1.0 - s)
    d_cf = -dout * s * (1.0 - s) * f_prd
    return d_cf, d_prd


def ca_module(f_lr: np.ndarray, f_prd: np.ndarray) -> np.ndarray:
    """Consistent attention: ``(1 - |sigmoid(f_lr) - sigmoid(f_prd)|) * f_prd``."""
    _check_same_shape(f_lr, f_prd, "ca_module")
    cm = 1.0 - np.abs(sigmoid(f_lr) - sigmoid(f_prd))
    return cm * f_prd


def ca_module_backward(f_lr, f_prd, dout):
    """Gradients of the consistent-attention output w.r.t. both inputs."""
    s_lr = sigmoid(f_lr)
    s_p = sigmoid(f_prd)
    diff = s_lr - s_p
    sign = np.sign(diff)
    cm = 1.0 - np.abs(diff)
    d_prd = dout * (cm + f_prd * sign * s_p * (1.0 - s_p))
    d_lr = -dout * sign * s_lr * (1.0 - s_lr) * f_prd
    return d_lr, d_prd


def fuse_features(f_prd: np.ndarray, o_na: np.ndarray, o_ca: np.ndarray) -> np.ndarray:
    """Augmented features: elementwise sum of the original map and both gates."""
    _check_same_shape(f_prd, o_na, "fuse_features")
    _check_same_shape(f_prd, o_ca, "fuse_features")
    return f_prd + o_na + o_ca


# ---------------------------------------------------------------------------
# DAR submodel: three parameter sets, transfer at blocks k..m.
# ---------------------------------------------------------------------------

@dataclass
class DarModel:
    """Sibling parameter sets plus the first transferred block index ``k``.

    ``k = m + 1`` disables the transfer entirely, in which case the
    counterfactual / low-reliability parameter sets may be omitted.
    """

    spec: BackboneSpec
    k: int
    prd: dict[str, np.ndarray]
    cf: dict[str, np.ndarray] | None
    lr: dict[str, np.ndarray] | None

    def __post_init__(self):
        if not 1 <= self.k <= self.spec.m + 1:
            raise ConfigError(f"k must lie in [1, m+1], got {self.k}")
        if self.k <= self.spec.m and (self.cf is None or self.lr is None):
            raise ConfigError("transfer enabled but sibling parameters missing")

    @property
    def transfer_enabled(self) -> bool:
        return self.k <= self.spec.m


def dar_forward_batch(model: DarModel, x, want_cache=False):
    """Batched DAR forward.

    Returns ``(y_prd, y_cf, y_lr, feats, cache)`` where ``feats`` is a dict
    with the plain prediction-stream maps under ``"prd"``, sibling maps under
    ``"cf"``/``"lr"``, and the augmented maps (blocks k..m) under ``"fused"``.
    Sibling entries are None when the transfer is disabled and the model
    carries no sibling parameters.
    """
    spec = model.spec
    x = _check_input(spec, x)
    run_siblings = model.cf is not None and model.lr is not None

    feats_cf = logits_cf = cache_cf = None
    feats_lr = logits_lr = cache_lr = None
    if run_siblings:
        feats_cf, logits_cf, cache_cf = plain_forward_batch(spec, model.cf, x, want_cache)
        feats_lr, logits_lr, cache_lr = plain_forward_batch(spec, model.lr, x, want_cache)

    feats_prd, fused, caches_prd = [], {}, []
    cur = x
    for i, stride in enumerate(spec.strides, start=1):
        f, cache = block_forward(model.prd, i, cur, stride, want_cache)
        feats_prd.append(f)
        caches_prd.append(cache)
        if i >= model.k:
            o_na = na_module(feats_cf[i - 1], f)
            o_ca = ca_module(feats_lr[i - 1], f)
            cur = fuse_features(f, o_na, o_ca)
            fused[i] = cur
        else:
            cur = f
    logits_prd, head_cache_prd = head_forward(model.prd, cur, want_cache)

    y_prd = softmax(logits_prd)
    y_cf = sigmoid(logits_cf) if logits_cf is not None else None
    y_lr = softmax(logits_lr) if logits_lr is not None else None
    feats = {"prd": feats_prd, "cf": feats_cf, "lr": feats_lr, "fused": fused}
    cache = None
    if want_cache:
        cache = {
            "prd_caches": caches_prd,
            "prd_head": head_cache_prd,
            "cf_cache": cache_cf,
            "lr_cache": cache_lr,
            "feats": feats,
            "logits": (logits_prd, logits_cf, logits_lr),
        }
    return y_prd, y_cf, y_lr, feats, cache


def dar_forward(model: DarModel, patch):
    """Single-patch DAR forward per the public contract.

    Returns the three activated Q-vectors and the per-stream block features.
    """
    y_prd, y_cf, y_lr, feats, _ = dar_forward_batch(model, patch)
    single = lambda lst: [f[0] for f in lst] if lst is not None else None
    return (
        y_prd[0],
        y_cf[0] if y_cf is not None else None,
        y_lr[0] if y_lr is not None else None,
        (single(feats["prd"]), single(feats["cf"]), single(feats["lr"])),
    )


def dar_backward_batch(model: DarModel, cache, d_prd_logits, d_cf_logits,
                       d_lr_logits):
    """Gradients of all three parameter sets given per-head logit gradients.

    The prediction stream backpropagates through the fusion chain; gate
    gradients accumulate as taps on the sibling streams' block outputs and
    join each sibling's own head gradient.
    """
    spec = model.spec
    feats = cache["feats"]
    run_siblings = cache["cf_cache"] is not None

    dcur, grads_prd = head_backward(cache["prd_head"], d_prd_logits)
    taps_cf: dict[int, np.ndarray] = {}
    taps_lr: dict[int, np.ndarray] = {}
    for i in range(spec.m, 0, -1):
        if i >= model.k:
            f = feats["prd"][i - 1]
            f_cf = feats["cf"][i - 1]
            f_lr = feats["lr"][i - 1]
            d_cf_tap, d_prd_na = na_module_backward(f_cf, f, dcur)
            d_lr_tap, d_prd_ca = ca_module_backward(f_lr, f, dcur)
            taps_cf[i] = d_cf_tap
            taps_lr[i] = d_lr_tap
            dcur = dcur + d_prd_na + d_prd_ca
        dcur, g = block_backward(model.prd, cache["prd_caches"][i - 1], dcur)
        grads_prd.update(g)

    grads_cf = grads_lr = None
    if run_siblings:
        grads_cf = plain_backward_batch(spec, model.cf, cache["cf_cache"],
                                        d_cf_logits, taps=taps_cf)
        grads_lr = plain_backward_batch(spec, model.lr, cache["lr_cache"],
                                        d_lr_logits, taps=taps_lr)
    return grads_prd, grads_cf, grads_lr


# ---------------------------------------------------------------------------
# Multi-view model: three DARs plus a 3Q -> Q fusion affine map.
# ---------------------------------------------------------------------------

@dataclass
class MvModel:
    """Per-view DAR submodels and the fusion layer over concatenated outputs."""

    views: dict[str, DarModel]
    fusion_w: np.ndarray
    fusion_b: np.ndarray

    def __post_init__(self):
        if set(self.views) != set(VIEWS):
            raise ConfigError(f"views must be exactly {VIEWS}, got {set(self.views)}")
        q = self.views[VIEWS[0]].spec.q
        self.fusion_w = np.asarray(self.fusion_w)
        self.fusion_b = np.asarray(self.fusion_b)
        if self.fusion_w.shape != (q, 3 * q) or self.fusion_b.shape != (q,):
            raise ConfigError(
                f"fusion map must be ({q}, {3 * q}) plus {q} biases, got "
                f"{self.fusion_w.shape} and {self.fusion_b.shape}"
            )

    @property
    def q(self) -> int:
        return self.fusion_b.shape[0]


def averaging_fusion(q: int, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Fusion init that reproduces the mean of the three view outputs."""
    eye = np.eye(q, dtype=dtype)
    return np.concatenate([eye, eye, eye], axis=1) / 3.0, np.zeros(q, dtype=dtype)


def view_probabilities_batch(mv: MvModel, patches) -> np.ndarray:
    """Per-view prediction-head probabilities, shape ``(N, 3, Q)``.

    Sibling streams run only as far as the attention transfer requires.
    """
    patches = np.asarray(patches)
    if patches.ndim == 3:
        patches = patches[None, ...]
    if patches.ndim != 4 or patches.shape[1] != 3:
        raise ShapeError(f"expected (N, 3, S, S) patches, got {patches.shape}")
    probs = []
    for vi, view in enumerate(VIEWS):
        y_prd, _, _, _, _ = dar_forward_batch(mv.views[view], patches[:, vi])
        probs.append(y_prd)
    return np.stack(probs, axis=1)


def mv_forward_batch(mv: MvModel, patches) -> tuple[np.ndarray, np.ndarray]:
    """Fusion logits ``(N, Q)`` and the per-view probabilities behind them."""
    probs = view_probabilities_batch(mv, patches)
    n = probs.shape[0]
    concat = probs.reshape(n, -1)
    logits = concat @ mv.fusion_w.T + mv.fusion_b
    return logits, probs


def mv_forward(mv: MvModel, triplet) -> np.ndarray:
    """Fusion logits for one sample (a PatchTriplet or a (3, S, S) array)."""
    arr = triplet.stack() if hasattr(triplet, "stack") else np.asarray(triplet)
    logits, _ = mv_forward_batch(mv, arr[None, ...])
    return logits[0]


# ---------------------------------------------------------------------------
# Checkpoint container: JSON header + named f32 little-endian blobs.
# ---------------------------------------------------------------------------

def save_checkpoint(path, meta: dict, params: dict[str, np.ndarray]) -> None:
    """Write a single-file checkpoint; parameter order is sorted by name."""
    names = sorted(params)
    header = {
        "meta": meta,
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(params[n].astype("<f4", copy=False).tobytes(order="C"))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint, validating blob sizes against the header shapes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DataError(
                    f"{path}: truncated blob for {entry['name']!r}"
                )
            params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise DataError(f"{path}: trailing bytes after final blob")
    return header["meta"], params


def _flatten(prefix: str, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in params.items()}


def _unflatten(prefix: str, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def save_backbone(path, spec: BackboneSpec, params, role: str = "prd",
                  view: str | None = None, extra: dict | None = None) -> None:
    meta = {"kind": "backbone", "spec": spec.to_dict(), "role": role, "view": view}
    if extra:
        meta.update(extra)
    save_checkpoint(path, meta, params)


def load_backbone(path) -> tuple[BackboneSpec, dict[str, np.ndarray], dict]:
    meta, params = load_checkpoint(path)
    if meta.get("kind") != "backbone":
        raise DataError(f"{path}: expected a backbone checkpoint, got {meta.get('kind')!r}")
    spec = BackboneSpec.from_dict(meta["spec"])
    _validate_backbone_shapes(spec, params, path)
    return spec, params, meta


def _validate_backbone_shapes(spec, params, path):
    rng = np.random.default_rng(0)
    expected = init_backbone_params(spec, rng)
    for name, arr in expected.items():
        if name not in params:
            raise DataError(f"{path}: missing parameter {name!r}")
        if params[name].shape != arr.shape:
            raise DataError(
                f"{path}: parameter {name!r} has shape {params[name].shape}, "
                f"expected {arr.shape}"
            )


def save_dar_model(path, model: DarModel, view: str | None = None) -> None:
    meta = {
        "kind": "dar",
        "spec": model.spec.to_dict(),
        "k": model.k,
        "q": model.spec.q,
        "roles": [r for r in ROLES if getattr(model, r) is not None],
        "view": view,
    }
    params: dict[str, np.ndarray] = {}
    for role in ROLES:
        p = getattr(model, role)
        if p is not None:
            params.update(_flatten(role, p))
    save_checkpoint(path, meta, params)


def load_dar_model(path) -> DarModel:
    meta, params = load_checkpoint(path)
    if meta.get("kind") != "dar":
        raise DataError(f"{path}: expected a DAR checkpoint, got {meta.get('kind')!r}")
    spec = BackboneSpec.from_dict(meta["spec"])
    parts = {}
    for role in ROLES:
        sub = _unflatten(role, params)
        if sub:
            _validate_backbone_shapes(spec, sub, path)
        parts[role] = sub or None
    return DarModel(spec=spec, k=int(meta["k"]), prd=parts["prd"],
                    cf=parts["cf"], lr=parts["lr"])


def save_mv_model(path, mv: MvModel) -> None:
    spec = mv.views[VIEWS[0]].spec
    meta = {
        "kind": "mv",
        "spec": spec.to_dict(),
        "k": mv.views[VIEWS[0]].k,
        "q": spec.q,
        "views": list(VIEWS),
        "roles": [r for r in ROLES if getattr(mv.views[VIEWS[0]], r) is not None],
    }
    params: dict[str, np.ndarray] = {
        "fusion.w": mv.fusion_w,
        "fusion.b": mv.fusion_b,
    }
    for view in VIEWS:
        model = mv.views[view]
        for role in ROLES:
            p = getattr(model, role)
            if p is not None:
                params.update(_flatten(f"{view}.{role}", p))
    save_checkpoint(path, meta, params)


def load_mv_model(path) -> MvModel:
    meta, params = load_checkpoint(path)
    if meta.get("kind") != "mv":
        raise DataError(f"{path}: expected an MV checkpoint, got {meta.get('kind')!r}")
    spec = BackboneSpec.from_dict(meta["spec"])
    views = {}
    for view in VIEWS:
        parts = {}
        for role in ROLES:
            sub = _unflatten(f"{view}.{role}", params)
            if sub:
                _validate_backbone_shapes(spec, sub, path)
            parts[role] = sub or None
        views[view] = DarModel(spec=spec, k=int(meta["k"]), prd=parts["prd"],
                               cf=parts["cf"], lr=parts["lr"])
    return MvModel(views=views, fusion_w=params["fusion.w"], fusion_b=params["fusion.b"])


# ---------------------------------------------------------------------------
# Feature-map inspection.
# ---------------------------------------------------------------------------

def feature_map_fields(model: DarModel, patch, block: int) -> dict[str, np.ndarray]:
    """Channel-wise sums (pre-normalization) of the four maps at one block.

    Valid blocks are the transferred range ``k..m``.  Also returns the two
    gate outputs so callers can verify the additive structure of the fusion.
    """
    if not model.k <= block <= model.spec.m:
        raise ConfigError(
            f"block {block} outside the transferred range [{model.k}, {model.spec.m}]"
        )
    _, _, _, feats, _ = dar_forward_batch(model, patch)
    f_prd = feats["prd"][block - 1][0]
    f_cf = feats["cf"][block - 1][0]
    f_lr = feats["lr"][block - 1][0]
    fused = feats["fused"][block][0]
    o_na = na_module(f_cf, f_prd)
    o_ca = ca_module(f_lr, f_prd)
    return {
        "prd": f_prd.sum(axis=0),
        "lr": f_lr.sum(axis=0),
        "cf": f_cf.sum(axis=0),
        "fused": fused.sum(axis=0),
        "na": o_na.sum(axis=0),
        "ca": o_ca.sum(axis=0),
    }


def normalize_field(field: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant field maps to mid-gray 0.5."""
    lo, hi = float(field.min()), float(field.max())
    if hi == lo:
        return np.full_like(field, 0.5, dtype=np.float64)
    return (field.astype(np.float64) - lo) / (hi - lo)


def dump_feature_maps(model: DarModel, patch, block: int, out_dir) -> list[Path]:
    """Write the four normalized fields at one block as grayscale PNGs."""
    from PIL import Image

    fields = feature_map_fields(model, patch, block)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ("prd", "lr", "cf", "fused"):
        img = (normalize_field(fields[name]) * 255.0).round().astype(np.uint8)
        path = out_dir / f"block{block}_{name}.png"
        Image.fromarray(img, mode="L").save(path)
        paths.append(path)
    return paths
