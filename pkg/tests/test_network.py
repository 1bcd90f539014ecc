"""Backbone contract, attention modules, DAR composition, checkpoints."""

import numpy as np
import pytest
from PIL import Image

from dar.errors import ConfigError, DataError, ShapeError
from dar.losses import ce_loss_and_grad, sigmoid, softmax
from dar.network import (BackboneSpec, DarModel, MvModel, averaging_fusion,
                         backbone_forward, block_forward, ca_module,
                         ca_module_backward, dar_forward, dar_forward_batch,
                         default_backbone_spec, default_transfer_start,
                         dump_feature_maps, feature_map_fields, fuse_features,
                         head_forward, init_backbone_params, load_backbone,
                         load_checkpoint, load_dar_model, load_mv_model,
                         mv_forward, mv_forward_batch, na_module,
                         na_module_backward, normalize_field,
                         plain_forward_batch, save_backbone, save_checkpoint,
                         save_dar_model, save_mv_model, zeros_like_params)

SPEC = default_backbone_spec(m=3, base_width=4, input_size=16, q=5)


def _params(seed=0, spec=SPEC, dtype=np.float32):
    return init_backbone_params(spec, np.random.default_rng(seed), dtype=dtype)


def _patch(seed=0, s=16):
    return np.random.default_rng(seed).random((s, s), dtype=np.float32)


class TestBackboneSpec:
    def test_transfer_start_scaling(self):
        assert default_transfer_start(16) == 11
        assert default_transfer_start(6) == 4
        assert default_transfer_start(2) >= 1

    def test_feature_shapes(self):
        spec = default_backbone_spec(m=6, base_width=8, input_size=64, q=5)
        shapes = spec.feature_shapes()
        assert shapes[0] == (8, 32, 32)
        assert shapes[-1] == (32, 8, 8)

    def test_minimum_depth(self):
        with pytest.raises(ConfigError):
            BackboneSpec(m=1, channels=(4,), strides=(1,), input_size=8, q=5)


class TestBackboneForward:
    def test_zero_weights_give_zero_logits(self):
        params = zeros_like_params(_params())
        _, logits = backbone_forward(SPEC, params, _patch())
        np.testing.assert_array_equal(logits, np.zeros(5))

    def test_shape_contract_enforced(self):
        params = _params()
        backbone_forward(SPEC, params, _patch())  # correct shape passes
        with pytest.raises(ShapeError):
            backbone_forward(SPEC, params, np.zeros((17, 17), dtype=np.float32))

    def test_deterministic(self):
        params = _params(3)
        _, a = backbone_forward(SPEC, params, _patch(1))
        _, b = backbone_forward(SPEC, params, _patch(1))
        assert a.tobytes() == b.tobytes()

    def test_emits_all_block_shapes(self):
        feats, logits = backbone_forward(SPEC, _params(), _patch())
        assert [f.shape for f in feats] == SPEC.feature_shapes()
        assert logits.shape == (5,)


class TestAttentionModules:
    def test_na_zero_field(self):
        f_prd = np.random.default_rng(0).standard_normal((2, 3, 3))
        out = na_module(np.zeros_like(f_prd), f_prd)
        np.testing.assert_allclose(out, 0.5 * f_prd, atol=1e-12)

    def test_na_saturated_high(self):
        f_prd = np.random.default_rng(1).standard_normal((2, 3, 3))
        out = na_module(np.full_like(f_prd, 40.0), f_prd)
        assert np.all(np.abs(out) <= 1e-15 * np.abs(f_prd) + 1e-300)

    def test_na_saturated_low(self):
        f_prd = np.random.default_rng(2).standard_normal((2, 3, 3))
        out = na_module(np.full_like(f_prd, -40.0), f_prd)
        np.testing.assert_allclose(out, f_prd, rtol=1e-15)

    def test_na_bounded_by_prd(self):
        rng = np.random.default_rng(3)
        f_cf = rng.standard_normal((2, 3, 3)) * 5
        f_prd = rng.standard_normal((2, 3, 3)) * 5
        assert np.all(np.abs(na_module(f_cf, f_prd)) <= np.abs(f_prd))

    def test_ca_equal_inputs(self):
        f = np.random.default_rng(4).standard_normal((2, 3, 3))
        np.testing.assert_array_equal(ca_module(f.copy(), f), f)

    def test_ca_opposite_saturation(self):
        f_lr = np.full((2, 3, 3), 40.0)
        f_prd = np.full((2, 3, 3), -40.0)
        assert np.all(np.abs(ca_module(f_lr, f_prd)) < 1e-12)

    def test_ca_zero_fields(self):
        zero = np.zeros((2, 3, 3))
        np.testing.assert_array_equal(ca_module(zero, zero), zero)

    def test_ca_metric_in_unit_interval_and_sign_preserved(self):
        rng = np.random.default_rng(5)
        f_lr = rng.standard_normal((2, 3, 3)) * 3
        f_prd = rng.standard_normal((2, 3, 3)) * 3
        cm = 1.0 - np.abs(sigmoid(f_lr) - sigmoid(f_prd))
        assert np.all(cm > 0) and np.all(cm <= 1)
        out = ca_module(f_lr, f_prd)
        nz = f_prd != 0
        assert np.all(np.sign(out[nz]) == np.sign(f_prd[nz]))

    def test_fuse_additive_identity(self):
        f = np.random.default_rng(6).standard_normal((2, 3, 3))
        zero = np.zeros_like(f)
        np.testing.assert_array_equal(fuse_features(f, zero, zero), f)

    def test_fuse_arithmetic(self):
        ones = np.ones((2, 3, 3))
        np.testing.assert_array_equal(fuse_features(ones, ones, ones), 3 * ones)

    def test_fuse_composed_limits(self):
        # saturated-high counterfactual gates its term to zero; identical
        # low-reliability features pass the prediction map through unchanged
        f_prd = np.random.default_rng(7).standard_normal((2, 3, 3))
        o_na = na_module(np.full_like(f_prd, 40.0), f_prd)
        o_ca = ca_module(f_prd.copy(), f_prd)
        np.testing.assert_allclose(fuse_features(f_prd, o_na, o_ca), 2 * f_prd,
                                   rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            na_module(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))
        with pytest.raises(ShapeError):
            ca_module(np.zeros((2, 3, 3)), np.zeros((1, 3, 3)))
        with pytest.raises(ShapeError):
            fuse_features(np.zeros((2, 3, 3)), np.zeros((2, 3, 3)),
                          np.zeros((2, 3, 2)))


def _module_fd(module, backward, f_a, f_b, step=1e-3, exclude=None):
    """Central-difference check of a two-input elementwise module."""
    rng = np.random.default_rng(99)
    weight = rng.standard_normal(f_a.shape)
    objective = lambda a, b: float(np.sum(module(a, b) * weight))
    d_a, d_b = backward(f_a, f_b, weight)
    worst = 0.0
    for arr, grad in ((f_a, d_a), (f_b, d_b)):
        flat = arr.ravel()
        g = grad.ravel()
        for i in range(flat.size):
            if exclude is not None and exclude.ravel()[i]:
                continue
            orig = flat[i]
            flat[i] = orig + step
            up = objective(f_a, f_b)
            flat[i] = orig - step
            down = objective(f_a, f_b)
            flat[i] = orig
            fd = (up - down) / (2 * step)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8))
    return worst


class TestModuleGradients:
    def test_na_gradients(self):
        rng = np.random.default_rng(20)
        f_cf = rng.standard_normal((2, 3, 3))
        f_prd = rng.standard_normal((2, 3, 3))
        assert _module_fd(na_module, na_module_backward, f_cf, f_prd) <= 1e-4

    def test_ca_gradients_excluding_kink(self):
        rng = np.random.default_rng(21)
        f_lr = rng.standard_normal((2, 3, 3))
        f_prd = rng.standard_normal((2, 3, 3))
        exclude = np.abs(sigmoid(f_lr) - sigmoid(f_prd)) < 1e-6
        err = _module_fd(lambda a, b: ca_module(a, b), ca_module_backward,
                         f_lr, f_prd, exclude=exclude)
        assert err <= 1e-4

    def test_fuse_gradient_is_identity(self):
        # the fusion is a plain sum, so each input's gradient is the upstream
        rng = np.random.default_rng(22)
        f = rng.standard_normal((2, 3, 3))
        dout = rng.standard_normal((2, 3, 3))
        d_cf, d_prd_na = na_module_backward(np.zeros_like(f), f, dout)
        assert d_prd_na.shape == f.shape and d_cf.shape == f.shape


class TestDarForward:
    def _model(self, k, seed=0):
        return DarModel(spec=SPEC, k=k, prd=_params(seed), cf=_params(seed + 1),
                        lr=_params(seed + 2))

    def test_transfer_disabled_equals_plain(self):
        # all three streams must match independent plain forwards bit-exactly
        model = self._model(k=SPEC.m + 1)
        patch = _patch(9)
        y_prd, y_cf, y_lr, feats = dar_forward(model, patch)
        _, logits_prd = backbone_forward(SPEC, model.prd, patch)
        _, logits_cf = backbone_forward(SPEC, model.cf, patch)
        _, logits_lr = backbone_forward(SPEC, model.lr, patch)
        np.testing.assert_array_equal(y_prd, softmax(logits_prd[None])[0])
        np.testing.assert_array_equal(y_cf, sigmoid(logits_cf))
        np.testing.assert_array_equal(y_lr, softmax(logits_lr[None])[0])

    def test_head_activations(self):
        model = self._model(k=2)
        y_prd, y_cf, y_lr, _ = dar_forward(model, _patch(10))
        assert float(np.sum(y_prd)) == pytest.approx(1.0, abs=1e-6)
        assert float(np.sum(y_lr)) == pytest.approx(1.0, abs=1e-6)
        assert np.all((y_cf > 0) & (y_cf < 1))

    def test_augmented_stream_differs_from_plain(self):
        plain = self._model(k=SPEC.m + 1)
        fused = DarModel(spec=SPEC, k=1, prd=plain.prd, cf=plain.cf, lr=plain.lr)
        patch = _patch(11)
        y_plain, _, _, _ = dar_forward(plain, patch)
        y_fused, _, _, _ = dar_forward(fused, patch)
        assert not np.allclose(y_plain, y_fused)

    def test_forced_features_match_reference_forward(self):
        # two-block toy: the counterfactual stream is forced to a saturated
        # negative constant and the low-reliability net is a clone of the
        # prediction net, so the fused maps triple the prediction maps
        spec = default_backbone_spec(m=2, base_width=3, input_size=8, q=4)
        rng = np.random.default_rng(33)
        prd = init_backbone_params(spec, rng, dtype=np.float64)
        lr = {k: v.copy() for k, v in prd.items()}
        cf = init_backbone_params(spec, rng, dtype=np.float64)
        for i in (1, 2):
            cf[f"block{i}.w"][:] = 0.0
            cf[f"block{i}.gamma"][:] = 0.0
            cf[f"block{i}.beta"][:] = -40.0
        model = DarModel(spec=spec, k=1, prd=prd, cf=cf, lr=lr)
        x = rng.random((1, 8, 8))

        # hand-built reference forward
        f_prd1, _ = block_forward(prd, 1, x[:, None], spec.strides[0])
        f_cf1 = np.full_like(f_prd1, -40.0)
        fused1 = fuse_features(f_prd1, na_module(f_cf1, f_prd1),
                               ca_module(f_prd1, f_prd1))
        f_prd2, _ = block_forward(prd, 2, fused1, spec.strides[1])
        f_lr2, _ = block_forward(lr, 2, f_prd1, spec.strides[1])
        f_cf2 = np.full_like(f_prd2, -40.0)
        fused2 = fuse_features(f_prd2, na_module(f_cf2, f_prd2),
                               ca_module(f_lr2, f_prd2))
        ref_logits, _ = head_forward(prd, fused2)

        y_prd, _, _, feats, cache = dar_forward_batch(model, x, want_cache=True)
        np.testing.assert_array_equal(cache["logits"][0], ref_logits)
        np.testing.assert_array_equal(feats["fused"][2], fused2)

        # block 1: siblings see identical inputs, so the tripling is tight
        np.testing.assert_allclose(feats["fused"][1], 3.0 * feats["prd"][0],
                                   rtol=1e-10)
        # block 2: the low-reliability stream saw the unfused input; the
        # normalization makes the maps scale-invariant up to its epsilon
        np.testing.assert_allclose(feats["fused"][2], 3.0 * feats["prd"][1],
                                   rtol=1e-3)

    def test_block_features_match_plain_streams(self):
        model = self._model(k=2)
        patch = _patch(12)
        _, _, _, feats = dar_forward(model, patch)
        cf_feats, _ = backbone_forward(SPEC, model.cf, patch)
        for got, want in zip(feats[1], cf_feats):
            np.testing.assert_array_equal(got, want)

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            self._model(k=SPEC.m + 2)
        with pytest.raises(ConfigError):
            self._model(k=0)

    def test_missing_siblings_with_transfer(self):
        with pytest.raises(ConfigError):
            DarModel(spec=SPEC, k=1, prd=_params(), cf=None, lr=None)


class TestMvForward:
    def _mv(self, seed=0, k=None):
        k = SPEC.m + 1 if k is None else k
        views = {}
        for i, view in enumerate(("axial", "sagittal", "coronal")):
            views[view] = DarModel(
                spec=SPEC, k=k, prd=_params(seed + i),
                cf=_params(seed + 10 + i) if k <= SPEC.m else None,
                lr=_params(seed + 20 + i) if k <= SPEC.m else None)
        w, b = averaging_fusion(5)
        return MvModel(views=views, fusion_w=w, fusion_b=b)

    def test_averaging_identity(self):
        # identical per-view parameters make the three probability vectors
        # equal, and the averaging fusion returns that shared vector
        views = {v: DarModel(spec=SPEC, k=SPEC.m + 1, prd=_params(5), cf=None,
                             lr=None) for v in ("axial", "sagittal", "coronal")}
        w, b = averaging_fusion(5)
        mv = MvModel(views=views, fusion_w=w, fusion_b=b)
        patch = _patch(3)
        triplet = np.stack([patch, patch, patch])
        logits = mv_forward(mv, triplet)
        _, head = backbone_forward(SPEC, views["axial"].prd, patch)
        np.testing.assert_allclose(logits, softmax(head[None])[0], atol=1e-12)

    def test_zero_weights_return_bias(self):
        mv = self._mv(1)
        mv.fusion_w = np.zeros((5, 15))
        mv.fusion_b = np.arange(5.0)
        logits = mv_forward(mv, np.stack([_patch(1)] * 3))
        np.testing.assert_array_equal(logits, np.arange(5.0))

    def test_shapes(self):
        mv = self._mv(2)
        assert mv.fusion_w.shape == (5, 15)
        logits, probs = mv_forward_batch(mv, np.stack([np.stack([_patch(i)] * 3)
                                                       for i in range(4)]))
        assert logits.shape == (4, 5)
        assert probs.shape == (4, 3, 5)

    def test_fusion_shape_validation(self):
        views = {v: DarModel(spec=SPEC, k=SPEC.m + 1, prd=_params(), cf=None,
                             lr=None) for v in ("axial", "sagittal", "coronal")}
        with pytest.raises(ConfigError):
            MvModel(views=views, fusion_w=np.zeros((5, 10)), fusion_b=np.zeros(5))


class TestCheckpoints:
    def test_backbone_round_trip(self, tmp_path):
        params = _params(7)
        path = tmp_path / "b.ckpt"
        save_backbone(path, SPEC, params, role="prd", view="axial")
        spec, loaded, meta = load_backbone(path)
        assert spec == SPEC
        assert meta["role"] == "prd"
        for name in params:
            np.testing.assert_array_equal(loaded[name], params[name])

    def test_dar_round_trip(self, tmp_path):
        model = DarModel(spec=SPEC, k=2, prd=_params(1), cf=_params(2), lr=_params(3))
        path = tmp_path / "d.ckpt"
        save_dar_model(path, model, view="coronal")
        loaded = load_dar_model(path)
        assert loaded.k == 2
        for role in ("prd", "cf", "lr"):
            for name, arr in getattr(model, role).items():
                np.testing.assert_array_equal(getattr(loaded, role)[name], arr)

    def test_mv_round_trip_preserves_forward(self, tmp_path):
        views = {v: DarModel(spec=SPEC, k=2, prd=_params(i), cf=_params(i + 3),
                             lr=_params(i + 6))
                 for i, v in enumerate(("axial", "sagittal", "coronal"))}
        w, b = averaging_fusion(5)
        mv = MvModel(views=views, fusion_w=w, fusion_b=b)
        path = tmp_path / "mv.ckpt"
        save_mv_model(path, mv)
        loaded = load_mv_model(path)
        x = np.stack([_patch(i) for i in range(3)])
        np.testing.assert_array_equal(mv_forward(mv, x), mv_forward(loaded, x))

    def test_shape_validation_on_load(self, tmp_path):
        params = _params()
        params["head.w"] = params["head.w"][:, :2].copy()
        path = tmp_path / "bad.ckpt"
        save_backbone(path, SPEC, params)
        with pytest.raises(DataError, match="head.w"):
            load_backbone(path)

    def test_truncated_checkpoint(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_backbone(path, SPEC, _params())
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)


class TestFeatureDumps:
    def _model(self):
        return DarModel(spec=SPEC, k=2, prd=_params(1), cf=_params(2), lr=_params(3))

    def test_constant_fields_render_mid_gray(self, tmp_path):
        field = np.full((4, 4), 2.5)
        np.testing.assert_array_equal(normalize_field(field), np.full((4, 4), 0.5))

    def test_fused_field_is_sum_of_component_fields(self):
        model = self._model()
        fields = feature_map_fields(model, _patch(4), block=2)
        np.testing.assert_allclose(
            fields["fused"], fields["prd"] + fields["na"] + fields["ca"],
            atol=1e-5)

    def test_block_out_of_range(self):
        model = self._model()
        with pytest.raises(ConfigError):
            feature_map_fields(model, _patch(4), block=1)
        with pytest.raises(ConfigError):
            feature_map_fields(model, _patch(4), block=SPEC.m + 1)

    def test_writes_grayscale_images(self, tmp_path):
        model = self._model()
        paths = dump_feature_maps(model, _patch(4), 2, tmp_path)
        assert len(paths) == 4
        for path in paths:
            assert path.exists()
            img = Image.open(path)
            assert img.mode == "L"
            assert img.size == SPEC.feature_shapes()[1][1:]
