"""Model assembly tests: spec validation, initialization statistics,
inception block behaviour, full forward/backward, and checkpoint io."""

import numpy as np
import pytest

from faciesnet import network, ops
from faciesnet.errors import ConfigError, DataFormatError, ShapeError
from faciesnet.network import (InceptionSpec, ModelSpec, inception_forward,
                               init_params, load_checkpoint, model_backward,
                               model_forward, param_shapes, pooled_length,
                               save_checkpoint)
from faciesnet.welldata import CHANNELS, Standardizer


def tiny_spec(**overrides):
    base = dict(window=9, stem_kernel=3, stem_channels=4,
                stages=(InceptionSpec(2, 2, 3, 2, 2, 7, 2, 2),),
                fc_sizes=(8,), dropout=0.0)
    base.update(overrides)
    return ModelSpec(**base)


def toy_standardizer():
    return Standardizer({c: float(i) for i, c in enumerate(CHANNELS)},
                        {c: float(i + 1) for i, c in enumerate(CHANNELS)})


class TestSpecs:
    def test_default_inception_channels(self):
        assert InceptionSpec().out_channels == 8 + 16 + 16 + 8

    def test_default_model_geometry(self):
        spec = ModelSpec()
        assert spec.window == 31
        assert spec.stage_lengths() == [31, 16, 8]
        assert spec.flatten_size() == 48 * 8

    @pytest.mark.parametrize("length", range(2, 65))
    def test_pooled_length_matches_pool_op(self, length):
        out, _ = ops.pool1d(np.zeros((1, length)), 2, 2)
        assert pooled_length(length) == out.shape[-1]

    def test_even_inception_kernel_rejected(self):
        with pytest.raises(ConfigError):
            InceptionSpec(small_kernel=4)

    def test_kernel_ordering_enforced(self):
        with pytest.raises(ConfigError):
            InceptionSpec(small_kernel=7, large_kernel=3)

    def test_zero_channel_branch_rejected(self):
        with pytest.raises(ConfigError):
            InceptionSpec(pool_proj=0)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            ModelSpec(window=30)

    def test_dropout_range_enforced(self):
        with pytest.raises(ConfigError):
            ModelSpec(dropout=1.0)

    def test_no_stages_rejected(self):
        with pytest.raises(ConfigError):
            ModelSpec(stages=())

    def test_short_window_still_pools_to_length_one(self):
        # same-padded convs tolerate kernels wider than the series, and
        # ceil-mode pooling keeps every intermediate length >= 1
        spec = ModelSpec(window=3)
        assert spec.stage_lengths() == [3, 2, 1]
        assert spec.flatten_size() == 48


class TestInitParams:
    def test_shapes_match_declaration(self):
        spec = ModelSpec()
        params = init_params(spec, seed=0)
        shapes = param_shapes(spec)
        assert list(params) == list(shapes)
        for name, shape in shapes.items():
            assert params[name].shape == shape
            assert params[name].dtype == np.float32

    def test_bit_reproducible(self):
        a = init_params(ModelSpec(), seed=7)
        b = init_params(ModelSpec(), seed=7)
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_seeds_differ(self):
        a = init_params(ModelSpec(), seed=0)
        b = init_params(ModelSpec(), seed=1)
        assert not np.array_equal(a["stem.kernels"], b["stem.kernels"])

    def test_biases_start_at_zero(self):
        params = init_params(ModelSpec(), seed=0)
        for name, value in params.items():
            if name.endswith(".bias"):
                assert not value.any()

    def test_he_scale_on_large_tensor(self):
        w = init_params(ModelSpec(), seed=3)["fc0.weights"]
        assert w.size == 64 * 384
        expected = np.sqrt(2.0 / 384)
        assert abs(w.std() / expected - 1) < 0.03
        assert abs(w.mean()) < 0.05 * expected

    def test_layers_draw_from_distinct_streams(self):
        params = init_params(tiny_spec(), seed=0)
        assert not np.array_equal(params["s0.b1.kernels"], params["s0.b2r.kernels"])


class TestInceptionForward:
    def test_output_shape(self):
        ispec = InceptionSpec(3, 2, 3, 5, 2, 5, 4, 6)
        spec = tiny_spec(stages=(ispec,), window=17)
        params = init_params(spec, seed=0)
        x = np.random.default_rng(0).standard_normal((2, 4, 17)).astype(np.float32)
        out, _ = inception_forward(ispec, params, x)
        assert out.shape == (2, 3 + 5 + 4 + 6, 17)

    @pytest.mark.parametrize("length", [8, 16, 33, 64])
    def test_length_preserved(self, length):
        ispec = InceptionSpec()
        shapes = {"s0.b1.kernels": (8, 3, 1), "s0.b2r.kernels": (8, 3, 1),
                  "s0.b2.kernels": (16, 8, 3), "s0.b3r.kernels": (8, 3, 1),
                  "s0.b3.kernels": (16, 8, 7), "s0.b4.kernels": (8, 3, 1)}
        rng = np.random.default_rng(1)
        params = {}
        for name, shape in shapes.items():
            params[name] = rng.standard_normal(shape)
            params[name.replace(".kernels", ".bias")] = np.zeros(shape[0])
        x = rng.standard_normal((2, 3, length))
        out, _ = inception_forward(ispec, params, x)
        assert out.shape == (2, ispec.out_channels, length)

    def test_zero_input_zero_bias_gives_zero_output(self):
        spec = tiny_spec()
        params = init_params(spec, seed=2)
        x = np.zeros((1, 4, 9), dtype=np.float32)
        out, _ = inception_forward(spec.stages[0], params, x)
        assert not out.any()

    def test_hand_built_single_channel_block(self):
        # all four branches reduced to scalar kernels so each output row
        # can be derived by hand from x = [-1, 2, -3, 4, -5]
        ispec = InceptionSpec(1, 1, 3, 1, 1, 7, 1, 1)
        k3 = np.zeros((1, 1, 3)); k3[0, 0, 1] = 1.0
        k7 = np.zeros((1, 1, 7)); k7[0, 0, 3] = 1.0
        params = {
            "s0.b1.kernels": np.full((1, 1, 1), 2.0), "s0.b1.bias": np.zeros(1),
            "s0.b2r.kernels": np.ones((1, 1, 1)), "s0.b2r.bias": np.zeros(1),
            "s0.b2.kernels": k3, "s0.b2.bias": np.zeros(1),
            "s0.b3r.kernels": np.ones((1, 1, 1)), "s0.b3r.bias": np.zeros(1),
            "s0.b3.kernels": k7, "s0.b3.bias": np.zeros(1),
            "s0.b4.kernels": np.ones((1, 1, 1)), "s0.b4.bias": np.zeros(1),
        }
        x = np.array([[[-1.0, 2.0, -3.0, 4.0, -5.0]]])
        out, _ = inception_forward(ispec, params, x)
        expected = np.array([[
            [0.0, 4.0, 0.0, 8.0, 0.0],    # 2x through relu
            [0.0, 2.0, 0.0, 4.0, 0.0],    # relu then centred 3-tap identity
            [0.0, 2.0, 0.0, 4.0, 0.0],    # relu then centred 7-tap identity
            [2.0, 2.0, 4.0, 4.0, 4.0],    # 3-wide max pool with edge padding
        ]])
        np.testing.assert_allclose(out, expected)


class TestModelForward:
    def test_logit_shape_default_model(self):
        spec = ModelSpec()
        params = init_params(spec, seed=0)
        x = np.random.default_rng(0).standard_normal((3, 7, 31)).astype(np.float32)
        logits, _ = model_forward(spec, params, x)
        assert logits.shape == (3, 9)
        assert logits.dtype == np.float32

    def test_wrong_width_rejected(self):
        spec = tiny_spec()
        params = init_params(spec, seed=0)
        with pytest.raises(ShapeError):
            model_forward(spec, params, np.zeros((1, 7, 11)))

    def test_wrong_channel_count_rejected(self):
        spec = tiny_spec()
        params = init_params(spec, seed=0)
        with pytest.raises(ShapeError):
            model_forward(spec, params, np.zeros((1, 6, 9)))

    def test_rank_two_input_rejected(self):
        spec = tiny_spec()
        params = init_params(spec, seed=0)
        with pytest.raises(ShapeError):
            model_forward(spec, params, np.zeros((7, 9)))

    def test_training_dropout_requires_rng(self):
        spec = tiny_spec(dropout=0.5)
        params = init_params(spec, seed=0)
        with pytest.raises(ConfigError):
            model_forward(spec, params, np.zeros((1, 7, 9)), training=True)

    def test_inference_is_deterministic(self):
        spec = tiny_spec(dropout=0.5)
        params = init_params(spec, seed=4)
        x = np.random.default_rng(4).standard_normal((2, 7, 9))
        a, _ = model_forward(spec, params, x)
        b, _ = model_forward(spec, params, x)
        assert np.array_equal(a, b)

    def test_dropout_changes_training_logits(self):
        spec = tiny_spec(dropout=0.5)
        params = init_params(spec, seed=4)
        x = np.random.default_rng(4).standard_normal((4, 7, 9))
        a, _ = model_forward(spec, params, x, training=True,
                             rng=np.random.default_rng(0))
        b, _ = model_forward(spec, params, x, training=True,
                             rng=np.random.default_rng(1))
        assert not np.array_equal(a, b)

    def test_batch_rows_independent(self):
        spec = tiny_spec()
        params = init_params(spec, seed=5)
        x = np.random.default_rng(5).standard_normal((4, 7, 9))
        whole, _ = model_forward(spec, params, x)
        for i in range(4):
            row, _ = model_forward(spec, params, x[i:i + 1])
            np.testing.assert_allclose(row[0], whole[i], rtol=1e-5, atol=1e-6)


class TestModelBackward:
    def test_grad_keys_and_shapes_match_params(self):
        spec = tiny_spec()
        params = init_params(spec, seed=0, dtype=np.float64)
        x = np.random.default_rng(0).standard_normal((2, 7, 9))
        logits, caches = model_forward(spec, params, x)
        grads = model_backward(spec, params, caches, np.ones_like(logits))
        assert set(grads) == set(params)
        for name in params:
            assert grads[name].shape == params[name].shape

    def test_zero_upstream_gives_zero_grads(self):
        spec = tiny_spec()
        params = init_params(spec, seed=1, dtype=np.float64)
        x = np.random.default_rng(1).standard_normal((2, 7, 9))
        logits, caches = model_forward(spec, params, x)
        grads = model_backward(spec, params, caches, np.zeros_like(logits))
        for g in grads.values():
            assert not g.any()

    def test_backward_linear_in_upstream(self):
        spec = tiny_spec()
        params = init_params(spec, seed=2, dtype=np.float64)
        x = np.random.default_rng(2).standard_normal((2, 7, 9))
        logits, caches = model_forward(spec, params, x)
        g = np.random.default_rng(3).standard_normal(logits.shape)
        once = model_backward(spec, params, caches, g)
        twice = model_backward(spec, params, caches, 2.0 * g)
        for name in once:
            np.testing.assert_allclose(twice[name], 2.0 * once[name],
                                       rtol=1e-12, atol=1e-12)

    def test_full_model_gradient_check(self):
        err, worst = network.gradient_check(seed=0)
        assert err < 1e-4, f"worst relative error {err:.3e} at {worst}"


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        spec = tiny_spec(dropout=0.25)
        params = init_params(spec, seed=11)
        path = tmp_path / "model.fnet"
        save_checkpoint(spec, params, toy_standardizer(), path, seed=11)
        spec2, params2, std2 = load_checkpoint(path)
        assert spec2 == spec
        assert list(params2) == list(params)
        for name in params:
            assert np.array_equal(params2[name], params[name])
            assert params2[name].dtype == np.float32
        assert std2.mean == toy_standardizer().mean
        assert std2.std == toy_standardizer().std

    def test_save_is_byte_deterministic(self, tmp_path):
        spec = tiny_spec()
        params = init_params(spec, seed=3)
        a, b = tmp_path / "a.fnet", tmp_path / "b.fnet"
        save_checkpoint(spec, params, toy_standardizer(), a, seed=3)
        save_checkpoint(spec, params, toy_standardizer(), b, seed=3)
        assert a.read_bytes() == b.read_bytes()

    def test_reload_reproduces_predictions(self, tmp_path):
        spec = tiny_spec()
        params = init_params(spec, seed=6)
        path = tmp_path / "model.fnet"
        save_checkpoint(spec, params, toy_standardizer(), path)
        spec2, params2, _ = load_checkpoint(path)
        x = np.random.default_rng(6).standard_normal((3, 7, 9)).astype(np.float32)
        before, _ = model_forward(spec, params, x)
        after, _ = model_forward(spec2, params2, x)
        assert np.array_equal(before, after)

    def test_corrupt_magic_rejected(self, tmp_path):
        spec = tiny_spec()
        params = init_params(spec, seed=0)
        path = tmp_path / "model.fnet"
        save_checkpoint(spec, params, toy_standardizer(), path)
        raw = path.read_bytes()
        path.write_bytes(b"#whoops" + raw[7:])
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_truncated_blob_rejected(self, tmp_path):
        spec = tiny_spec()
        params = init_params(spec, seed=0)
        path = tmp_path / "model.fnet"
        save_checkpoint(spec, params, toy_standardizer(), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_seed_recorded(self, tmp_path):
        spec = tiny_spec()
        params = init_params(spec, seed=0)
        path = tmp_path / "model.fnet"
        save_checkpoint(spec, params, toy_standardizer(), path, seed=42)
        assert network.checkpoint_seed(path) == 42

    def test_mismatched_param_shape_rejected(self, tmp_path):
        spec = tiny_spec()
        params = init_params(spec, seed=0)
        params["out.bias"] = np.zeros(5, dtype=np.float32)
        with pytest.raises(ShapeError):
            save_checkpoint(spec, params, toy_standardizer(), tmp_path / "m.fnet")
