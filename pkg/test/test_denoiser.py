"""
Tests for the triplane denoiser: attention blocks, cross-plane attention,
conditioning, output shapes and the closed-form parameter count.
"""

import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).parent.parent))

from autodiff.gradcheck import check_gradients
from autodiff.rng import make_rng
from autodiff.tensor import Tensor, default_dtype, no_grad
from config.settings import DenoiserConfig
from core.errors import NonFiniteError, ShapeError
from diffusion.attention import CrossPlaneAttention, MultiHeadAttention, plane_features, plane_tokens
from diffusion.denoiser import create_denoiser, expected_parameter_count
from diffusion.embedding import ConditionEmbedding, timestep_embedding
from diffusion.engine import diffusion_loss

VALID_CONFIGS = [
    DenoiserConfig(channels=4, resolution=16, hidden_channels=(8, 16), encoder_patch_sizes=(2, 1),
                   cross_plane_resolutions=(8, 4), attention_heads=2, patch_size=2, depth=1,
                   heads=2, width=32, mlp_ratio=2, timestep_dim=32),
    DenoiserConfig(channels=4, resolution=16, hidden_channels=(8, 16), encoder_patch_sizes=(2, 1),
                   cross_plane_resolutions=(8, 4), attention_heads=2, patch_size=2, depth=1,
                   heads=2, width=32, mlp_ratio=2, timestep_dim=32, transformer="ori"),
    DenoiserConfig(channels=2, resolution=8, hidden_channels=(4,), encoder_patch_sizes=(1,),
                   cross_plane_resolutions=(4,), attention_heads=2, patch_size=2, depth=2,
                   heads=4, width=16, mlp_ratio=2, timestep_dim=8),
    DenoiserConfig(channels=3, resolution=12, hidden_channels=(6, 6), encoder_patch_sizes=(3, 1),
                   cross_plane_resolutions=(6, 3), attention_heads=2, patch_size=3, depth=1,
                   heads=3, width=24, mlp_ratio=1, timestep_dim=16, num_classes=2),
    DenoiserConfig(channels=2, resolution=16, hidden_channels=(4, 8), encoder_patch_sizes=(1, 1),
                   cross_plane_resolutions=(), attention_heads=2, patch_size=1, depth=1,
                   heads=2, width=8, mlp_ratio=2, timestep_dim=16, num_classes=2),
]
SMALL = VALID_CONFIGS[2]


def _randomize(net, pattern: str, seed: int, std: float = 0.1) -> None:
    """Give zero-initialized weights random values so every branch contributes."""
    rng = make_rng(seed, "randomize", pattern)
    for name, p in net.named_parameters():
        if pattern in name:
            p.data = rng.normal(0.0, std, size=p.shape).astype(p.dtype)


class TestAttention(unittest.TestCase):

    def setUp(self):
        self.rng = make_rng(0, "attention")

    def test_rows_of_attention_sum_to_one(self):
        attention = MultiHeadAttention(8, 2, self.rng)
        out = attention(Tensor(self.rng.standard_normal((2, 5, 8))),
                        Tensor(self.rng.standard_normal((2, 7, 8))))
        self.assertEqual(out.shape, (2, 5, 8))
        self.assertEqual(attention.last_weights.shape, (2, 2, 5, 7))
        np.testing.assert_allclose(attention.last_weights.sum(axis=-1), 1.0, atol=1e-5)

    def test_heads_must_divide_width(self):
        with self.assertRaises(ShapeError):
            MultiHeadAttention(10, 3, self.rng)

    def test_token_grid_round_trip(self):
        features = Tensor(self.rng.standard_normal((6, 3, 4, 4)))
        grid = plane_tokens(features, 2, 2)
        self.assertEqual(grid.tokens.shape, (2, 12, 12))
        np.testing.assert_array_equal(plane_features(grid).data, features.data)


class TestCrossPlaneAttention(unittest.TestCase):

    def setUp(self):
        self.rng = make_rng(1, "cross-plane")
        self.block = CrossPlaneAttention(4, 4, 2, 2, 6, self.rng)
        self.features = self.rng.standard_normal((6, 4, 4, 4))
        self.cond = Tensor(self.rng.standard_normal((2, 6)))

    def test_identity_at_init(self):
        out = self.block(Tensor(self.features), self.cond, 2)
        np.testing.assert_array_equal(out.data, self.features.astype(np.float32))

    def test_plane_permutation_equivariance(self):
        _randomize(self.block, "modulation", 2, std=0.5)
        out = self.block(Tensor(self.features), self.cond, 2).data
        self.assertGreater(float(np.abs(out - self.features).max()), 1e-4)
        perm = np.array([2, 0, 1])
        order = np.concatenate([perm + 3 * b for b in range(2)])
        permuted = self.block(Tensor(self.features[order]), self.cond, 2).data
        self.assertLess(float(np.abs(permuted - out[order]).max()), 1e-5)

    def test_patch_must_divide_resolution(self):
        with self.assertRaises(ShapeError):
            CrossPlaneAttention(4, 6, 4, 2, 6, self.rng)


class TestConditioning(unittest.TestCase):

    def test_timestep_embedding_layout(self):
        emb = timestep_embedding(np.array([0, 10]), 8)
        self.assertEqual(emb.shape, (2, 8))
        np.testing.assert_array_equal(emb[0, :4], 1.0)
        np.testing.assert_array_equal(emb[0, 4:], 0.0)

    def test_null_class_is_last_row(self):
        embed = ConditionEmbedding(8, 16, 4, make_rng(3, "cond"))
        self.assertEqual(embed.null_class, 4)
        np.testing.assert_array_equal(embed.resolve_labels(None, 3), [4, 4, 4])

    def test_out_of_range_label(self):
        embed = ConditionEmbedding(8, 16, 4, make_rng(3, "cond"))
        with self.assertRaises(ValueError):
            embed.resolve_labels(np.array([5]), 1)

    def test_label_count_must_match_batch(self):
        embed = ConditionEmbedding(8, 16, 4, make_rng(3, "cond"))
        with self.assertRaises(ShapeError):
            embed.resolve_labels(np.array([0, 1]), 3)


class TestDenoiser(unittest.TestCase):

    def test_parameter_count_matches_closed_form(self):
        for cfg in VALID_CONFIGS:
            net = create_denoiser(cfg, seed=0)
            self.assertEqual(net.parameter_count(), expected_parameter_count(cfg), cfg)

    def test_output_shape_equals_input_shape(self):
        for i, cfg in enumerate(VALID_CONFIGS):
            net = create_denoiser(cfg, seed=i)
            _randomize(net, "output_conv", i)
            x = make_rng(i, "shape").standard_normal((2,) + net.input_shape)
            with no_grad():
                out = net.denoise(Tensor(x), np.array([1, 500]), np.array([0, 1]))
            self.assertEqual(out.shape, x.shape)
            self.assertTrue(np.all(np.isfinite(out.data)))

    def test_untrained_net_predicts_zero_noise(self):
        net = create_denoiser(SMALL, seed=4)
        x = make_rng(4, "zero").standard_normal((3,) + net.input_shape)
        with no_grad():
            out = net.denoise(Tensor(x), np.array([1, 2, 3]))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_class_changes_prediction(self):
        net = create_denoiser(SMALL, seed=5)
        _randomize(net, "modulation", 5)
        _randomize(net, "output_conv", 5)
        x = make_rng(5, "class").standard_normal((1,) + net.input_shape)
        with no_grad():
            a = net.denoise(Tensor(x), np.array([10]), np.array([0])).data
            b = net.denoise(Tensor(x), np.array([10]), np.array([1])).data
        self.assertFalse(np.array_equal(a, b))

    def test_plain_transformer_is_smaller(self):
        base = expected_parameter_count(VALID_CONFIGS[0])
        ori = expected_parameter_count(VALID_CONFIGS[1])
        self.assertLess(ori, base)

    def test_wrong_input_shape(self):
        net = create_denoiser(SMALL, seed=6)
        with self.assertRaises(ShapeError):
            net.denoise(Tensor(np.zeros((1, 3, 2, 4, 4))), np.array([1]))

    def test_negative_timestep(self):
        net = create_denoiser(SMALL, seed=6)
        with self.assertRaises(ValueError):
            net.denoise(Tensor(np.zeros((1,) + net.input_shape)), np.array([-1]))

    def test_non_finite_activation_names_layer(self):
        net = create_denoiser(SMALL, seed=7)
        x = np.zeros((1,) + net.input_shape)
        x[0, 0, 0, 0, 0] = np.inf
        with self.assertRaises(NonFiniteError) as ctx:
            net.denoise(Tensor(x), np.array([1]))
        self.assertIn("encoder.0", str(ctx.exception))

    def test_loss_gradient_matches_finite_differences(self):
        with default_dtype(np.float64):
            net = create_denoiser(SMALL, seed=8)
            _randomize(net, "modulation", 8)
            _randomize(net, "output_conv", 8)
        rng = make_rng(8, "gradcheck")
        x_t = rng.standard_normal((2,) + net.input_shape)
        eps = rng.standard_normal(x_t.shape)
        t = np.array([3, 700])
        labels = np.array([1, 2])

        for owner, attr in ((net.encoder[0].conv, "weight"),
                            (net.transformer.blocks[0].modulation, "weight"),
                            (net.output_conv, "weight")):
            def fn(leaves, owner=owner, attr=attr):
                setattr(owner, attr, leaves[0])
                return diffusion_loss(net, x_t, t, eps, labels)

            error = check_gradients(fn, [getattr(owner, attr).data.copy()], max_elements=12, seed=8)
            self.assertLess(error, 1e-3, f"{type(owner).__name__}.{attr}")


if __name__ == "__main__":
    unittest.main()
