"""
Tests for the triplane container, bilinear queries, normalization and the
triplane / decoder files.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).parent.parent))

from autodiff import ops
from autodiff.gradcheck import check_gradients
from autodiff.rng import make_rng
from autodiff.tensor import Tensor, no_grad
from core.errors import MissingArtifactError, NonFiniteError
from triplane.decoder import SharedDecoder, decode
from triplane.representation import (
    NormStats,
    Triplane,
    compute_norm_stats,
    denormalize,
    encoding_width,
    normalize,
    positional_encoding,
    query_features,
    stack_planes,
)
from triplane.storage import (
    load_decoder,
    load_norm_stats,
    load_triplane,
    load_triplane_dir,
    save_decoder,
    save_norm_stats,
    save_triplane,
)


def _triplane(seed=0, channels=2, size=5, object_id="obj_000", label=1):
    planes = make_rng(seed, "triplane-test").standard_normal((3, channels, size, size))
    return Triplane(planes, object_id, label)


class TestQueries(unittest.TestCase):

    def test_shape_is_three_times_channels(self):
        tri = _triplane(channels=4)
        points = make_rng(1, "pts").uniform(-1, 1, size=(9, 3))
        self.assertEqual(query_features(tri, points).shape, (9, 12))

    def test_texel_centers_return_texel_values(self):
        tri = _triplane(size=5)
        # x=0, y=-1, z=1 -> texel indices 2, 0, 4
        out = query_features(tri, np.array([[0.0, -1.0, 1.0]])).data[0]
        c = tri.channels
        np.testing.assert_allclose(out[:c], tri.planes[0, :, 2, 0], atol=1e-6)
        np.testing.assert_allclose(out[c:2 * c], tri.planes[1, :, 0, 4], atol=1e-6)
        np.testing.assert_allclose(out[2 * c:], tri.planes[2, :, 2, 4], atol=1e-6)

    def test_random_points_match_scalar_bilinear(self):
        tri = _triplane(seed=4, channels=3, size=6)
        points = make_rng(5, "pts").uniform(-1, 1, size=(20, 3))
        out = query_features(tri, points).data
        size = tri.planes.shape[-1]

        def lookup(plane, a, b):
            u, v = (a + 1.0) * 0.5 * (size - 1), (b + 1.0) * 0.5 * (size - 1)
            i, j = min(int(u), size - 2), min(int(v), size - 2)
            fu, fv = u - i, v - j
            return ((1 - fu) * (1 - fv) * plane[:, i, j] + fu * (1 - fv) * plane[:, i + 1, j]
                    + (1 - fu) * fv * plane[:, i, j + 1] + fu * fv * plane[:, i + 1, j + 1])

        for n, (x, y, z) in enumerate(points):
            expected = np.concatenate([lookup(tri.planes[0], x, y), lookup(tri.planes[1], y, z),
                                       lookup(tri.planes[2], x, z)])
            np.testing.assert_allclose(out[n], expected, atol=1e-5)

    def test_points_outside_cube_are_clamped(self):
        tri = _triplane()
        inside = query_features(tri, np.array([[1.0, 1.0, 1.0]])).data
        outside = query_features(tri, np.array([[3.0, 2.0, 1.5]])).data
        np.testing.assert_array_equal(inside, outside)

    def test_gradient_to_plane_texels(self):
        planes = make_rng(2, "grad").standard_normal((3, 2, 4, 4))
        points = make_rng(3, "grad").uniform(-0.95, 0.95, size=(6, 3))

        def fn(t):
            feats = query_features(t[0], points)
            return ops.sum(ops.square(feats))

        self.assertLess(check_gradients(fn, [planes]), 1e-4)

    def test_rejects_wrong_plane_count(self):
        with self.assertRaises(ValueError):
            Triplane(np.zeros((2, 1, 4, 4)))


class TestPositionalEncoding(unittest.TestCase):

    def test_width_and_bounds(self):
        points = make_rng(4, "pe").uniform(-1, 1, size=(10, 3))
        enc = positional_encoding(points, 4)
        self.assertEqual(enc.shape, (10, encoding_width(4)))
        np.testing.assert_array_equal(enc[:, :3], points)
        self.assertTrue(np.all(np.abs(enc[:, 3:]) <= 1.0))

    def test_zero_frequencies_is_identity(self):
        points = np.array([[0.1, 0.2, 0.3]])
        np.testing.assert_array_equal(positional_encoding(points, 0), points)

    def test_negative_frequencies_rejected(self):
        with self.assertRaises(ValueError):
            positional_encoding(np.zeros((1, 3)), -1)


class TestNormalization(unittest.TestCase):

    def setUp(self):
        self.population = [_triplane(seed=i, channels=3) for i in range(6)]

    def test_normalized_population_is_standardized(self):
        stats = compute_norm_stats(self.population, clamp=None)
        z = stack_planes([normalize(t, stats) for t in self.population]).astype(np.float64)
        np.testing.assert_allclose(z.mean(axis=(0, 1, 3, 4)), 0.0, atol=1e-5)
        np.testing.assert_allclose(z.std(axis=(0, 1, 3, 4)), 1.0, atol=1e-4)

    def test_denormalize_inverts_normalize_without_clamp(self):
        stats = compute_norm_stats(self.population, clamp=None)
        tri = self.population[0]
        back = denormalize(normalize(tri, stats), stats)
        np.testing.assert_allclose(back.planes, tri.planes, atol=1e-5)
        self.assertEqual(back.object_id, tri.object_id)
        self.assertEqual(back.class_label, tri.class_label)

    def test_clamp_bounds_normalized_values(self):
        stats = compute_norm_stats(self.population, clamp=0.5)
        z = normalize(self.population[0], stats).planes
        self.assertLessEqual(float(np.abs(z).max()), 0.5)

    def test_constant_channel_uses_std_floor(self):
        flat = [Triplane(np.ones((3, 1, 2, 2))) for _ in range(2)]
        stats = compute_norm_stats(flat)
        self.assertGreater(float(stats.std[0]), 0.0)
        self.assertTrue(np.all(np.isfinite(normalize(flat[0], stats).planes)))

    def test_empty_population_rejected(self):
        with self.assertRaisesRegex(ValueError, "empty population"):
            compute_norm_stats([])

    def test_identity_stats_pass_through(self):
        tri = self.population[1]
        stats = NormStats.identity(tri.channels)
        np.testing.assert_array_equal(normalize(tri, stats).planes, tri.planes)


class TestStorage(unittest.TestCase):

    def test_triplane_file_and_sidecar(self):
        tri = _triplane(object_id="obj_007", label=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_triplane(tmp, tri, normalized=True, stats_ref="norm_stats.dtf")
            loaded, meta = load_triplane(path)
        np.testing.assert_array_equal(loaded.planes, tri.planes)
        self.assertEqual(loaded.object_id, "obj_007")
        self.assertEqual(loaded.class_label, 3)
        self.assertTrue(meta["normalized"])
        self.assertEqual(meta["norm_stats"], "norm_stats.dtf")

    def test_empty_directory_is_missing_artifact(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingArtifactError):
                load_triplane_dir(tmp)

    def test_norm_stats_round_trip(self):
        stats = NormStats(np.array([0.5, -1.0]), np.array([2.0, 0.25]), clamp=3.0)
        with tempfile.TemporaryDirectory() as tmp:
            save_norm_stats(tmp, stats)
            loaded = load_norm_stats(tmp)
        np.testing.assert_allclose(loaded.mean, stats.mean)
        np.testing.assert_allclose(loaded.std, stats.std)
        self.assertEqual(loaded.clamp, 3.0)

    def test_decoder_round_trip_gives_same_outputs(self):
        decoder = SharedDecoder(2, make_rng(5, "dec"), pe_frequencies=2, hidden=8, depth=2)
        tri = _triplane()
        points = make_rng(6, "dec").uniform(-1, 1, size=(4, 3))
        dirs = points / np.linalg.norm(points, axis=1, keepdims=True)
        with tempfile.TemporaryDirectory() as tmp:
            save_decoder(tmp, decoder)
            clone = load_decoder(tmp)
        with no_grad():
            rgb_a, sigma_a = decode(decoder, tri, points, dirs)
            rgb_b, sigma_b = decode(clone, tri, points, dirs)
        np.testing.assert_array_equal(rgb_a.data, rgb_b.data)
        np.testing.assert_array_equal(sigma_a.data, sigma_b.data)


class TestDecoder(unittest.TestCase):

    def setUp(self):
        self.decoder = SharedDecoder(2, make_rng(8, "dec"), pe_frequencies=2, hidden=8, depth=2)
        self.points = make_rng(9, "dec").uniform(-1, 1, size=(5, 3))
        self.dirs = np.tile([0.0, 0.0, -1.0], (5, 1))

    def test_output_ranges(self):
        rgb, sigma = decode(self.decoder, _triplane(), self.points, self.dirs)
        self.assertEqual(rgb.shape, (5, 3))
        self.assertEqual(sigma.shape, (5,))
        self.assertTrue(np.all((rgb.data >= 0) & (rgb.data <= 1)))
        self.assertTrue(np.all(sigma.data >= 0))

    def test_density_ignores_view_direction(self):
        _, sigma_a = decode(self.decoder, _triplane(), self.points, self.dirs)
        _, sigma_b = decode(self.decoder, _triplane(), self.points, -self.dirs)
        np.testing.assert_array_equal(sigma_a.data, sigma_b.data)

    def test_non_finite_features_raise(self):
        features = Tensor(np.full((5, 6), np.nan))
        with self.assertRaises(NonFiniteError):
            self.decoder(features, self.points, self.dirs)

    def test_mismatched_points_and_dirs(self):
        with self.assertRaises(ValueError):
            decode(self.decoder, _triplane(), self.points, self.dirs[:2])


if __name__ == "__main__":
    unittest.main()
