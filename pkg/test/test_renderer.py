"""
Tests for cameras, ray/cube intersection, sampling and transmittance compositing.
"""

import math
import sys
import unittest
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.append(str(Path(__file__).parent.parent))

from autodiff import ops
from autodiff.gradcheck import check_gradients
from autodiff.rng import make_rng
from autodiff.tensor import Tensor
from triplane.decoder import SharedDecoder
from triplane.renderer import (
    Camera,
    composite,
    compositing_weights,
    generate_rays,
    intersect_cube,
    render_image,
    render_rays,
    sample_along_ray,
)
from triplane.representation import Triplane


def _random_ray_samples(seed, rays=3, samples=6):
    rng = make_rng(seed, "composite")
    sigmas = rng.uniform(0.0, 4.0, size=(rays, samples))
    colors = rng.uniform(0.0, 1.0, size=(rays, samples, 3))
    deltas = rng.uniform(0.01, 0.3, size=(rays, samples))
    return sigmas, colors, deltas


class TestCompositing(unittest.TestCase):

    def test_zero_density_insertion_is_exact(self):
        sigmas, colors, deltas = _random_ray_samples(0)
        rgb, mask = composite(Tensor(sigmas), Tensor(colors), deltas)
        for position in (0, 3, 6):
            s = np.insert(sigmas, position, 0.0, axis=1)
            c = np.insert(colors, position, [0.9, 0.1, 0.5], axis=1)
            d = np.insert(deltas, position, 0.17, axis=1)
            rgb2, mask2 = composite(Tensor(s), Tensor(c), d)
            np.testing.assert_array_equal(rgb2.data, rgb.data)
            np.testing.assert_array_equal(mask2.data, mask.data)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_weights_sum_to_mask_at_most_one(self, seed):
        sigmas, colors, deltas = _random_ray_samples(seed)
        weights = compositing_weights(Tensor(sigmas), deltas).data
        _, mask = composite(Tensor(sigmas), Tensor(colors), deltas)
        self.assertTrue(np.all(weights >= 0.0))
        np.testing.assert_allclose(weights.sum(axis=1), mask.data, atol=1e-6)
        self.assertTrue(np.all(mask.data <= 1.0 + 1e-6))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), index=st.integers(0, 5), bump=st.floats(0.01, 5.0))
    def test_mask_grows_with_every_density(self, seed, index, bump):
        sigmas, colors, deltas = _random_ray_samples(seed, rays=1)
        _, before = composite(Tensor(sigmas), Tensor(colors), deltas)
        sigmas = sigmas.copy()
        sigmas[0, index] += bump
        _, after = composite(Tensor(sigmas), Tensor(colors), deltas)
        self.assertGreaterEqual(after.data[0], before.data[0] - 1e-6)

    def test_single_sample_half_opacity(self):
        rgb, mask = composite(Tensor(np.array([[math.log(2.0) / 0.25]])), Tensor(np.ones((1, 1, 3))),
                              np.array([[0.25]]))
        self.assertAlmostEqual(float(mask.data[0]), 0.5, places=6)
        np.testing.assert_allclose(rgb.data[0], 0.5, atol=1e-6)

    def test_empty_field_renders_black_and_transparent(self):
        sigmas = np.zeros((2, 5))
        colors = np.ones((2, 5, 3))
        rgb, mask = composite(Tensor(sigmas), Tensor(colors), np.full((2, 5), 0.1))
        np.testing.assert_array_equal(rgb.data, 0.0)
        np.testing.assert_array_equal(mask.data, 0.0)

    def test_gradient_with_respect_to_density(self):
        sigmas, colors, deltas = _random_ray_samples(3, rays=2, samples=5)

        def fn(t):
            rgb, mask = composite(t[0], Tensor(colors), deltas)
            return ops.add(ops.sum(rgb), ops.sum(mask))

        self.assertLess(check_gradients(fn, [sigmas]), 1e-3)

    def test_constant_density_cube_transmittance(self):
        sigma = 1.5
        cam = Camera.look_at([0.0, 0.0, 3.0], math.radians(30.0), 9)
        center = 4 * 9 + 4
        bundle = generate_rays(cam, [center])
        self.assertTrue(bundle.hit[0])
        length = bundle.far[0] - bundle.near[0]
        self.assertAlmostEqual(length, 2.0, places=9)

        def field_fn(points, dirs):
            n = points.shape[0]
            return Tensor(np.ones((n, 3))), Tensor(np.full(n, sigma))

        _, mask = render_rays(field_fn, bundle, 128)
        expected = 1.0 - math.exp(-sigma * length)
        self.assertLess(abs(mask.data[0] - expected) / expected, 0.01)


class TestRays(unittest.TestCase):

    def test_axis_aligned_ray_enters_and_leaves_cube(self):
        near, far, hit = intersect_cube(np.array([[0.0, 0.0, 5.0]]), np.array([[0.0, 0.0, -1.0]]))
        self.assertTrue(hit[0])
        self.assertAlmostEqual(near[0], 4.0)
        self.assertAlmostEqual(far[0], 6.0)

    def test_ray_missing_cube(self):
        _, _, hit = intersect_cube(np.array([[0.0, 3.0, 5.0]]), np.array([[0.0, 0.0, -1.0]]))
        self.assertFalse(hit[0])

    def test_origin_inside_cube_clamps_near_to_zero(self):
        near, far, hit = intersect_cube(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]))
        self.assertTrue(hit[0])
        self.assertEqual(near[0], 0.0)
        self.assertAlmostEqual(far[0], 1.0)

    def test_missed_rays_get_zero_density(self):
        cam = Camera.look_at([0.0, 0.0, 3.0], math.radians(120.0), 8)
        bundle = generate_rays(cam, [0])
        self.assertFalse(bundle.hit[0])

        def dense_field(points, dirs):
            n = points.shape[0]
            return Tensor(np.ones((n, 3))), Tensor(np.full(n, 50.0))

        rgb, mask = render_rays(dense_field, bundle, 16)
        self.assertEqual(float(mask.data[0]), 0.0)
        np.testing.assert_array_equal(rgb.data[0], 0.0)

    def test_center_ray_looks_at_target(self):
        cam = Camera.look_at([2.0, 1.0, 2.0], math.radians(40.0), 2)
        bundle = generate_rays(cam, np.arange(4))
        mean_dir = bundle.directions.mean(axis=0)
        expected = -np.array([2.0, 1.0, 2.0]) / 3.0
        np.testing.assert_allclose(mean_dir / np.linalg.norm(mean_dir), expected, atol=1e-9)

    def test_pixel_out_of_range(self):
        cam = Camera.look_at([0.0, 0.0, 3.0], math.radians(40.0), 4)
        with self.assertRaises(ValueError):
            generate_rays(cam, [16])

    def test_camera_dict_round_trip(self):
        cam = Camera.look_at([1.0, 2.0, 2.0], 0.7, 16)
        clone = Camera.from_dict(cam.to_dict())
        np.testing.assert_array_equal(clone.pose, cam.pose)
        self.assertEqual(clone.resolution, 16)

    def test_non_orthonormal_pose_rejected(self):
        with self.assertRaises(ValueError):
            Camera(np.ones((3, 4)), 0.5, 8)


class TestSampling(unittest.TestCase):

    def test_deltas_cover_interval(self):
        t, deltas = sample_along_ray(np.array([1.0, 0.5]), np.array([3.0, 0.9]), 8)
        np.testing.assert_allclose(deltas.sum(axis=1), [2.0, 0.4])
        self.assertTrue(np.all(np.diff(t, axis=1) > 0))

    def test_stratified_samples_stay_in_their_bins(self):
        rng = make_rng(0, "strat")
        t, _ = sample_along_ray(np.zeros(50), np.ones(50), 4, stratified=True, rng=rng)
        bins = np.floor(t * 4)
        np.testing.assert_array_equal(bins, np.tile(np.arange(4), (50, 1)))

    def test_stratified_needs_rng(self):
        with self.assertRaises(ValueError):
            sample_along_ray(np.zeros(1), np.ones(1), 4, stratified=True)

    def test_empty_interval_rejected(self):
        with self.assertRaises(ValueError):
            sample_along_ray(np.ones(1), np.ones(1), 4)


class TestRenderImage(unittest.TestCase):

    def test_frame_shape_and_range(self):
        decoder = SharedDecoder(2, make_rng(0, "render"), pe_frequencies=2, hidden=8, depth=2)
        tri = Triplane(make_rng(1, "render").standard_normal((3, 2, 4, 4)))
        cam = Camera.look_at([0.0, 0.0, 2.5], math.radians(40.0), 6)
        frame = render_image(tri, decoder, cam, 8, chunk=10)
        self.assertEqual(frame.shape, (6, 6, 4))
        self.assertTrue(np.all(frame >= 0.0))
        self.assertTrue(np.all(frame[..., 3] <= 1.0 + 1e-6))
        # premultiplied color never exceeds coverage
        self.assertTrue(np.all(frame[..., :3] <= frame[..., 3:4] + 1e-5))


if __name__ == "__main__":
    unittest.main()
