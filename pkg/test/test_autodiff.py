"""
Tests for the tensor autodiff core: op gradients against central differences,
graph bookkeeping, layers, Adam and the snapshot format.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.append(str(Path(__file__).parent.parent))

from autodiff import ops
from autodiff.gradcheck import check_gradients, finite_difference_check
from autodiff.nn import Conv2d, Embedding, LayerNorm, Linear
from autodiff.optim import Adam
from autodiff.rng import make_rng
from autodiff.snapshot import (decode_tensor, encode_tensor, load_named_tensors, save_named_tensors)
from autodiff.tensor import Tensor, backward, default_dtype, no_grad
from core.errors import GradientError, ShapeError, SnapshotFormatError

OP_TOLERANCE = 1e-4


def _rand(rng, *shape, low=-1.0, high=1.0):
    return rng.uniform(low, high, size=shape)


def _away_from_zero(rng, *shape):
    values = rng.uniform(0.2, 1.0, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


class TestOpGradients(unittest.TestCase):
    """Every catalog op on a few random shapes, 64-bit, eps=1e-5."""

    def setUp(self):
        self.rng = make_rng(7, "test-ops")

    def assertGradOK(self, kind, inputs, **attrs):
        error = finite_difference_check(kind, inputs, eps=1e-5, attrs=attrs)
        self.assertLess(error, OP_TOLERANCE, f"{kind} {[np.shape(x) for x in inputs]} {attrs}")

    def test_elementwise_binary_with_broadcasting(self):
        for shape_a, shape_b in [((3, 4), (3, 4)), ((2, 3, 4), (4,)), ((5, 1), (1, 6))]:
            a, b = _rand(self.rng, *shape_a), _rand(self.rng, *shape_b)
            for kind in ("add", "sub", "mul"):
                self.assertGradOK(kind, [a, b])
            self.assertGradOK("div", [a, self.rng.uniform(0.5, 2.0, size=shape_b)])

    def test_matmul(self):
        self.assertGradOK("matmul", [_rand(self.rng, 3, 4), _rand(self.rng, 4, 2)])
        self.assertGradOK("matmul", [_rand(self.rng, 2, 5, 3), _rand(self.rng, 3, 4)])
        self.assertGradOK("matmul", [_rand(self.rng, 2, 3, 4), _rand(self.rng, 2, 4, 3)])

    def test_unary(self):
        for shape in [(7,), (3, 4), (2, 2, 5)]:
            x = _rand(self.rng, *shape, low=-2.0, high=2.0)
            for kind in ("neg", "exp", "square", "sigmoid", "softplus", "silu"):
                self.assertGradOK(kind, [x])
            self.assertGradOK("log", [self.rng.uniform(0.2, 3.0, size=shape)])
            self.assertGradOK("abs", [_away_from_zero(self.rng, *shape)])
            self.assertGradOK("relu", [_away_from_zero(self.rng, *shape)])

    def test_reductions_and_views(self):
        x = _rand(self.rng, 2, 3, 4)
        self.assertGradOK("sum", [x])
        self.assertGradOK("sum", [x], axis=1, keepdims=True)
        self.assertGradOK("mean", [x], axis=(0, 2))
        self.assertGradOK("reshape", [x], shape=(6, 4))
        self.assertGradOK("transpose", [x], axes=(2, 0, 1))
        self.assertGradOK("index", [x], idx=(slice(None), 1))
        self.assertGradOK("index", [x], idx=(np.array([0, 1, 1]), slice(1, 3)))
        self.assertGradOK("concat", [x, _rand(self.rng, 2, 1, 4)], axis=1)

    def test_normalization_and_scan(self):
        for shape in [(4, 6), (2, 3, 5)]:
            x = _rand(self.rng, *shape, low=-3.0, high=3.0)
            self.assertGradOK("softmax", [x])
            self.assertGradOK("softmax", [x], axis=0)
            self.assertGradOK("layer_norm", [x])
            self.assertGradOK("cumsum", [x], axis=-1)
            self.assertGradOK("cumsum", [x], axis=-1, exclusive=True)

    def test_spatial(self):
        x = _rand(self.rng, 2, 3, 6, 6)
        w = _rand(self.rng, 4, 3, 3, 3)
        b = _rand(self.rng, 4)
        self.assertGradOK("conv2d", [x, w, b], stride=1, padding=1)
        self.assertGradOK("conv2d", [x, w, b], stride=2, padding=1)
        self.assertGradOK("conv2d", [x, _rand(self.rng, 2, 3, 1, 1)], stride=1, padding=0)
        self.assertGradOK("upsample_nearest", [_rand(self.rng, 1, 2, 3, 3)], factor=2)
        self.assertGradOK("patchify", [_rand(self.rng, 2, 3, 4, 4)], patch_size=2)
        self.assertGradOK("integrate", [_rand(self.rng, 2, 4, 12)], patch_size=2, width=4, height=4)

    def test_grid_sample_interior_points(self):
        plane = _rand(self.rng, 3, 5, 4)
        coords = self.rng.uniform(-0.9, 0.9, size=(10, 2))
        self.assertGradOK("grid_sample", [plane, coords])

    def test_embedding_scatter_adds_repeated_rows(self):
        table = _rand(self.rng, 5, 3)
        self.assertGradOK("embedding", [table], indices=np.array([0, 2, 2, 4]))

    def test_composite_graph(self):
        a = _rand(self.rng, 4, 3)
        b = _rand(self.rng, 3, 5)
        c = _rand(self.rng, 5)

        def fn(t):
            h = ops.silu(ops.add(ops.matmul(t[0], t[1]), t[2]))
            h = ops.layer_norm(h)
            return ops.sum(ops.mul(ops.softmax(h), h))

        self.assertLess(check_gradients(fn, [a, b, c]), OP_TOLERANCE)


class TestOpShapes(unittest.TestCase):

    def test_matmul_shape_mismatch_names_op_and_shapes(self):
        with self.assertRaises(ShapeError) as ctx:
            ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        self.assertIn("matmul", str(ctx.exception))
        self.assertIn("(2, 3)", str(ctx.exception))

    def test_unknown_op_kind(self):
        with self.assertRaises(ShapeError):
            ops.forward_op("fft", Tensor(np.zeros(3)))

    def test_patchify_integrate_round_trip_is_exact(self):
        x = make_rng(3, "patch").standard_normal((2, 5, 8, 4))
        tokens = ops.patchify(Tensor(x), 2)
        self.assertEqual(tokens.shape, (2, 8, 20))
        back = ops.integrate(tokens, 2, 8, 4)
        np.testing.assert_array_equal(back.data, x.astype(np.float32))

    def test_patchify_rejects_indivisible_plane(self):
        with self.assertRaises(ShapeError):
            ops.patchify(Tensor(np.zeros((1, 1, 5, 4))), 2)

    def test_exclusive_cumsum_starts_at_zero(self):
        out = ops.cumsum(Tensor(np.array([1.0, 2.0, 3.0])), exclusive=True)
        np.testing.assert_allclose(out.data, [0.0, 1.0, 3.0])

    @settings(max_examples=25, deadline=None)
    @given(rows=st.integers(1, 5), cols=st.integers(1, 8), scale=st.floats(0.1, 50.0))
    def test_softmax_rows_sum_to_one(self, rows, cols, scale):
        x = make_rng(rows * 31 + cols, "softmax").standard_normal((rows, cols)) * scale
        out = ops.softmax(Tensor(x)).data
        self.assertTrue(np.all(out >= 0.0))
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(sizes=st.lists(st.integers(1, 4), min_size=1, max_size=4))
    def test_concat_then_slice_returns_parts(self, sizes):
        rng = make_rng(len(sizes), "concat")
        parts = [rng.standard_normal((2, s)) for s in sizes]
        joined = ops.concat([Tensor(p) for p in parts], axis=1)
        start = 0
        for part in parts:
            np.testing.assert_array_equal(joined.data[:, start:start + part.shape[1]],
                                          part.astype(np.float32))
            start += part.shape[1]


class TestGraph(unittest.TestCase):

    def test_gradient_accumulates_over_reused_tensor(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        y = ops.sum(ops.add(ops.mul(x, x), x))
        backward(y)
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    @settings(max_examples=20, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
    def test_backward_is_linear(self, a, b, seed):
        values = make_rng(seed, "linearity").uniform(-1, 1, size=(2, 3))

        def grad_of(build):
            with default_dtype(np.float64):
                x = Tensor(values, requires_grad=True)
                backward(build(x))
            return x.grad

        f = lambda x: ops.sum(ops.exp(x))
        g = lambda x: ops.sum(ops.square(ops.matmul(x, Tensor(np.ones((3, 2))))))
        combined = grad_of(lambda x: ops.add(ops.mul(f(x), a), ops.mul(g(x), b)))
        np.testing.assert_allclose(combined, a * grad_of(f) + b * grad_of(g), atol=1e-10)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(GradientError):
            backward(ops.mul(x, 2.0))

    def test_backward_requires_a_leaf(self):
        with self.assertRaises(GradientError):
            backward(ops.sum(Tensor(np.ones(3))))

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ops.sum(ops.mul(x, x))
        self.assertFalse(y.requires_grad)

    def test_default_dtype_is_float32_and_switchable(self):
        self.assertEqual(Tensor(np.ones(2)).dtype, np.float32)
        with default_dtype(np.float64):
            self.assertEqual(Tensor(np.ones(2)).dtype, np.float64)
        self.assertEqual(Tensor(np.ones(2)).dtype, np.float32)


class TestLayersAndOptimizer(unittest.TestCase):

    def setUp(self):
        self.rng = make_rng(11, "layers")

    def test_linear_parameter_count_and_zero_init(self):
        layer = Linear(4, 3, self.rng, zero_init=True)
        self.assertEqual(layer.parameter_count(), 4 * 3 + 3)
        out = layer(Tensor(np.ones((2, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 3)))

    def test_state_dict_round_trip(self):
        layer = Conv2d(2, 3, 3, self.rng)
        other = Conv2d(2, 3, 3, make_rng(12, "layers"))
        other.load_state_dict(layer.state_dict())
        np.testing.assert_array_equal(other.weight.data, layer.weight.data)

    def test_load_state_dict_rejects_missing_keys(self):
        layer = LayerNorm(4)
        with self.assertRaises(KeyError):
            layer.load_state_dict({"gamma": np.ones(4)})

    def test_embedding_rejects_out_of_range_index(self):
        table = Embedding(3, 2, self.rng)
        with self.assertRaises(ShapeError):
            table(np.array([3]))

    def test_adam_minimizes_quadratic(self):
        w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        opt = Adam([w], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            backward(ops.sum(ops.square(w)))
            opt.step()
        self.assertLess(float(np.abs(w.data).max()), 0.1)

    def test_adam_state_round_trip(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam([w], lr=0.01)
        backward(ops.sum(ops.square(w)))
        opt.step()
        clone = Adam([Tensor(w.data.copy(), requires_grad=True)], lr=0.5)
        clone.load_state_dict(opt.state_dict())
        self.assertEqual(clone.step_count, 1)
        self.assertAlmostEqual(clone.param_groups[0]["lr"], 0.01, places=6)
        np.testing.assert_array_equal(clone.m[0][0], opt.m[0][0])


class TestSnapshot(unittest.TestCase):

    def test_encoded_header(self):
        payload = encode_tensor(np.zeros((2, 3)))
        self.assertEqual(payload[:4], b"DTF0")
        self.assertEqual(len(payload), 4 + 4 + 2 * 4 + 6 * 4)
        self.assertEqual(decode_tensor(payload).shape, (2, 3))

    def test_bad_magic(self):
        payload = bytearray(encode_tensor(np.ones(4)))
        payload[:4] = b"XXXX"
        with self.assertRaises(SnapshotFormatError):
            decode_tensor(bytes(payload))

    def test_truncated_payload(self):
        payload = encode_tensor(np.ones((3, 3)))
        with self.assertRaises(SnapshotFormatError):
            decode_tensor(payload[:-4])

    def test_named_tensors_directory(self):
        tensors = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
        with tempfile.TemporaryDirectory() as tmp:
            save_named_tensors(tmp, tensors, {"kind": "probe"})
            loaded, meta = load_named_tensors(tmp)
        self.assertEqual(sorted(loaded), sorted(tensors))
        np.testing.assert_array_equal(loaded["a.weight"], tensors["a.weight"].astype(np.float32))
        self.assertEqual(meta.get("kind"), "probe")


class TestRandomStreams(unittest.TestCase):

    def test_named_streams_are_reproducible_and_independent(self):
        a = make_rng(5, "fit", "obj_000").standard_normal(4)
        b = make_rng(5, "fit", "obj_000").standard_normal(4)
        c = make_rng(5, "fit", "obj_001").standard_normal(4)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))


if __name__ == "__main__":
    unittest.main()
