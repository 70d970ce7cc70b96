import math

import numpy as np
from django.test import SimpleTestCase

from dhalab.exceptions import GraphError, ShapeError

from . import functional as F
from .gradcheck import finite_diff_check
from .tensor import Graph, Tensor, no_grad


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


class ForwardOpsTests(SimpleTestCase):
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = a @ Tensor(np.eye(2))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_cross_entropy_uniform_logits(self):
        loss = F.cross_entropy(Tensor([0.0, 0.0]), 0)
        self.assertAlmostEqual(loss.item(), math.log(2.0), places=12)

    def test_conv2d_full_support_kernel_is_dot_product(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 1, 3, 3))
        w = rng.normal(size=(1, 1, 3, 3))
        out = F.conv2d(Tensor(x), Tensor(w))
        self.assertEqual(out.shape, (1, 1, 1, 1))
        self.assertAlmostEqual(out.item(), float((x * w).sum()), places=12)

    def test_conv2d_stride_two_output_extent(self):
        x = Tensor(np.zeros((2, 3, 8, 8)))
        w = Tensor(np.zeros((4, 3, 3, 3)))
        self.assertEqual(F.conv2d(x, w, stride=2, padding=1).shape, (2, 4, 4, 4))

    def test_avg_pool_excludes_padding(self):
        out = F.avg_pool2d(Tensor(np.ones((1, 1, 3, 3))))
        np.testing.assert_allclose(out.data, np.ones((1, 1, 3, 3)))

    def test_max_pool_keeps_spatial_extent(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        out = F.max_pool2d(x)
        self.assertEqual(out.data[0, 0, 0, 0], 5.0)
        self.assertEqual(out.data[0, 0, 3, 3], 15.0)

    def test_shape_mismatch_names_op_and_shapes(self):
        with self.assertRaises(ShapeError) as ctx:
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
        message = str(ctx.exception)
        self.assertIn("matmul", message)
        self.assertIn("(2, 3)", message)

        with self.assertRaises(ShapeError) as ctx:
            Tensor(np.ones(3)) + Tensor(np.ones(4))
        self.assertIn("add", str(ctx.exception))

    def test_conv2d_group_mismatch(self):
        with self.assertRaises(ShapeError):
            F.conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((4, 2, 3, 3))), groups=2)

    def test_forward_is_bit_identical_across_runs(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 4, 5, 5))
        w = rng.normal(size=(4, 1, 3, 3))

        def run():
            out = F.conv2d(Tensor(x), Tensor(w), padding=2, dilation=2, groups=4)
            return F.avg_pool2d(F.relu(out)).data.tobytes()

        self.assertEqual(run(), run())

    def test_tensor_data_is_read_only(self):
        t = Tensor([1.0, 2.0])
        with self.assertRaises(ValueError):
            t.data[0] = 5.0


class BackwardTests(SimpleTestCase):
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        (x * x).backward()
        self.assertEqual(x.grad, 6.0)

    def test_cross_entropy_gradient_at_uniform_logits(self):
        logits = Tensor([0.0, 0.0], requires_grad=True)
        F.cross_entropy(logits, 0).backward()
        np.testing.assert_allclose(logits.grad, [-0.5, 0.5], atol=1e-15)

    def test_fan_out_accumulates(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        (x + x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Graph() as graph:
            y = x * 2.0
            with self.assertRaises(GraphError):
                graph.backward(y)

    def test_backward_twice_without_reset_rejected(self):
        x = Tensor(2.0, requires_grad=True)
        with Graph() as graph:
            y = x * x
            graph.backward(y)
            with self.assertRaises(GraphError):
                graph.backward(y)
            graph.reset()
            z = x * 3.0
            graph.backward(z)
        self.assertEqual(x.grad, 7.0)

    def test_records_are_topological(self):
        rng = np.random.default_rng(1)
        x = _param(rng, 3, 4)
        with Graph() as graph:
            h = F.relu(x @ Tensor(rng.normal(size=(4, 2))))
            loss = F.cross_entropy(h + h, [0, 1, 1])
            self.assertTrue(graph.is_topological())
            self.assertGreater(len(graph), 3)
            graph.backward(loss)

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Graph() as graph:
            with no_grad():
                y = (x * 2.0).sum()
            self.assertEqual(len(graph), 0)
        self.assertFalse(y.requires_grad)


class FiniteDifferenceTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2024)

    def _check(self, build, *params, floor=1e-12):
        weights = {}

        def f():
            out = build()
            if out.size == 1:
                return out.reshape(())
            if out.shape not in weights:
                weights[out.shape] = Tensor(self.rng.normal(size=out.shape))
            return (out * weights[out.shape]).sum()

        return finite_diff_check(f, params, step=1e-4, floor=floor)

    def test_scalar_square(self):
        x = Tensor(1.0, requires_grad=True)
        self.assertLess(finite_diff_check(lambda: x * x, [x], step=1e-4), 1e-8)

    def test_small_gradients_can_be_left_out(self):
        x = Tensor(np.array([0.0, 1.0]), requires_grad=True)

        def cube():
            return (x * x * x).sum()

        self.assertGreater(finite_diff_check(cube, [x], step=1e-4), 0.5)
        self.assertLess(finite_diff_check(cube, [x], step=1e-4, min_magnitude=1e-6), 1e-6)

    def test_quadratic_form(self):
        q = self.rng.normal(size=(5, 5))
        x = _param(self.rng, 5)
        error = finite_diff_check(lambda: x @ (Tensor(q) @ x), [x])
        self.assertLess(error, 1e-6)
        with Graph() as graph:
            graph.backward(x @ (Tensor(q) @ x))
        np.testing.assert_allclose(x.grad, (q + q.T) @ x.data, rtol=1e-12)

    def test_elementwise_ops_with_broadcasting(self):
        a = _param(self.rng, 3, 4)
        b = _param(self.rng, 4)
        c = Tensor(self.rng.uniform(1.0, 2.0, size=(3, 1)), requires_grad=True)
        self.assertLess(self._check(lambda: (a + b) * c - a / c, a, b, c), 1e-4)

    def test_relu_and_neg(self):
        x = _param(self.rng, 4, 3)
        self.assertLess(self._check(lambda: F.relu(-x), x), 1e-4)

    def test_matmul_shapes(self):
        a = _param(self.rng, 3, 4)
        b = _param(self.rng, 4, 2)
        v = _param(self.rng, 4)
        self.assertLess(self._check(lambda: a @ b, a, b), 1e-4)
        self.assertLess(self._check(lambda: v @ b, v, b), 1e-4)
        self.assertLess(self._check(lambda: a @ v, a, v), 1e-4)

    def test_softmax_family(self):
        x = _param(self.rng, 2, 5)
        self.assertLess(self._check(lambda: F.softmax(x), x), 1e-4)
        self.assertLess(self._check(lambda: F.log_softmax(x), x), 1e-4)
        self.assertLess(self._check(lambda: F.cross_entropy(x, [1, 4], reduction="none"), x), 1e-4)
        self.assertLess(self._check(lambda: F.cross_entropy(x, [0, 2]), x), 1e-4)

    def test_affine_on_feature_maps(self):
        x = _param(self.rng, 2, 3, 4, 4)
        scale = _param(self.rng, 3)
        shift = _param(self.rng, 3)
        self.assertLess(self._check(lambda: F.affine(x, scale, shift), x, scale, shift), 1e-4)

    def test_conv2d_variants(self):
        x = _param(self.rng, 2, 4, 6, 6)
        dense = _param(self.rng, 3, 4, 3, 3)
        depthwise = _param(self.rng, 4, 1, 5, 5)
        self.assertLess(self._check(lambda: F.conv2d(x, dense, stride=2, padding=1), x, dense), 1e-4)
        self.assertLess(
            self._check(lambda: F.conv2d(x, depthwise, padding=4, dilation=2, groups=4), x, depthwise), 1e-4)

    def test_pooling(self):
        x = _param(self.rng, 2, 2, 5, 5)
        self.assertLess(self._check(lambda: F.max_pool2d(x), x), 1e-4)
        self.assertLess(self._check(lambda: F.avg_pool2d(x), x), 1e-4)
        self.assertLess(self._check(lambda: F.avg_pool2d(x, stride=2), x), 1e-4)
        self.assertLess(self._check(lambda: F.global_avg_pool(x), x), 1e-4)

    def test_indexing_stack_and_weighted_sum(self):
        x = _param(self.rng, 6)
        self.assertLess(self._check(lambda: x[np.array([0, 3, 3])], x), 1e-4)
        self.assertLess(self._check(lambda: F.stack([x[1], x[2] * x[4]]), x), 1e-4)
        self.assertLess(self._check(lambda: F.weighted_sum([x[0], x[5]], [0.25, -2.0]), x), 1e-4)

    def test_mix(self):
        w = _param(self.rng, 3)
        parts = [_param(self.rng, 2, 3) for _ in range(3)]
        self.assertLess(self._check(lambda: F.mix(w, parts), w, *parts), 1e-4)
        with self.assertRaises(ShapeError):
            F.mix(w, parts[:2])

    def test_three_layer_mlp(self):
        x = Tensor(self.rng.normal(size=(8, 5)))
        labels = self.rng.integers(0, 3, size=8)
        w1, w2, w3 = _param(self.rng, 5, 7), _param(self.rng, 7, 6), _param(self.rng, 6, 3)

        def loss():
            h = F.relu(x @ w1)
            h = F.relu(h @ w2)
            return F.cross_entropy(h @ w3, labels)

        self.assertLess(finite_diff_check(loss, [w1, w2, w3], step=1e-4), 1e-4)
