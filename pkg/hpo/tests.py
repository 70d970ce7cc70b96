import numpy as np
from django.test import SimpleTestCase

from autodiff import Graph, Tensor
from dhalab.exceptions import NonFiniteGradientError, ShapeError

from .optimizer import HyperParams, hypergrad, optimizer_step, update_hparams


def _quadratic(rng, dim=10):
    m = rng.normal(size=(dim, dim))
    return m @ m.T / dim + 0.1 * np.eye(dim)


class OptimizerStepTests(SimpleTestCase):
    def test_plain_step(self):
        theta, _ = optimizer_step(np.array(1.0), np.array(1.0), HyperParams(lr=0.1, wd=0.0))
        self.assertAlmostEqual(float(theta), 0.9)

    def test_pure_decay(self):
        theta, _ = optimizer_step(np.array(2.0), np.array(0.0), HyperParams(lr=0.1, wd=0.5, wd_max=1.0))
        self.assertAlmostEqual(float(theta), 1.9)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        theta, grad = rng.normal(size=10), rng.normal(size=10)
        hp = HyperParams(lr=0.07, wd=0.02)
        stepped, cache = optimizer_step({'w': theta}, {'w': grad}, hp)
        for i in range(10):
            self.assertAlmostEqual(stepped['w'][i], theta[i] - 0.07 * (grad[i] + 0.02 * theta[i]), places=15)
        np.testing.assert_array_equal(cache.grads['w'], grad)
        np.testing.assert_array_equal(cache.theta['w'], theta)

    def test_missing_gradient_only_decays(self):
        stepped, _ = optimizer_step({'a': np.ones(2), 'b': np.ones(2)}, {'a': np.ones(2)},
                                    HyperParams(lr=0.5, wd=0.1))
        np.testing.assert_allclose(stepped['b'], [0.95, 0.95])

    def test_errors(self):
        with self.assertRaises(NonFiniteGradientError):
            optimizer_step({'w': np.zeros(2)}, {'w': np.array([np.inf, 0.0])}, HyperParams(), iteration=4)
        with self.assertRaises(ShapeError):
            optimizer_step({'w': np.zeros(2)}, {'w': np.zeros(3)}, HyperParams())


class HypergradTests(SimpleTestCase):
    def test_stationary_point(self):
        hp = HyperParams()
        _, cache = optimizer_step(np.ones(3), np.ones(3), hp)
        self.assertEqual(hypergrad(np.zeros(3), cache, hp), (0.0, 0.0))

    def test_lr_sign(self):
        g = np.array([1.0, -2.0, 0.5])
        hp = HyperParams(lr=0.01, wd=0.0)
        _, cache = optimizer_step(np.ones(3), g, hp)
        d_lr, _ = hypergrad(g, cache, hp)
        self.assertAlmostEqual(d_lr, -float(g @ g))
        self.assertLess(d_lr, 0.0)

    def test_shape_mismatch(self):
        hp = HyperParams()
        _, cache = optimizer_step({'w': np.ones(3)}, {'w': np.ones(3)}, hp)
        with self.assertRaises(ShapeError):
            hypergrad({'w': np.ones(4)}, cache, hp)

    def test_quadratic_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            Q = _quadratic(rng)
            theta = rng.normal(size=10)
            g = Q @ theta
            lr, wd = rng.uniform(0.01, 0.2), rng.uniform(0.0, 0.1)
            hp = HyperParams(lr=lr, wd=wd)
            stepped, cache = optimizer_step(theta, g, hp)
            d_lr, d_wd = hypergrad(Q @ stepped, cache, hp)

            def loss(lr_, wd_):
                t = theta - lr_ * (g + wd_ * theta)
                return 0.5 * t @ Q @ t

            h = 1e-5
            fd_lr = (loss(lr + h, wd) - loss(lr - h, wd)) / (2 * h)
            fd_wd = (loss(lr, wd + h) - loss(lr, wd - h)) / (2 * h)
            self.assertLess(abs(d_lr - fd_lr) / (abs(fd_lr) + 1e-12), 1e-6)
            self.assertLess(abs(d_wd - fd_wd) / (abs(fd_wd) + 1e-12), 1e-6)

    def test_matches_unrolled_autodiff(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            Q = _quadratic(rng, dim=6)
            theta, g = rng.normal(size=6), rng.normal(size=6)
            hp = HyperParams(lr=0.1, wd=0.05)
            stepped, cache = optimizer_step(theta, g, hp)
            analytic = hypergrad(Q @ stepped, cache, hp)

            lr = Tensor(hp.lr, requires_grad=True)
            wd = Tensor(hp.wd, requires_grad=True)
            with Graph() as graph:
                t = theta - lr * (g + wd * theta)
                graph.backward(0.5 * (t @ (Tensor(Q) @ t)))
            self.assertAlmostEqual(analytic[0], float(lr.grad), delta=1e-10)
            self.assertAlmostEqual(analytic[1], float(wd.grad), delta=1e-10)


class UpdateTests(SimpleTestCase):
    def test_zero_hypergrad(self):
        hp = HyperParams(lr=0.3, wd=0.01)
        self.assertEqual(update_hparams(hp, (0.0, 0.0)), hp)

    def test_clamps_weight_decay(self):
        hp = HyperParams(lr=0.3, wd=0.01, meta_lr=1.0)
        self.assertEqual(update_hparams(hp, (0.0, 5.0)).wd, hp.wd_min)
        self.assertEqual(update_hparams(hp, (-50.0, 0.0)).lr, hp.lr_max)

    def test_clamp_idempotent(self):
        hp = HyperParams(lr=7.0, wd=-1.0)
        self.assertEqual(hp.clamp().clamp(), hp.clamp())

    def test_non_finite(self):
        with self.assertRaises(NonFiniteGradientError):
            update_hparams(HyperParams(), (np.nan, 0.0))

    def test_invalid_bounds(self):
        with self.assertRaises(ValueError):
            HyperParams(lr_min=0.5, lr_max=0.1)
        with self.assertRaises(ValueError):
            HyperParams(wd_max=np.inf)

    def test_adaptation_beats_frozen(self):
        rng = np.random.default_rng(3)
        Q = _quadratic(rng)
        top = np.linalg.eigvalsh(Q).max()
        start = rng.normal(size=10)
        frozen = adaptive = HyperParams(lr=0.001, wd=0.0, lr_max=1.0 / top, meta_lr=1e-4)
        theta_f = theta_a = start
        for _ in range(50):
            theta_f, _ = optimizer_step(theta_f, Q @ theta_f, frozen)
            stepped, cache = optimizer_step(theta_a, Q @ theta_a, adaptive)
            adaptive = update_hparams(adaptive, hypergrad(Q @ stepped, cache, adaptive))
            theta_a = stepped
        loss = lambda t: 0.5 * t @ Q @ t  # noqa: E731
        self.assertLess(loss(theta_a), loss(theta_f))
        self.assertGreater(adaptive.lr, frozen.lr)
