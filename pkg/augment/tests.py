import numpy as np
from django.test import SimpleTestCase

from autodiff import Graph, Tensor
from autodiff import functional as F
from dhalab.exceptions import NonFiniteGradientError, PolicyUpdateError, ShapeError, UnknownTransformError

from .policy import (
    DaPolicy, PairDraw, augment_batch, da_gradient, da_loss, pair_weights, sample_pairs, sample_transforms,
    update_tau,
)
from .transforms import IMAGE_OPS, VECTOR_OPS, TransformOp, apply_pair, apply_transform


class ImageTransformTests(SimpleTestCase):
    def setUp(self):
        self.image = np.random.default_rng(0).uniform(size=(3, 8, 8))

    def test_identity(self):
        np.testing.assert_array_equal(apply_transform(self.image, TransformOp('Identity', 7.0)), self.image)

    def test_zero_magnitude_is_identity(self):
        for kind in IMAGE_OPS:
            if kind in ('AutoContrast', 'Equalize'):
                continue
            out = apply_transform(self.image, TransformOp(kind, 0.0, negate=True))
            np.testing.assert_allclose(out, self.image, atol=1e-12, err_msg=kind)

    def test_solarize_full_magnitude_inverts_everything(self):
        image = np.full((1, 4, 4), 0.9)
        out = apply_transform(image, TransformOp('Solarize', 10.0))
        expected = np.empty_like(image)
        for idx in np.ndindex(image.shape):
            expected[idx] = 1.0 - image[idx] if image[idx] >= 0.0 else image[idx]
        np.testing.assert_allclose(out, expected)
        np.testing.assert_allclose(out, 0.1)

    def test_solarize_half_threshold(self):
        out = apply_transform(np.array([[[0.2, 0.5, 0.8]]]), TransformOp('Solarize', 5.0))
        np.testing.assert_allclose(out, [[[0.2, 0.5, 0.2]]])

    def test_posterize_full_magnitude_keeps_four_bits(self):
        out = apply_transform(self.image, TransformOp('Posterize', 10.0))
        levels = np.rint(out * 255).astype(int)
        self.assertTrue(np.all(levels % 16 == 0))

    def test_brightness_negated(self):
        out = apply_transform(self.image, TransformOp('Brightness', 10.0, negate=True))
        np.testing.assert_allclose(out, self.image * 0.1)

    def test_shape_and_range_preserved(self):
        rng = np.random.default_rng(1)
        for kind in IMAGE_OPS:
            for _ in range(3):
                op = TransformOp(kind, float(rng.uniform(0, 10)), bool(rng.random() < 0.5))
                out = apply_transform(self.image, op)
                self.assertEqual(out.shape, self.image.shape, kind)
                self.assertTrue(np.all((out >= 0.0) & (out <= 1.0)), kind)

    def test_rotate_full_turn_of_constant_image(self):
        image = np.full((1, 6, 6), 0.5)
        np.testing.assert_allclose(apply_transform(image, TransformOp('Rotate', 10.0)), image)

    def test_translate_moves_content(self):
        image = np.zeros((1, 6, 6))
        image[0, :, 0] = 1.0
        out = apply_transform(image, TransformOp('TranslateX', 10.0))
        self.assertAlmostEqual(out[0, 3, 2], 1.0)

    def test_auto_contrast_stretches(self):
        image = np.linspace(0.25, 0.75, 16).reshape(1, 4, 4)
        out = apply_transform(image, TransformOp('AutoContrast'))
        self.assertAlmostEqual(out.min(), 0.0)
        self.assertAlmostEqual(out.max(), 1.0)

    def test_unknown_kind(self):
        with self.assertRaises(UnknownTransformError):
            apply_transform(self.image, TransformOp('Cutout', 3.0))
        with self.assertRaises(UnknownTransformError):
            apply_transform(np.zeros(4), TransformOp('Rotate', 3.0))

    def test_magnitude_range(self):
        with self.assertRaises(ValueError):
            TransformOp('Rotate', 10.5)


class VectorTransformTests(SimpleTestCase):
    def test_scale_and_shift(self):
        x = np.array([1.0, -2.0])
        np.testing.assert_allclose(apply_transform(x, TransformOp('Scale', 10.0)), [1.5, -3.0])
        np.testing.assert_allclose(apply_transform(x, TransformOp('Shift', 5.0, negate=True)), [0.9, -2.1])

    def test_stochastic_ops_replay_from_seed(self):
        x = np.linspace(0, 1, 20)
        for kind in ('GaussianNoise', 'FeatureDropout'):
            op = TransformOp(kind, 8.0, seed=42)
            np.testing.assert_array_equal(apply_transform(x, op), apply_transform(x, op))
            self.assertFalse(np.array_equal(apply_transform(x, op), x))

    def test_pair_composes_in_order(self):
        x = np.array([1.0])
        out = apply_pair(x, TransformOp('Shift', 10.0), TransformOp('Scale', 10.0))
        np.testing.assert_allclose(out, [1.8])


class SamplingTests(SimpleTestCase):
    def test_uniform_policy(self):
        policy = DaPolicy.uniform(IMAGE_OPS)
        self.assertEqual(policy.num_pairs, 196)
        np.testing.assert_allclose(policy.probabilities(), 1 / 196)
        draw = sample_pairs(policy, 5, np.random.default_rng(0))
        np.testing.assert_allclose(draw.weights, 1 / 196)

    def test_degenerate_policy(self):
        tau = np.zeros(196)
        tau[37] = 1e6
        draw = sample_pairs(DaPolicy(IMAGE_OPS, tau), 1000, np.random.default_rng(0))
        self.assertTrue(np.all(draw.indices == 37))

    def test_frequencies_match_softmax(self):
        rng = np.random.default_rng(3)
        ops = ('Identity', 'Scale', 'Shift')
        policy = DaPolicy(ops, rng.normal(size=9))
        counts = np.zeros(9)
        for _ in range(10):
            counts += np.bincount(sample_pairs(policy, 10000, rng).indices, minlength=9)
        p = policy.probabilities()
        freq = counts / 100000
        stderr = np.sqrt(p * (1 - p) / 100000)
        self.assertTrue(np.all(np.abs(freq - p) < 3 * stderr), np.abs(freq - p) / stderr)

    def test_magnitudes_uniform(self):
        policy = DaPolicy.uniform(IMAGE_OPS)
        rng = np.random.default_rng(5)
        pairs = sample_transforms(policy, sample_pairs(policy, 5000, rng), rng)
        magnitudes = [op.magnitude for pair in pairs for op in pair]
        self.assertEqual(len(magnitudes), 10000)
        self.assertAlmostEqual(np.mean(magnitudes), 5.0, delta=0.15)

    def test_augment_batch_keeps_shape(self):
        policy = DaPolicy.uniform(IMAGE_OPS)
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(4, 1, 6, 6))
        pairs = sample_transforms(policy, sample_pairs(policy, 4, rng), rng)
        self.assertEqual(augment_batch(x, pairs).shape, x.shape)

    def test_gumbel_weighting(self):
        policy = DaPolicy(VECTOR_OPS, np.random.default_rng(0).normal(size=25), temperature=1e-4)
        draw = sample_pairs(policy, 8, np.random.default_rng(1), weighting='gumbel')
        np.testing.assert_allclose(draw.weights, 1.0, atol=1e-6)
        warm = DaPolicy(VECTOR_OPS, policy.tau, temperature=5.0)
        weights = pair_weights(Tensor(warm.tau), draw.indices, draw.noise, 5.0, 'gumbel').data
        self.assertTrue(np.all((weights > 0) & (weights < 1)))

    def test_invalid_policy(self):
        with self.assertRaises(PolicyUpdateError):
            DaPolicy(VECTOR_OPS, np.zeros(24))
        with self.assertRaises(PolicyUpdateError):
            DaPolicy(VECTOR_OPS, np.zeros(25), temperature=0.0)


class PolicyLossTests(SimpleTestCase):
    def _draw(self, indices, policy):
        indices = np.asarray(indices)
        p = policy.probabilities()[indices]
        return PairDraw(indices=indices, noise=np.zeros((len(indices), policy.num_pairs)), weights=p)

    def test_single_sample(self):
        self.assertEqual(da_loss([2.0], Tensor([1.0])).item(), -2.0)

    def test_length_mismatch(self):
        with self.assertRaises(ShapeError):
            da_loss([1.0, 2.0], Tensor([0.5]))

    def test_one_step_hand_computed(self):
        policy = DaPolicy.uniform(('Identity', 'Scale'))
        _, grad = da_gradient(policy, self._draw([0, 1], policy), [2.0, 1.0])
        np.testing.assert_allclose(grad, [-0.3125, -0.0625, 0.1875, 0.1875], atol=1e-15)
        stepped = update_tau(policy, grad, 1.0)
        np.testing.assert_allclose(stepped.tau, [0.3125, 0.0625, -0.1875, -0.1875])
        p = stepped.probabilities()
        self.assertGreater(p[0], p[1])

    def test_equal_losses_over_full_support(self):
        policy = DaPolicy(IMAGE_OPS, np.random.default_rng(4).normal(size=196))
        _, grad = da_gradient(policy, self._draw(np.arange(196), policy), np.full(196, 1.7))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_no_gradient_reaches_network(self):
        theta = Tensor([0.5, -1.0], requires_grad=True)
        with Graph():
            losses = F.cross_entropy(Tensor([[1.0, 0.0], [0.0, 1.0]]) * theta, [0, 1], reduction='none')
        tau = Tensor(np.zeros(4), requires_grad=True)
        with Graph() as graph:
            graph.backward(da_loss(losses, F.softmax(tau)[np.array([0, 3])]))
        self.assertIsNone(theta.grad)
        self.assertIsNotNone(tau.grad)

    def test_update_noops(self):
        policy = DaPolicy(VECTOR_OPS, np.random.default_rng(0).normal(size=25))
        np.testing.assert_array_equal(update_tau(policy, np.zeros(25), 1.0).tau, policy.tau)
        np.testing.assert_array_equal(update_tau(policy, np.ones(25), 0.0).tau, policy.tau)

    def test_update_errors(self):
        policy = DaPolicy.uniform(VECTOR_OPS)
        grad = np.zeros(25)
        grad[3] = np.nan
        with self.assertRaises(NonFiniteGradientError) as ctx:
            update_tau(policy, grad, 1.0, iteration=12)
        self.assertIn("12", str(ctx.exception))
        with self.assertRaises(PolicyUpdateError):
            update_tau(policy, np.zeros(24), 1.0)

    def test_high_loss_pair_gains_probability(self):
        policy = DaPolicy.uniform(('Identity', 'Scale'))
        rng = np.random.default_rng(0)
        start = policy.probabilities()[3]
        for _ in range(100):
            draw = sample_pairs(policy, 32, rng)
            losses = np.where(draw.indices == 3, 2.0, 1.0)
            _, grad = da_gradient(policy, draw, losses)
            policy = update_tau(policy, grad, 0.05)
        p = policy.probabilities()
        self.assertGreater(p[3], start)
        self.assertEqual(int(np.argmax(p)), 3)

    def test_export_descending(self):
        tau = np.zeros(25)
        tau[7] = 2.0
        tau[0] = 1.0
        lines = DaPolicy(VECTOR_OPS, tau).to_text().splitlines()
        self.assertEqual(len(lines), 25)
        first, second, prob = lines[0].split(",")
        self.assertEqual((first, second), ('GaussianNoise', 'Scale'))
        probs = [float(line.rsplit(",", 1)[1]) for line in lines]
        self.assertEqual(probs, sorted(probs, reverse=True))
        self.assertAlmostEqual(sum(probs), 1.0)
        self.assertEqual(DaPolicy(VECTOR_OPS, tau).top(2)[1][0], 'Identity/Identity')
