import itertools
import math

import numpy as np
from django.test import SimpleTestCase

from autodiff import Graph, Tensor, finite_diff_check
from autodiff import functional as F
from dhalab.exceptions import ConstraintError, IstaDivergenceError, MeasurementError, ShapeError

from .architecture import ArchState, NodeCode, alpha_entropy, relaxed_node_output, update_b
from .genotype import Genotype, GenotypeEdge, check_constraint, extract_child, param_count, repair_genotype
from .operations import OPS, PARAMETER_FREE, PRIMITIVES
from .space import CellSpace, NetworkSpec
from .sparse import (
    init_measurement, ista_recover, lasso_objective, lipschitz_constant, mutual_coherence, soft_threshold,
)
from .supernet import ChildNetwork, Supernet


def _planted(seed, m, n=56, sparsity=3):
    rng = np.random.default_rng(seed)
    A = init_measurement(m, n, seed)
    truth = np.zeros(n)
    support = rng.choice(n, size=sparsity, replace=False)
    truth[support] = rng.choice([-1.0, 1.0], size=sparsity) * rng.uniform(0.5, 1.5, size=sparsity)
    return A, truth


def _random_genotype(space, rng):
    edges = []
    for node in space.nodes:
        for predecessor in sorted(rng.choice(node, size=2, replace=False)):
            edges.append(GenotypeEdge(node, int(predecessor), PRIMITIVES[rng.integers(len(PRIMITIVES))], 1.0))
    return Genotype(tuple(edges))


class MeasurementTests(SimpleTestCase):
    def test_unit_columns(self):
        A = init_measurement(20, 56, seed=3)
        np.testing.assert_allclose(np.linalg.norm(A, axis=0), 1.0, atol=1e-12)

    def test_same_seed_same_matrix(self):
        np.testing.assert_array_equal(init_measurement(7, 14, seed=11), init_measurement(7, 14, seed=11))

    def test_coherence_bound_over_seeds(self):
        for seed in range(100):
            self.assertLess(mutual_coherence(init_measurement(20, 56, seed)), 0.8)

    def test_square_or_tall_rejected(self):
        with self.assertRaises(MeasurementError):
            init_measurement(14, 14, seed=0)

    def test_lipschitz_covers_largest_eigenvalue(self):
        for seed in range(10):
            A = init_measurement(20, 56, seed)
            top = np.linalg.eigvalsh(A.T @ A).max()
            L = lipschitz_constant(A)
            self.assertGreaterEqual(L, top)
            self.assertLess(L, top * (1 + 1e-5))


class SoftThresholdTests(SimpleTestCase):
    def test_examples(self):
        np.testing.assert_array_equal(soft_threshold([3.0, -0.5, 0.2], 1.0), [2.0, 0.0, 0.0])
        x = np.array([1.5, -2.0, 0.0])
        np.testing.assert_array_equal(soft_threshold(x, 0.0), x)

    def test_negative_threshold_rejected(self):
        with self.assertRaises(ValueError):
            soft_threshold([1.0], -0.1)

    def test_matches_proximal_grid_search(self):
        rng = np.random.default_rng(5)
        grid = np.linspace(-4.0, 4.0, 80001)
        step = grid[1] - grid[0]
        for x, t in zip(rng.uniform(-3, 3, size=20), rng.uniform(0, 1.5, size=20)):
            objective = 0.5 * (grid - x) ** 2 + t * np.abs(grid)
            best = grid[np.argmin(objective)]
            self.assertLessEqual(abs(soft_threshold([x], t)[0] - best), step)


class IstaTests(SimpleTestCase):
    def test_zero_code_gives_zero_alpha(self):
        A = init_measurement(7, 14, seed=0)
        np.testing.assert_array_equal(ista_recover(A, np.zeros(7), 1e-4), np.zeros(14))

    def test_planted_support_recovered(self):
        A, truth = _planted(seed=1, m=20)
        alpha = ista_recover(A, A @ truth, 1e-4, max_iters=20000, tol=1e-12)
        np.testing.assert_array_equal(np.flatnonzero(np.abs(alpha) > 1e-6), np.flatnonzero(truth))
        self.assertLess(np.max(np.abs(alpha - truth)), 1e-3)

    def test_recovery_rate(self):
        for m in (20, 28):
            hits = 0
            for seed in range(100):
                A, truth = _planted(seed, m=m)
                alpha = ista_recover(A, A @ truth, 1e-4, max_iters=20000, tol=1e-12)
                support_ok = np.array_equal(np.flatnonzero(np.abs(alpha) > 1e-6), np.flatnonzero(truth))
                hits += support_ok and np.max(np.abs(alpha - truth)) < 1e-3
            self.assertGreaterEqual(hits, 95, f"m={m}")

    def test_objective_monotone(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            A = init_measurement(20, 56, seed)
            b = rng.normal(size=20)
            lam = 10 ** rng.uniform(-4, -1)
            trace = [lasso_objective(A, b, np.zeros(56), lam)]
            ista_recover(A, b, lam, max_iters=300, tol=0.0,
                         callback=lambda _, alpha: trace.append(lasso_objective(A, b, alpha, lam)))
            steps = np.diff(trace)
            self.assertTrue(np.all(steps <= 1e-12 * max(1.0, trace[0])), f"seed={seed}")

    def test_non_finite_iterate_names_iteration(self):
        A = init_measurement(7, 14, seed=0)
        b = np.full(7, np.inf)
        with self.assertRaises(IstaDivergenceError) as ctx:
            ista_recover(A, b, 1e-4)
        self.assertEqual(ctx.exception.iteration, 1)


class ArchStateTests(SimpleTestCase):
    def setUp(self):
        self.space = CellSpace(num_nodes=3)
        self.arch = ArchState.initialize(self.space, np.random.default_rng(0))

    def test_code_invariants(self):
        for node, code in zip(self.space.nodes, self.arch.codes):
            self.assertEqual(code.n, node * 7)
            self.assertEqual(code.m, math.ceil(code.n / 2))
            self.assertLess(code.m, code.n)
            np.testing.assert_allclose(code.E, code.A.T @ code.A - np.eye(code.n), atol=1e-12)
            self.assertGreaterEqual(code.L, np.linalg.eigvalsh(code.A.T @ code.A).max())

    def test_exact_recovery_identity(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.choice([14, 21, 28]))
            A = init_measurement(n // 2, n, seed=int(rng.integers(1 << 31)))
            alpha = np.zeros(n)
            alpha[rng.choice(n, size=2, replace=False)] = rng.normal(size=2)
            b = A @ alpha
            E = A.T @ A - np.eye(n)
            outputs = [Tensor(rng.normal(size=(3, 2, 2, 2))) for _ in range(n)]
            relaxed = relaxed_node_output(Tensor(b), alpha, A, E, outputs)
            direct = sum(a * o.data for a, o in zip(alpha, outputs))
            np.testing.assert_allclose(relaxed.data, direct, atol=1e-8)

    def test_zero_code_zero_output(self):
        code = self.arch.codes[0]
        outputs = [Tensor(np.ones((2, 3))) for _ in range(code.n)]
        out = relaxed_node_output(Tensor(np.zeros(code.m)), np.zeros(code.n), code.A, code.E, outputs)
        np.testing.assert_array_equal(out.data, np.zeros((2, 3)))

    def test_mismatched_outputs_rejected(self):
        code = self.arch.codes[0]
        with self.assertRaises(ShapeError):
            relaxed_node_output(Tensor(code.b), code.alpha, code.A, code.E, [Tensor(np.ones(2))] * 3)

    def test_gradient_reaches_code(self):
        rng = np.random.default_rng(4)
        code = self.arch.codes[1]
        b = Tensor(code.b, requires_grad=True)
        outputs = [Tensor(rng.normal(size=(2, 3))) for _ in range(code.n)]
        weights = Tensor(rng.normal(size=(2, 3)))

        def loss():
            return (relaxed_node_output(b, code.alpha, code.A, code.E, outputs) * weights).sum()

        self.assertLess(finite_diff_check(loss, [b]), 1e-4)

    def test_zero_gradient_keeps_state(self):
        arch = ArchState.initialize(CellSpace(num_nodes=1), np.random.default_rng(2), lam=1e-2,
                                    max_iters=10**6, tol=1e-13)
        after = update_b(arch, [np.zeros(code.m) for code in arch.codes], lr=0.1)
        for before, code in zip(arch.codes, after.codes):
            np.testing.assert_array_equal(code.b, before.b)
            np.testing.assert_allclose(code.alpha, before.alpha, atol=1e-8)

    def test_support_changes_only_across_shrinkage_boundary(self):
        lam = 0.1
        code = NodeCode.from_matrix(np.eye(1), [0.05], lam=lam)
        arch = ArchState(space=CellSpace(num_nodes=1), codes=(code,), lam=lam)
        self.assertEqual(arch.codes[0].alpha[0], 0.0)

        inside = update_b(arch, [np.array([-0.04])], lr=1.0)
        self.assertAlmostEqual(inside.codes[0].b[0], 0.09)
        self.assertEqual(inside.codes[0].alpha[0], 0.0)

        across = update_b(inside, [np.array([-0.06])], lr=1.0)
        self.assertAlmostEqual(across.codes[0].b[0], 0.15)
        self.assertAlmostEqual(across.codes[0].alpha[0], 0.05, places=12)

    def test_dominant_op_wins_identity_fit(self):
        wins = sum(self._identity_fit(seed) for seed in range(10))
        self.assertGreaterEqual(wins, 9)

    def _identity_fit(self, seed, steps=200, lr=0.005):
        """Node 2 fits input 0 and node 3 fits input 1; identity on those edges is the only clean op."""
        rng = np.random.default_rng(seed)
        space = CellSpace(num_nodes=2)
        arch = ArchState.initialize(space, rng, m_ratio=0.75, b_init_std=0.1, lam=1e-3, max_iters=500)
        inputs = [rng.normal(size=256), rng.normal(size=256)]
        noise = {node: [rng.normal(scale=2.0, size=256) for _ in range(space.num_slots(node))]
                 for node in space.nodes}
        targets = dict(zip(space.nodes, inputs))
        for _ in range(steps):
            codes = arch.b_tensors()
            with Graph() as graph:
                states = [Tensor(inputs[0]), Tensor(inputs[1])]
                loss = 0.0
                for node, code, b in zip(space.nodes, arch.codes, codes):
                    outputs = []
                    for slot in range(space.num_slots(node)):
                        predecessor, op = space.decode(slot)
                        base = states[predecessor]
                        outputs.append(base if op == 'identity' else base + noise[node][slot])
                    out = relaxed_node_output(b, code.alpha, code.A, code.E, outputs)
                    states.append(out)
                    diff = out - targets[node]
                    loss = (diff * diff).mean() + loss
                graph.backward(loss)
            arch = update_b(arch, [b.grad for b in codes], lr)
        return all(int(np.argmax(np.abs(code.alpha))) == space.slot(predecessor, 'identity')
                   for code, predecessor in zip(arch.codes, (0, 1)))

    def test_alpha_entropy(self):
        self.assertEqual(alpha_entropy([np.array([0.0, 2.0, 0.0])]), 0.0)
        self.assertAlmostEqual(alpha_entropy([np.full(4, -0.5)]), math.log(4))
        self.assertEqual(alpha_entropy([np.zeros(3)]), 0.0)


class ExtractChildTests(SimpleTestCase):
    def setUp(self):
        self.space = CellSpace(num_nodes=4)

    def test_one_nonzero_slot_per_node(self):
        rng = np.random.default_rng(0)
        alphas, chosen = [], {}
        for node in self.space.nodes:
            alpha = np.zeros(self.space.num_slots(node))
            slot = int(rng.integers(alpha.size))
            alpha[slot] = 0.7
            alphas.append(alpha)
            chosen[node] = self.space.decode(slot)
        genotype = extract_child(alphas, self.space)
        for node in self.space.nodes:
            self.assertIn(chosen[node], [(e.predecessor, e.op) for e in genotype.edges_for(node)])
            self.assertEqual(len(genotype.edges_for(node)), 2)

    def test_tie_goes_to_catalog_order(self):
        alpha = np.zeros(14)
        alpha[self.space.slot(0, 'avg_pool_3x3')] = 0.5
        alpha[self.space.slot(0, 'dil_conv_3x3')] = -0.5
        alpha[self.space.slot(1, 'identity')] = 0.2
        genotype = extract_child([alpha], CellSpace(num_nodes=1))
        self.assertEqual(genotype.edges_for(2)[0].op, 'dil_conv_3x3')

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            alphas = [rng.normal(size=self.space.num_slots(node)) * (rng.random(self.space.num_slots(node)) < 0.4)
                      for node in self.space.nodes]
            genotype = extract_child(alphas, self.space)
            self.assertEqual(genotype.structure(), self._brute_force(alphas))
            self.assertEqual(extract_child(alphas, self.space), genotype)

    def _brute_force(self, alphas):
        out = []
        for node, alpha in zip(self.space.nodes, alphas):
            def edge_strength(pred):
                return max(abs(alpha[pred * 7 + k]) for k in range(7))

            best = max(itertools.combinations(range(node), 2),
                       key=lambda pair: (sorted((edge_strength(p) for p in pair), reverse=True), [-p for p in pair]))
            for pred in best:
                if edge_strength(pred) == 0:
                    out.append((node, pred, 'identity'))
                    continue
                k = min(range(7), key=lambda k: (-abs(alpha[pred * 7 + k]), k))
                out.append((node, pred, PRIMITIVES[k]))
        return tuple(out)

    def test_all_zero_node_falls_back_with_warning(self):
        alphas = [np.zeros(self.space.num_slots(node)) for node in self.space.nodes]
        with self.assertLogs('nas', level='WARNING'):
            genotype = extract_child(alphas, self.space)
        for node in self.space.nodes:
            self.assertEqual([(e.predecessor, e.op) for e in genotype.edges_for(node)],
                             [(0, 'identity'), (1, 'identity')])


class GenotypeTests(SimpleTestCase):
    def setUp(self):
        self.space = CellSpace(num_nodes=2)
        self.spec = NetworkSpec(input_shape=(2,), num_classes=2, channels=8, num_cells=1)

    def _identity_cell(self):
        return Genotype(tuple(GenotypeEdge(node, p, 'identity') for node in self.space.nodes for p in (0, 1)))

    def test_all_identity_counts_only_stem_and_classifier(self):
        fixed = 2 * 8 + 8 + 8 + 8 * 2 + 2
        self.assertEqual(param_count(self._identity_cell(), self.spec), fixed)

    def test_single_sep_conv_edge_hand_count(self):
        base = param_count(self._identity_cell(), self.spec)
        edges = list(self._identity_cell().edges)
        edges[0] = GenotypeEdge(2, 0, 'sep_conv_3x3')
        C = 8
        self.assertEqual(param_count(Genotype(tuple(edges)), self.spec) - base, 2 * (C * 9 + C * C) + 4 * C)
        self.assertEqual(OPS['sep_conv_3x3'].param_count(8), 304)

    def test_replacing_identity_never_shrinks(self):
        base = param_count(self._identity_cell(), self.spec)
        for op in PRIMITIVES:
            edges = list(self._identity_cell().edges)
            edges[1] = GenotypeEdge(2, 1, op)
            self.assertGreaterEqual(param_count(Genotype(tuple(edges)), self.spec), base)

    def test_constraint_boundary(self):
        self.assertTrue(check_constraint(10, 10))
        self.assertFalse(check_constraint(11, 10))
        self.assertTrue(check_constraint(10**9, None))

    def test_arch_state_count_goes_through_extraction(self):
        arch = ArchState.initialize(self.space, np.random.default_rng(1))
        self.assertEqual(param_count(arch, self.spec), param_count(extract_child(arch, self.space), self.spec))

    def test_repair_fits_limit(self):
        edges = tuple(GenotypeEdge(node, p, 'sep_conv_5x5', 0.1 * (node + p)) for node in self.space.nodes for p in (0, 1))
        genotype = Genotype(edges)
        alphas = [np.linspace(-1, 1, self.space.num_slots(node)) for node in self.space.nodes]
        limit = param_count(self._identity_cell(), self.spec) + 600
        with self.assertLogs('nas', level='INFO'):
            repaired = repair_genotype(genotype, alphas, self.space, self.spec, limit)
        self.assertTrue(check_constraint(param_count(repaired, self.spec), limit))
        self.assertLess(sum(OPS[e.op].parametric for e in repaired.edges), 4)
        by_node = dict(zip(self.space.nodes, alphas))
        for edge in repaired.edges:
            if edge.op in PARAMETER_FREE:
                alpha = by_node[edge.node]
                strongest = max(PARAMETER_FREE, key=lambda op: abs(alpha[self.space.slot(edge.predecessor, op)]))
                self.assertEqual(edge.op, strongest)

    def test_impossible_limit_raises(self):
        genotype = Genotype((GenotypeEdge(2, 0, 'sep_conv_3x3'), GenotypeEdge(2, 1, 'identity'),
                             GenotypeEdge(3, 0, 'identity'), GenotypeEdge(3, 2, 'identity')))
        alphas = [np.ones(14), np.ones(21)]
        with self.assertRaises(ConstraintError):
            repair_genotype(genotype, alphas, self.space, self.spec, limit=10)

    def test_text_export(self):
        genotype = Genotype((GenotypeEdge(3, 2, 'max_pool_3x3', -0.25), GenotypeEdge(2, 0, 'identity', 0.5)))
        self.assertEqual(genotype.to_text(), "2,0,identity,0.5\n3,2,max_pool_3x3,-0.25\n")
        self.assertEqual(Genotype.from_text(genotype.to_text()), genotype)

    def test_structural_hash_ignores_alpha(self):
        a = Genotype((GenotypeEdge(2, 0, 'identity', 0.5),))
        b = Genotype((GenotypeEdge(2, 0, 'identity', -3.0),))
        c = Genotype((GenotypeEdge(2, 1, 'identity', 0.5),))
        self.assertEqual(a.structural_hash(), b.structural_hash())
        self.assertNotEqual(a.structural_hash(), c.structural_hash())

    def test_op_share(self):
        genotype = Genotype((GenotypeEdge(2, 0, 'identity'), GenotypeEdge(2, 1, 'identity'),
                             GenotypeEdge(3, 0, 'sep_conv_3x3'), GenotypeEdge(3, 2, 'avg_pool_3x3')))
        self.assertEqual(genotype.op_share(), {'sep_conv_3x3': 0.25, 'avg_pool_3x3': 0.25, 'identity': 0.5})


class SupernetTests(SimpleTestCase):
    def test_child_matches_masked_supernet(self):
        rng = np.random.default_rng(0)
        space = CellSpace(num_nodes=3)
        spec = NetworkSpec(input_shape=(1, 5, 5), num_classes=3, channels=4, num_cells=2)
        net = Supernet(spec, space)
        params = net.init_params(rng)
        x = rng.uniform(size=(2, 1, 5, 5))
        for _ in range(20):
            genotype = _random_genotype(space, rng)
            child = ChildNetwork(net, genotype, params)
            masked = net.forward(params, x, genotype.node_weights(space))
            np.testing.assert_allclose(child.forward(x).data, masked.data, atol=1e-10, rtol=0)
            self.assertEqual(child.param_count(), param_count(genotype, spec))

    def test_param_shapes_cover_every_slot(self):
        space = CellSpace(num_nodes=2)
        spec = NetworkSpec(input_shape=(3,), num_classes=2, channels=4, num_cells=2)
        shapes = Supernet(spec, space).param_shapes()
        per_edge = sum(OPS[op].param_count(4) for op in PRIMITIVES)
        edges = len(space.edges)
        fixed = 3 * 4 + 4 + 4 + 4 * 2 + 2
        self.assertEqual(sum(math.prod(s) for s in shapes.values()), fixed + 2 * edges * per_edge)

    def _supernet_error(self, input_shape, x, seed):
        rng = np.random.default_rng(seed)
        space = CellSpace(num_nodes=2)
        spec = NetworkSpec(input_shape=input_shape, num_classes=2, channels=2, num_cells=1)
        net = Supernet(spec, space)
        params = {name: Tensor(value, requires_grad=True, name=name) for name, value in net.init_params(rng).items()}
        arch = ArchState.initialize(space, rng)
        codes = arch.b_tensors()
        labels = np.array([0, 1])

        def loss():
            return F.cross_entropy(net.forward(params, Tensor(x), arch.relaxed_weights(codes)), labels)

        # truncation error at step 1e-4 is near 1e-9; gradients below 1e-4 are not compared
        return finite_diff_check(loss, list(params.values()) + codes, step=1e-4, min_magnitude=1e-4)

    def test_micro_supernet_gradients(self):
        x = np.random.default_rng(0).normal(size=(2, 3))
        self.assertLess(self._supernet_error((3,), x, seed=1), 1e-4)

    def test_micro_image_supernet_gradients(self):
        x = np.random.default_rng(0).uniform(size=(2, 1, 4, 4))
        self.assertLess(self._supernet_error((1, 4, 4), x, seed=2), 1e-4)
