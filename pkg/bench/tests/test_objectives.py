import numpy as np
from django.test import SimpleTestCase

from bench.encoders import MocoQueue, SslConfig, build_ssl_model, encode, encode_on, predict_on
from bench.exceptions import ContractError, WarmupRequired
from bench.numerics import gradient_check, row_normalize
from bench.objectives import (
    align_uniform_decompose,
    barlow_node,
    barlow_terms,
    byol_node,
    cross_term_taylor,
    decomposition_gap,
    interleave,
    loss_barlow,
    loss_byol,
    loss_moco,
    loss_simclr,
    loss_simsiam,
    moco_node,
    predictor_decompose,
    simclr_node,
    simsiam_node,
)
from bench.sampling import RandomStream, sample_sphere_uniform

TAU = 0.5


def unit_rows(rng, n, d):
    return row_normalize(rng.normal(size=(n, d)))


def naive_simclr(reps, tau):
    n = reps.shape[0]
    total = 0.0
    for i in range(n):
        partner = i + 1 if i % 2 == 0 else i - 1
        denominator = sum(np.exp(reps[i] @ reps[j] / tau) for j in range(n) if j != i)
        total += -np.log(np.exp(reps[i] @ reps[partner] / tau) / denominator)
    return total / n


class LossValueTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_unit_distance_identity(self):
        u = unit_rows(self.rng, 1000, 6)
        v = unit_rows(self.rng, 1000, 6)
        np.testing.assert_allclose(np.sum((u - v) ** 2, axis=1), 2.0 - 2.0 * np.sum(u * v, axis=1), atol=1e-12)

    def test_simclr_identical_batch_is_log_three(self):
        reps = np.tile(np.array([[1.0, 0.0, 0.0]]), (4, 1))
        self.assertAlmostEqual(loss_simclr(reps, 0.07), np.log(3.0), places=10)

    def test_simclr_matches_naive_loop(self):
        reps = interleave(unit_rows(self.rng, 5, 4), unit_rows(self.rng, 5, 4))
        self.assertAlmostEqual(loss_simclr(reps, TAU), naive_simclr(reps, TAU), places=10)

    def test_simclr_invariant_under_rotation(self):
        reps = interleave(unit_rows(self.rng, 16, 5), unit_rows(self.rng, 16, 5))
        for _ in range(5):
            rotation, _ = np.linalg.qr(self.rng.normal(size=(5, 5)))
            self.assertLess(abs(loss_simclr(reps @ rotation, TAU) - loss_simclr(reps, TAU)), 1e-9)

    def test_simclr_odd_batch_rejected(self):
        with self.assertRaises(ContractError):
            loss_simclr(unit_rows(self.rng, 5, 3), TAU)

    def test_moco_matches_naive_loop_and_enqueues(self):
        queries = unit_rows(self.rng, 3, 4)
        keys = unit_rows(self.rng, 3, 4)
        queue = MocoQueue(6, 4)
        queue.enqueue(unit_rows(self.rng, 6, 4))
        bank = queue.contents()

        expected = 0.0
        for i in range(3):
            positive = np.exp(queries[i] @ keys[i] / TAU)
            negatives = sum(np.exp(queries[i] @ k / TAU) for k in bank)
            expected += -np.log(positive / (positive + negatives))
        self.assertAlmostEqual(loss_moco(queries, keys, queue, TAU), expected / 3, places=10)
        np.testing.assert_array_equal(queue.contents()[:3], keys)

    def test_moco_needs_full_queue(self):
        queue = MocoQueue(6, 4)
        queue.enqueue(unit_rows(self.rng, 2, 4))
        with self.assertRaises(WarmupRequired):
            loss_moco(unit_rows(self.rng, 2, 4), unit_rows(self.rng, 2, 4), queue, TAU)

    def test_byol_matches_naive_loop(self):
        p1, p2 = self.rng.normal(size=(2, 4, 3))
        t1, t2 = unit_rows(self.rng, 4, 3), unit_rows(self.rng, 4, 3)
        q1, q2 = row_normalize(p1), row_normalize(p2)
        expected = 0.5 * (np.mean(np.sum((q1 - t2) ** 2, axis=1)) + np.mean(np.sum((q2 - t1) ** 2, axis=1)))
        self.assertAlmostEqual(loss_byol(p1, p2, t1, t2), expected, places=10)
        self.assertAlmostEqual(loss_byol(t2, t1, t1, t2), 0.0, places=12)

    def test_simsiam_perfect_prediction(self):
        z1, z2 = unit_rows(self.rng, 4, 3), unit_rows(self.rng, 4, 3)
        self.assertAlmostEqual(loss_simsiam(z2, z1, z1, z2), -1.0, places=12)

    def test_simsiam_matches_naive_loop(self):
        p1, p2, z1, z2 = self.rng.normal(size=(4, 6, 3))
        first = second = 0.0
        for i in range(6):
            first += p1[i] @ z2[i] / np.sqrt(p1[i] @ p1[i])
            second += p2[i] @ z1[i] / np.sqrt(p2[i] @ p2[i])
        self.assertAlmostEqual(loss_simsiam(p1, p2, z1, z2), -0.5 * (first / 6 + second / 6), places=10)

    def test_barlow_matches_naive_loop(self):
        r1, r2 = self.rng.normal(size=(2, 12, 4))
        batch, dim = r1.shape

        def standardized(reps, j):
            column = [reps[b, j] for b in range(batch)]
            mean = sum(column) / batch
            std = np.sqrt(sum((value - mean) ** 2 for value in column) / batch)
            return [(value - mean) / std for value in column]

        s1 = [standardized(r1, j) for j in range(dim)]
        s2 = [standardized(r2, j) for j in range(dim)]
        on_diag = off_diag = 0.0
        for i in range(dim):
            for j in range(dim):
                c = sum(s1[i][b] * s2[j][b] for b in range(batch)) / batch
                if i == j:
                    on_diag += (1.0 - c) ** 2
                else:
                    off_diag += c ** 2
        self.assertAlmostEqual(loss_barlow(r1, r2, 0.005), on_diag + 0.005 * off_diag, places=10)
        terms = barlow_terms(r1, r2)
        self.assertAlmostEqual(terms[0], on_diag, places=10)
        self.assertAlmostEqual(terms[1], off_diag, places=10)

    def test_barlow_terms_sum_to_loss(self):
        r1, r2 = self.rng.normal(size=(2, 32, 4))
        on_diag, off_diag = barlow_terms(r1, r2)
        self.assertAlmostEqual(loss_barlow(r1, r2, 0.005), on_diag + 0.005 * off_diag, places=10)

    def test_barlow_diagonal_grows_with_view_noise(self):
        base = self.rng.normal(size=(1000, 4))
        noise = self.rng.normal(size=(1000, 4))
        diagonal, alignment = [], []
        for level in (0.1, 0.5, 1.0, 2.0):
            other = base + level * noise
            diagonal.append(barlow_terms(base, other)[0])
            alignment.append(align_uniform_decompose(row_normalize(base), row_normalize(other), TAU)[0])
        self.assertEqual(diagonal, sorted(diagonal))
        self.assertEqual(alignment, sorted(alignment))


class DecompositionTests(SimpleTestCase):

    def test_gap_shrinks_with_batch_size(self):
        rs = RandomStream(3)
        gaps = []
        for number, batch in enumerate((64, 128, 256)):
            stream = rs.fork(number)
            a = sample_sphere_uniform(8, stream, size=batch)
            b = row_normalize(a + 0.3 * stream.normal(size=a.shape))
            gaps.append(decomposition_gap(a, b, TAU))
        self.assertGreater(gaps[0], gaps[1])
        self.assertGreater(gaps[1], gaps[2])

    def test_alignment_of_identical_views_is_zero(self):
        a = unit_rows(np.random.default_rng(1), 10, 4)
        alignment, _ = align_uniform_decompose(a, a, TAU)
        self.assertEqual(alignment, 0.0)

    def test_uniformity_with_external_pool(self):
        rng = np.random.default_rng(2)
        a = unit_rows(rng, 10, 4)
        pool = np.tile(a[:1], (5, 1))
        _, uniformity = align_uniform_decompose(a, a, TAU, pool=pool)
        self.assertAlmostEqual(uniformity, float(np.mean(a @ a[0] / TAU)), places=10)

    def test_predictor_decomposition_is_exact(self):
        rng = np.random.default_rng(4)
        for objective in ('byol', 'simsiam'):
            config = SslConfig(objective=objective, hidden_dim=8, output_dim=4, depth=2, batch_size=4, queue_size=4)
            model = build_ssl_model(config, 5, RandomStream(5))
            model.params['pred.W'] = model.params['pred.W'] + 0.3 * rng.normal(size=(4, 4))
            if model.has_target:
                model.target['enc.W0'] = model.target['enc.W0'] + 0.1
            x1, x2 = rng.normal(size=(2, 16, 5))
            parts = predictor_decompose(model, x1, x2, objective)
            self.assertLess(parts['residual'], 1e-10)
            self.assertTrue(np.isfinite(cross_term_taylor(model, x1, x2, objective)))

    def test_taylor_cross_term_exact_for_constant_inner_products(self):
        config = SslConfig(objective='byol', hidden_dim=8, output_dim=4, depth=2, batch_size=4, queue_size=4)
        model = build_ssl_model(config, 5, RandomStream(6))
        model.target['enc.W0'] = model.target['enc.W0'] + 0.2
        x = np.tile(np.random.default_rng(7).normal(size=(1, 5)), (6, 1))
        y = np.tile(np.random.default_rng(8).normal(size=(1, 5)), (6, 1))
        exact = predictor_decompose(model, x, y, 'byol')['cross_term']
        self.assertAlmostEqual(cross_term_taylor(model, x, y, 'byol'), exact, places=10)

    def test_predictor_decomposition_needs_predictor(self):
        model = build_ssl_model(SslConfig(hidden_dim=4, output_dim=3, depth=1, batch_size=2, queue_size=2), 3,
                                RandomStream(0))
        with self.assertRaises(ContractError):
            predictor_decompose(model, np.ones((2, 3)), np.ones((2, 3)), 'byol')


class LossGradientTests(SimpleTestCase):
    """Every objective's backward pass against central finite differences"""

    instances = 20

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def model(self, objective, seed):
        config = SslConfig(objective=objective, tau=TAU, hidden_dim=6, output_dim=4, depth=2,
                           batch_size=4, queue_size=8)
        return build_ssl_model(config, 5, RandomStream(seed))

    def check(self, model, build):
        error = gradient_check(build, model.params)
        self.assertLess(error, 1e-4)

    def test_simclr(self):
        for seed in range(self.instances):
            model = self.model('simclr', seed)
            x = interleave(*self.rng.normal(size=(2, 4, 5)))

            def build(graph, nodes):
                return simclr_node(graph, encode_on(graph, nodes, model, graph.constant(x)), TAU)

            self.check(model, build)

    def test_moco(self):
        for seed in range(self.instances):
            model = self.model('moco', seed)
            model.queue.enqueue(unit_rows(self.rng, 8, 4))
            x = self.rng.normal(size=(4, 5))
            keys = unit_rows(self.rng, 4, 4)

            def build(graph, nodes):
                queries = encode_on(graph, nodes, model, graph.constant(x))
                return moco_node(graph, queries, keys, model.queue, TAU)

            self.check(model, build)

    def test_byol(self):
        for seed in range(self.instances):
            model = self.model('byol', seed)
            x1, x2 = self.rng.normal(size=(2, 4, 5))
            t1, t2 = encode(model, x1, which='target'), encode(model, x2, which='target')

            def build(graph, nodes):
                p1 = predict_on(graph, nodes, encode_on(graph, nodes, model, graph.constant(x1)))
                p2 = predict_on(graph, nodes, encode_on(graph, nodes, model, graph.constant(x2)))
                return byol_node(graph, p1, p2, t1, t2)

            self.check(model, build)

    def test_simsiam(self):
        for seed in range(self.instances):
            model = self.model('simsiam', seed)
            x1, x2 = self.rng.normal(size=(2, 4, 5))
            # stop-gradient branches are frozen at the current parameters
            z1, z2 = encode(model, x1), encode(model, x2)

            def build(graph, nodes):
                p1 = predict_on(graph, nodes, encode_on(graph, nodes, model, graph.constant(x1)))
                p2 = predict_on(graph, nodes, encode_on(graph, nodes, model, graph.constant(x2)))
                return simsiam_node(graph, p1, p2, graph.constant(z1), graph.constant(z2))

            self.check(model, build)

    def test_barlow(self):
        for seed in range(self.instances):
            model = self.model('barlow', seed)
            x1, x2 = self.rng.normal(size=(2, 8, 5))

            def build(graph, nodes):
                r1 = encode_on(graph, nodes, model, graph.constant(x1))
                r2 = encode_on(graph, nodes, model, graph.constant(x2))
                return barlow_node(graph, r1, r2, 0.005)

            self.check(model, build)
