import numpy as np
from django.test import SimpleTestCase
from scipy.special import logsumexp

from bench.exceptions import ContractError, DegenerateInputError, NumericError, SingularMatrixError
from bench.numerics import (
    AdamState,
    CompGraph,
    adam_step,
    as_matrix,
    backward,
    gradient_check,
    gram_deviation,
    least_squares,
    row_normalize,
)


class CompGraphGradientTests(SimpleTestCase):
    """Reverse-mode gradients against central finite differences"""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_mlp_contrastive_style_loss(self):
        x = self.rng.normal(size=(6, 4))
        mask = ~np.eye(6, dtype=bool)
        index = np.array([0, 1, 2, 3, 4, 0])

        def build(graph, nodes):
            h = graph.leaky_relu(graph.add(graph.matmul(graph.constant(x), nodes['W']), nodes['b']), 0.2)
            z = graph.row_normalize(h)
            similarity = graph.scale(graph.matmul(z, graph.transpose(z)), 1.0 / 0.5)
            lse = graph.mean(graph.logsumexp(similarity, mask))
            picked = graph.gather(graph.standardize_columns(h), index)
            penalty = graph.mean(graph.log(graph.shift(graph.square(picked), 1.0)))
            return graph.add(lse, penalty)

        for _ in range(5):
            params = {'W': self.rng.normal(size=(4, 5)), 'b': self.rng.normal(size=(1, 5))}
            self.assertLess(gradient_check(build, params), 1e-4)

    def test_elementwise_and_reduction_ops(self):
        def build(graph, nodes):
            a = nodes['A']
            gram = graph.matmul(graph.transpose(a), a)
            trace = graph.sum(graph.diag(gram))
            rows = graph.row_sum(graph.mul(a, graph.exp(graph.scale(a, 0.1))))
            dots = graph.rowdot(a, graph.sub(a, graph.constant(np.ones((3, 4)))))
            return graph.add(graph.scale(trace, 0.5), graph.add(graph.mean(rows), graph.mean(dots)))

        for _ in range(5):
            self.assertLess(gradient_check(build, {'A': self.rng.normal(size=(3, 4))}), 1e-4)

    def test_unused_parameter_gets_zero_gradient(self):
        graph = CompGraph()
        used = graph.parameter('used', np.ones(3))
        graph.parameter('unused', np.ones(2))
        grads = backward(graph, graph.sum(graph.square(used)))
        np.testing.assert_allclose(grads['used'], 2.0 * np.ones(3))
        np.testing.assert_array_equal(grads['unused'], np.zeros(2))

    def test_detach_blocks_gradient(self):
        graph = CompGraph()
        w = graph.parameter('w', np.array([2.0]))
        loss = graph.sum(graph.mul(w, graph.detach(w)))
        np.testing.assert_allclose(backward(graph, loss)['w'], [2.0])

    def test_backward_needs_scalar(self):
        graph = CompGraph()
        w = graph.parameter('w', np.ones(3))
        with self.assertRaises(ContractError):
            backward(graph, graph.square(w))

    def test_duplicate_parameter_rejected(self):
        graph = CompGraph()
        graph.parameter('w', np.ones(2))
        with self.assertRaises(ContractError):
            graph.parameter('w', np.ones(2))

    def test_masked_logsumexp_value(self):
        x = self.rng.normal(size=(4, 5))
        mask = self.rng.random((4, 5)) > 0.3
        mask[:, 0] = True
        graph = CompGraph()
        node = graph.logsumexp(graph.constant(x), mask)
        expected = [logsumexp(row[m]) for row, m in zip(x, mask)]
        np.testing.assert_allclose(graph.value(node), expected, atol=1e-12)

    def test_empty_logsumexp_row_rejected(self):
        graph = CompGraph()
        mask = np.ones((2, 3), dtype=bool)
        mask[1] = False
        with self.assertRaises(DegenerateInputError):
            graph.logsumexp(graph.constant(np.zeros((2, 3))), mask)

    def test_zero_row_normalize_rejected(self):
        graph = CompGraph()
        with self.assertRaises(DegenerateInputError):
            graph.row_normalize(graph.constant(np.zeros((2, 3))))
        with self.assertRaises(DegenerateInputError):
            row_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_constant_column_standardize_rejected(self):
        graph = CompGraph()
        x = np.column_stack([np.arange(4.0), np.ones(4)])
        with self.assertRaises(DegenerateInputError):
            graph.standardize_columns(graph.constant(x))


class AdamTests(SimpleTestCase):

    def test_first_step_moves_by_learning_rate(self):
        state = AdamState(lr=0.1, weight_decay=0.0)
        params = {'w': np.array([1.0, -2.0])}
        updated = adam_step(state, params, {'w': np.array([0.5, -3.0])})
        np.testing.assert_allclose(updated['w'], [0.9, -1.9], atol=1e-6)
        np.testing.assert_array_equal(params['w'], [1.0, -2.0])
        self.assertEqual(state.step, 1)

    def test_weight_decay_is_decoupled(self):
        state = AdamState(lr=0.1, weight_decay=0.5)
        updated = adam_step(state, {'w': np.array([1.0])}, {'w': np.array([0.0])})
        np.testing.assert_allclose(updated['w'], [0.95])

    def test_minimizes_quadratic(self):
        state = AdamState(lr=0.05, weight_decay=0.0)
        params = {'w': np.array([3.0, -4.0])}
        for _ in range(2000):
            params = adam_step(state, params, {'w': 2.0 * params['w']})
        np.testing.assert_allclose(params['w'], [0.0, 0.0], atol=0.1)

    def test_state_round_trip(self):
        state = AdamState(lr=0.01)
        adam_step(state, {'w': np.ones(3)}, {'w': np.arange(3.0)})
        copy = AdamState.from_dict(state.to_dict())
        self.assertEqual(copy.to_dict(), state.to_dict())


class LeastSquaresTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_recovers_exact_map(self):
        X = self.rng.normal(size=(50, 3))
        B = self.rng.normal(size=(3, 2))
        fit = least_squares(X, X @ B)
        np.testing.assert_allclose(fit.coef, B, atol=1e-9)
        np.testing.assert_allclose(fit.r2, [1.0, 1.0], atol=1e-9)
        self.assertEqual(fit.ridge, 0.0)

    def test_rank_deficient_design(self):
        x = self.rng.normal(size=(20, 1))
        X = np.hstack([x, x])
        Y = 2.0 * x
        with self.assertRaises(SingularMatrixError):
            least_squares(X, Y, ridge_fallback=False)
        with self.assertLogs('bench.numerics', level='WARNING'):
            fit = least_squares(X, Y)
        self.assertGreater(fit.ridge, 0.0)
        np.testing.assert_allclose(X @ fit.coef, Y, atol=1e-6)

    def test_underdetermined_rejected(self):
        with self.assertRaises(ContractError):
            least_squares(np.ones((2, 3)), np.ones((2, 1)))

    def test_non_finite_input_rejected(self):
        with self.assertRaises(NumericError):
            as_matrix([[1.0, np.nan]])


class GramDeviationTests(SimpleTestCase):

    def test_scaled_semi_orthogonal_is_zero(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(5, 5)))
        self.assertAlmostEqual(gram_deviation(3.0 * q[:3]), 0.0, places=10)

    def test_skewed_map_is_positive(self):
        A = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        self.assertGreater(gram_deviation(A), 0.1)

    def test_tall_matrix_rejected(self):
        with self.assertRaises(ContractError):
            gram_deviation(np.ones((3, 2)))
