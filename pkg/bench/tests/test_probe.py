import numpy as np
from django.test import SimpleTestCase

from bench.exceptions import ContractError, DegenerateInputError, ShapeError
from bench.numerics import AdamState, gradient_check
from bench.probe import (
    ProbeModel,
    accuracy,
    cross_entropy_node,
    predict_classes,
    predict_score,
    predict_scores,
    target_scores,
    train_probe,
)
from bench.sampling import RandomStream


def clustered(rng, per_class=100, num_classes=3, dim=4, spread=0.1):
    centers = np.eye(dim)[:num_classes]
    labels = np.repeat(np.arange(num_classes), per_class)
    reps = centers[labels] + spread * rng.normal(size=(labels.size, dim))
    return reps, labels


class ProbeGradientTests(SimpleTestCase):

    def test_cross_entropy_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            reps = rng.normal(size=(6, 4))
            labels = rng.integers(0, 3, size=6)
            params = {'W': rng.normal(size=(4, 3)), 'b': rng.normal(size=3)}

            def build(graph, nodes):
                return cross_entropy_node(graph, graph.constant(reps), nodes['W'], nodes['b'], labels)

            self.assertLess(gradient_check(build, params), 1e-4)


class TrainProbeTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_separable_clusters(self):
        reps, labels = clustered(self.rng)
        probe = train_probe(reps, labels, 3, RandomStream(0), epochs=30, batch_size=32,
                            optimizer=AdamState(lr=0.05))
        self.assertGreater(accuracy(probe, reps, labels), 0.95)
        self.assertEqual(probe.missing_classes, [])

    def test_inputs_untouched_and_deterministic(self):
        reps, labels = clustered(self.rng)
        original = reps.copy()
        first = train_probe(reps, labels, 3, RandomStream(2), epochs=2)
        second = train_probe(reps, labels, 3, RandomStream(2), epochs=2)
        np.testing.assert_array_equal(reps, original)
        np.testing.assert_array_equal(first.W, second.W)

    def test_missing_class_is_recorded(self):
        reps, labels = clustered(self.rng, num_classes=2)
        with self.assertLogs('bench.probe', level='WARNING'):
            probe = train_probe(reps, labels, 4, RandomStream(3), epochs=1)
        self.assertEqual(probe.missing_classes, [2, 3])
        self.assertEqual(probe.num_classes, 4)

    def test_invalid_labels(self):
        with self.assertRaises(ContractError):
            train_probe(np.ones((2, 3)), [0, 5], 3, RandomStream(0))
        with self.assertRaises(ShapeError):
            train_probe(np.ones((2, 3)), [0], 3, RandomStream(0))


class PredictionTests(SimpleTestCase):

    def setUp(self):
        self.probe = ProbeModel(np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]), np.zeros(3))

    def test_scores_are_probabilities(self):
        scores = predict_scores(self.probe, np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_allclose(scores.sum(axis=1), 1.0)
        self.assertTrue(np.all(scores > 0))

    def test_ties_go_to_lowest_class(self):
        zero = ProbeModel(np.zeros((2, 3)), np.zeros(3))
        np.testing.assert_array_equal(predict_classes(zero, np.ones((4, 2))), [0, 0, 0, 0])
        self.assertAlmostEqual(predict_score(zero, np.ones(2), 2), 1.0 / 3.0)

    def test_target_scores_pick_own_label(self):
        reps = np.array([[3.0, 0.0], [0.0, 3.0]])
        scores = predict_scores(self.probe, reps)
        np.testing.assert_allclose(target_scores(self.probe, reps, [0, 1]), [scores[0, 0], scores[1, 1]])
        self.assertEqual(accuracy(self.probe, reps, [0, 1]), 1.0)

    def test_errors(self):
        with self.assertRaises(ContractError):
            predict_score(self.probe, np.ones(2), 3)
        with self.assertRaises(ShapeError):
            predict_scores(self.probe, np.ones((1, 3)))
        with self.assertRaises(DegenerateInputError):
            accuracy(self.probe, np.zeros((0, 2)), [])

    def test_dict_round_trip(self):
        probe = ProbeModel(self.probe.W, self.probe.b, 'abc', [1])
        copy = ProbeModel.from_dict(probe.to_dict())
        self.assertEqual(copy.to_dict(), probe.to_dict())
