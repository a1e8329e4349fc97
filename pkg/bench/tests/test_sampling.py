import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from bench.exceptions import ContractError
from bench.sampling import (
    RandomStream,
    VmfParams,
    sample_sphere_uniform,
    sample_truncnorm,
    sample_vmf,
    sample_vmf_batch,
)


class RandomStreamTests(SimpleTestCase):

    def test_same_path_same_sequence(self):
        a = RandomStream(5, 3).fork(2).normal(size=10)
        b = RandomStream(5, 3).fork(2).normal(size=10)
        np.testing.assert_array_equal(a, b)

    def test_forks_are_distinct(self):
        rs = RandomStream(5, 3)
        self.assertFalse(np.array_equal(rs.fork(0).normal(size=10), rs.fork(1).normal(size=10)))
        self.assertFalse(np.array_equal(RandomStream(5, 3).normal(size=10), RandomStream(5, 4).normal(size=10)))

    def test_fork_does_not_consume_parent(self):
        rs = RandomStream(1)
        rs.fork(0).normal(size=100)
        np.testing.assert_array_equal(rs.normal(size=5), RandomStream(1).normal(size=5))

    def test_describe(self):
        self.assertEqual(
            RandomStream(9, 2).fork(4).describe(),
            {'seed': 9, 'stream_id': 2, 'path': [4]},
        )


class SphereTests(SimpleTestCase):

    def test_uniform_points_are_unit(self):
        points = sample_sphere_uniform(4, RandomStream(0), size=200)
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0)

    def test_dimension_one_rejected(self):
        with self.assertRaises(ContractError):
            sample_sphere_uniform(1, RandomStream(0))


class VonMisesFisherTests(SimpleTestCase):

    def test_mean_resultant_matches_closed_form(self):
        mu = np.array([0.0, 0.0, 1.0])
        samples = sample_vmf(VmfParams(mu, 5.0), RandomStream(11), size=100_000)
        expected = 1.0 / np.tanh(5.0) - 1.0 / 5.0
        self.assertAlmostEqual(float((samples @ mu).mean()), expected, delta=0.01)

    def test_zero_concentration_is_uniform(self):
        mu = np.array([1.0, 0.0, 0.0])
        samples = sample_vmf(VmfParams(mu, 0.0), RandomStream(12), size=50_000)
        self.assertAlmostEqual(float((samples @ mu).mean()), 0.0, delta=0.03)

    def test_batch_draws_follow_their_own_means(self):
        rs = RandomStream(13)
        mus = sample_sphere_uniform(6, rs.fork(0), size=500)
        samples = sample_vmf_batch(mus, 200.0, rs.fork(1))
        np.testing.assert_allclose(np.linalg.norm(samples, axis=1), 1.0)
        self.assertGreater(float(np.sum(samples * mus, axis=1).min()), 0.8)

    def test_invalid_parameters_rejected(self):
        with self.assertRaises(ContractError):
            VmfParams(np.array([1.0, 1.0]), 1.0)
        with self.assertRaises(ContractError):
            VmfParams(np.array([1.0, 0.0]), -1.0)
        with self.assertRaises(ContractError):
            sample_vmf_batch(np.ones(3), 1.0, RandomStream(0))


class TruncatedNormalTests(SimpleTestCase):

    def test_matches_rejection_oracle(self):
        mu, sigma, lo, hi = 0.3, 0.5, -0.2, 0.9
        draws = sample_truncnorm(mu, sigma, lo, hi, RandomStream(21), size=20_000)
        self.assertTrue(np.all((draws >= lo) & (draws <= hi)))

        edges = np.linspace(lo, hi, 11)
        observed, _ = np.histogram(draws, bins=edges)
        a, b = (lo - mu) / sigma, (hi - mu) / sigma
        expected = np.diff(stats.truncnorm.cdf(edges, a, b, loc=mu, scale=sigma)) * draws.size
        _, p_value = stats.chisquare(observed, expected * observed.sum() / expected.sum())
        self.assertGreater(p_value, 0.001)

    def test_far_tail_uses_inverse_cdf(self):
        mu, sigma, lo, hi = 0.0, 0.1, 0.5, 1.0
        draws = sample_truncnorm(mu, sigma, lo, hi, RandomStream(22), size=5_000)
        self.assertTrue(np.all((draws >= lo) & (draws <= hi)))
        expected = stats.truncnorm.mean((lo - mu) / sigma, (hi - mu) / sigma, loc=mu, scale=sigma)
        self.assertAlmostEqual(float(draws.mean()), float(expected), delta=0.005)

    def test_broadcasts_per_element_bounds(self):
        lo = np.array([-1.0, 0.0, 0.5])
        hi = np.array([-0.5, 0.2, 1.0])
        draws = sample_truncnorm(0.0, 0.5, lo, hi, RandomStream(23))
        self.assertEqual(draws.shape, (3,))
        self.assertTrue(np.all((draws >= lo) & (draws <= hi)))

    def test_scalar_draw(self):
        self.assertIsInstance(sample_truncnorm(0.0, 1.0, -1.0, 1.0, RandomStream(24)), float)

    def test_empty_interval_rejected(self):
        with self.assertRaises(ContractError):
            sample_truncnorm(0.0, 1.0, 0.5, 0.5, RandomStream(0))
