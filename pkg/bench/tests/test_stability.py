import numpy as np
from django.test import SimpleTestCase

from bench.exceptions import ContractError, DegenerateInputError, ShapeError
from bench.generator import build_generator_spec
from bench.numerics import AdamState, row_normalize
from bench.probe import ProbeModel, target_scores, train_probe
from bench.sampling import RandomStream
from bench.scm import HoldoutRule, default_scm_spec, holdout_mask, sample_latents
from bench.stability import (
    REPORT_HEADER,
    RobustDimsConfig,
    ShiftContext,
    StabilityReport,
    aggregate_reports,
    apply_stable_map,
    ate_estimate,
    deterioration,
    fit_stable_map,
    intervention_pairs,
    kept_dimensions,
    make_unstable_pairs,
    mask_top_k,
    pair_metrics,
    rank_dimensions,
    robust_method_name,
    robust_pair_metrics,
    stable_map_training_pairs,
)


class ShiftFixture:
    """Small seen / hold-out sets rendered through an identity generator"""

    def __init__(self, seen_count=150, holdout_count=2000):
        scm = default_scm_spec()
        rule = HoldoutRule()
        generator = build_generator_spec('identity', scm.num_classes, 8, scm.dim, seed=0)
        self.context = ShiftContext(scm, rule, generator)
        self.seen = sample_latents(scm, rule, 'test-seen', RandomStream(0, 0).fork(1), seen_count)
        self.holdout = sample_latents(scm, rule, 'test-holdout', RandomStream(0, 0).fork(2), holdout_count)
        self.seen_reps = self.encode(self.seen)
        self.holdout_reps = self.encode(self.holdout)
        self.probe = train_probe(self.seen_reps, self.seen.class_ids, scm.num_classes, RandomStream(0, 4),
                                 epochs=20, batch_size=32, optimizer=AdamState(lr=0.05))

    def encode(self, batch):
        return row_normalize(self.context.render(batch))

    def pairs(self, n, rs, **options):
        options.setdefault('pool_encoder', row_normalize)
        return make_unstable_pairs(self.seen, self.seen_reps, self.holdout, self.holdout_reps, self.probe, n,
                                   self.context, rs, **options)


class UnstablePairTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.fixture = ShiftFixture()

    def test_all_subsets_enumerated(self):
        pairs = self.fixture.pairs(1, RandomStream(1))
        self.assertEqual(len(pairs), 8 * len(self.fixture.seen))
        self.assertEqual({names for names in pairs.shifted_vars}, {(n,) for n in self.fixture.context.scm.eligible_names})
        np.testing.assert_array_equal(pairs.class_ids, np.tile(self.fixture.seen.class_ids, 8))

    def test_unstable_member_is_same_class_and_in_range_on_shifted_vars(self):
        fixture = self.fixture
        scm, anchors = fixture.context.scm, fixture.context.generator.anchors
        for n, subsets in ((1, 'random'), (2, 'all'), (2, 'random'), (3, 'random'), (4, 'random')):
            pairs = fixture.pairs(n, RandomStream(2), subsets=subsets)
            mask = holdout_mask(scm, fixture.context.rule, pairs.unstable_latents)
            for i, names in enumerate(pairs.shifted_vars):
                self.assertEqual(len(names), n)
                self.assertTrue(mask[i, [scm.index(name) for name in names]].all(), msg=(n, names))
            np.testing.assert_array_equal(pairs.unstable_observations[:, :anchors.shape[1]], anchors[pairs.class_ids])
            np.testing.assert_allclose(pairs.unstable_reps, row_normalize(pairs.unstable_observations), atol=1e-12)

    def test_in_range_holdout_rows_are_used_when_enough(self):
        fixture = self.fixture
        pairs = fixture.pairs(1, RandomStream(2), subsets='random', pool_encoder=None)
        rows = [int(np.flatnonzero((fixture.holdout.values == u).all(axis=1))[0]) for u in pairs.unstable_latents]
        np.testing.assert_array_equal(fixture.holdout.class_ids[rows], pairs.class_ids)

    def test_insufficient_in_range_samples(self):
        fixture = self.fixture
        small = fixture.holdout[np.arange(20)]
        with self.assertRaisesMessage(DegenerateInputError, 'insufficient class-matched hold-out samples'):
            make_unstable_pairs(fixture.seen, fixture.seen_reps, small, fixture.encode(small), fixture.probe, 3,
                                fixture.context, RandomStream(3))

        rows = np.flatnonzero(np.isin(fixture.seen.class_ids, small.class_ids))
        pairs = make_unstable_pairs(fixture.seen[rows], fixture.seen_reps[rows], small, fixture.encode(small),
                                    fixture.probe, 3, fixture.context, RandomStream(3), num_neighbors=1,
                                    subsets='random', pool_encoder=row_normalize)
        self.assertEqual(len(pairs), rows.size)
        mask = holdout_mask(fixture.context.scm, fixture.context.rule, pairs.unstable_latents)
        for i, names in enumerate(pairs.shifted_vars):
            self.assertTrue(mask[i, [fixture.context.scm.index(name) for name in names]].all())

    def test_worst_selection_never_beats_random(self):
        fixture = self.fixture
        worst = fixture.pairs(2, RandomStream(3), subsets='random', selection='worst')
        random = fixture.pairs(2, RandomStream(3), subsets='random', selection='random')
        worst_scores = target_scores(fixture.probe, worst.unstable_reps, worst.class_ids)
        random_scores = target_scores(fixture.probe, random.unstable_reps, random.class_ids)
        self.assertTrue(np.all(worst_scores <= random_scores + 1e-12))

    def test_children_set_limits_subsets(self):
        pairs = self.fixture.pairs(5, RandomStream(4), variable_set='children')
        self.assertEqual(set(pairs.shifted_vars), {tuple(self.fixture.context.scm.children_names)})
        with self.assertRaises(ContractError):
            self.fixture.pairs(6, RandomStream(4), variable_set='children')

    def test_invalid_arguments(self):
        with self.assertRaises(ContractError):
            self.fixture.pairs(0, RandomStream(0))
        with self.assertRaises(ContractError):
            self.fixture.pairs(1, RandomStream(0), selection='best')

    def test_deterioration_is_metric_difference(self):
        pairs = self.fixture.pairs(1, RandomStream(5), subsets='random')
        stable, unstable = pair_metrics(pairs, self.fixture.probe, 'score')
        self.assertAlmostEqual(deterioration(pairs, self.fixture.probe, 'score'), stable.mean() - unstable.mean())

    def test_full_mask_matches_plain_metrics(self):
        pairs = self.fixture.pairs(1, RandomStream(6), subsets='random')
        for source in ('true-class', 'predicted-class'):
            robust = robust_pair_metrics(pairs, self.fixture.probe, RobustDimsConfig(100.0, source), 'accuracy')
            plain = pair_metrics(pairs, self.fixture.probe, 'accuracy')
            np.testing.assert_array_equal(robust[0], plain[0])
            np.testing.assert_array_equal(robust[1], plain[1])

    def test_stable_map_training_pairs(self):
        pairs = stable_map_training_pairs(
            self.fixture.seen, self.fixture.seen_reps, self.fixture.holdout, self.fixture.holdout_reps,
            self.fixture.probe, self.fixture.context, RandomStream(7),
        )
        self.assertEqual(len(pairs), len(self.fixture.seen))
        self.assertTrue(all(len(names) == 1 for names in pairs.shifted_vars))

    def test_intervention_pairs_and_ate(self):
        fixture = self.fixture
        control, treated = intervention_pairs(fixture.seen, ('hue_spl',), fixture.context, RandomStream(8))
        np.testing.assert_array_equal(control.values, fixture.seen.values)
        column = fixture.context.scm.index('hue_spl')
        self.assertTrue(np.all(np.abs(treated.values[:, column]) >= 0.8))

        result = ate_estimate(fixture.probe, fixture.seen_reps, fixture.encode(treated), control.class_ids,
                              RandomStream(9), resamples=200)
        self.assertLessEqual(result.low, result.estimate)
        self.assertLessEqual(result.estimate, result.high)
        self.assertEqual(result.count, len(fixture.seen))

        same = ate_estimate(fixture.probe, fixture.seen_reps, fixture.seen_reps, control.class_ids,
                            RandomStream(9), resamples=50)
        self.assertEqual((same.estimate, same.low, same.high), (0.0, 0.0, 0.0))


class RobustDimensionTests(SimpleTestCase):

    def test_kept_dimension_counts(self):
        self.assertEqual(kept_dimensions(128, 50), 64)
        self.assertEqual(kept_dimensions(128, 90), 116)
        self.assertEqual(kept_dimensions(10, 100), 10)
        self.assertEqual(kept_dimensions(3, 10), 1)

    def test_ranking_by_contribution_with_stable_ties(self):
        probe = ProbeModel(np.array([[1.0, 0.0], [2.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
        ranking = rank_dimensions(probe, np.array([1.0, 1.0, 1.0, 1.0]), 0)
        np.testing.assert_array_equal(ranking, [1, 0, 2, 3])

    def test_mask_keeps_top_coordinates(self):
        rep = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(mask_top_k(rep, np.array([3, 1, 0, 2]), 50), [0.0, 0.2, 0.0, 0.4])
        np.testing.assert_array_equal(mask_top_k(rep, np.arange(4), 100), rep)
        with self.assertRaises(ContractError):
            mask_top_k(rep, np.arange(4), 0)

    def test_invalid_config(self):
        with self.assertRaises(ContractError):
            RobustDimsConfig(120.0)
        with self.assertRaises(ContractError):
            RobustDimsConfig(50.0, 'oracle')

    def test_method_names(self):
        self.assertEqual(robust_method_name(90), 'robust_k90')
        self.assertEqual(robust_method_name(12.5), 'robust_k12.5')


class StableMapTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.unstable = row_normalize(rng.normal(size=(200, 4)))
        self.F = 0.2 * rng.normal(size=(4, 4))
        self.bias = 0.1 * rng.normal(size=4)
        self.stable = self.unstable + self.unstable @ self.F + self.bias

    def test_lstsq_recovers_affine_residual(self):
        stable_map = fit_stable_map(self.unstable, self.stable, RandomStream(0), method='lstsq')
        np.testing.assert_allclose(stable_map.F, self.F, atol=1e-8)
        np.testing.assert_allclose(stable_map.bias, self.bias, atol=1e-8)

    def test_lstsq_with_fewer_pairs_than_dimensions(self):
        stable_map = fit_stable_map(self.unstable[:2], self.stable[:2], RandomStream(0), method='lstsq')
        self.assertEqual(stable_map.F.shape, (4, 4))
        self.assertTrue(np.all(np.isfinite(stable_map.F)))

    def test_adam_reduces_residual(self):
        stable_map = fit_stable_map(self.unstable, self.stable, RandomStream(1), epochs=100, batch_size=50,
                                    optimizer=AdamState(lr=1e-2, weight_decay=0.0))
        target = self.stable - self.unstable
        before = np.mean(np.sum(target ** 2, axis=1))
        after = np.mean(np.sum((stable_map.residual(self.unstable) - target) ** 2, axis=1))
        self.assertLess(after, 0.1 * before)

    def test_apply_normalizes(self):
        stable_map = fit_stable_map(self.unstable, self.stable, RandomStream(0), method='lstsq')
        mapped = apply_stable_map(stable_map, self.unstable)
        np.testing.assert_allclose(np.linalg.norm(mapped, axis=1), 1.0)
        np.testing.assert_allclose(apply_stable_map(stable_map, self.unstable[0]), mapped[0])

    def test_errors(self):
        with self.assertRaises(ShapeError):
            fit_stable_map(self.unstable, self.stable[:, :3], RandomStream(0))
        with self.assertRaises(ContractError):
            fit_stable_map(self.unstable, self.stable, RandomStream(0), method='svd')


class ReportTests(SimpleTestCase):

    def test_pair_metric_rows(self):
        report = StabilityReport('simclr', 'box', 0)
        report.add_pair_metrics(1, 'none', 'accuracy', np.array([1.0, 1.0]), np.array([0.0, 1.0]))
        self.assertEqual(report.value(1, 'none', 'accuracy_deterioration'), 0.5)
        self.assertEqual(len(report.to_rows()[0]), len(REPORT_HEADER))
        with self.assertRaises(KeyError):
            report.value(2, 'none', 'accuracy_stable')

    def test_aggregate_across_seeds(self):
        reports = []
        for seed, value in enumerate((0.2, 0.4, 0.6)):
            report = StabilityReport('simclr', 'box', seed)
            report.add(1, 'none', 'accuracy_deterioration', value)
            reports.append(report)
        (row,) = aggregate_reports(reports)
        self.assertAlmostEqual(row.value, 0.4)
        self.assertAlmostEqual(row.stderr, 0.2 / np.sqrt(3))
        self.assertEqual(row.seed, 'all')
