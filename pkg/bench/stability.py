"""
Unstable shifts, deterioration and the two remedies

- make_unstable_pairs: shift n eligible variables of seen test latents into
  their hold-out ranges and match each with its worst nearby hold-out sample
  that is in range on the same variables
- deterioration: stable metric minus unstable metric
- Robust Dimensions: keep the top-k% classifier contributions of a representation
- Stable Inference Mapping: affine residual map F fitted on n=1 pairs
- ate_estimate: paired treatment effect with a bootstrap interval
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from bench.exceptions import ContractError, DegenerateInputError, NumericError, ShapeError
from bench.generator import embed_batch, generate
from bench.numerics import AdamState, CompGraph, adam_step, as_matrix, backward, least_squares, row_normalize
from bench.probe import predict_classes, target_scores
from bench.scm import InterventionSpec, LatentBatch, do_intervene_batch, holdout_mask, nearest_neighbors_batch

logger = logging.getLogger(__name__)

METRICS = ('accuracy', 'score')
VARIABLE_SETS = ('eligible', 'children')
SELECTIONS = ('worst', 'random')
RANKING_SOURCES = ('true-class', 'predicted-class')

REPORT_HEADER = ['objective', 'geometry', 'n', 'method', 'metric', 'value', 'stderr', 'seed']


@dataclass
class ShiftContext:
    """The generative pieces needed to shift latents and render them"""
    scm: object
    rule: object
    generator: object

    def render(self, batch):
        return generate(embed_batch(batch, self.generator), self.generator)


# =============================================================================
# UNSTABLE PAIRS
# =============================================================================

@dataclass
class UnstablePair:
    class_id: int
    shifted_vars: tuple
    stable_latent: np.ndarray
    stable_observation: np.ndarray
    stable_rep: np.ndarray
    unstable_latent: np.ndarray
    unstable_observation: np.ndarray
    unstable_rep: np.ndarray

    @property
    def delta_z(self):
        return self.unstable_latent - self.stable_latent


@dataclass
class UnstablePairs:
    """Row-aligned arrays of stable and unstable members; pairs[i] is one UnstablePair"""
    class_ids: np.ndarray
    shifted_vars: list
    stable_latents: np.ndarray
    stable_observations: np.ndarray
    stable_reps: np.ndarray
    unstable_latents: np.ndarray
    unstable_observations: np.ndarray
    unstable_reps: np.ndarray

    def __len__(self):
        return len(self.class_ids)

    def __getitem__(self, index):
        return UnstablePair(
            class_id=int(self.class_ids[index]),
            shifted_vars=self.shifted_vars[index],
            stable_latent=self.stable_latents[index],
            stable_observation=self.stable_observations[index],
            stable_rep=self.stable_reps[index],
            unstable_latent=self.unstable_latents[index],
            unstable_observation=self.unstable_observations[index],
            unstable_rep=self.unstable_reps[index],
        )

    @classmethod
    def concatenate(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise DegenerateInputError("no unstable pairs to combine")
        return cls(
            class_ids=np.concatenate([p.class_ids for p in parts]),
            shifted_vars=[names for p in parts for names in p.shifted_vars],
            stable_latents=np.concatenate([p.stable_latents for p in parts]),
            stable_observations=np.concatenate([p.stable_observations for p in parts]),
            stable_reps=np.concatenate([p.stable_reps for p in parts]),
            unstable_latents=np.concatenate([p.unstable_latents for p in parts]),
            unstable_observations=np.concatenate([p.unstable_observations for p in parts]),
            unstable_reps=np.concatenate([p.unstable_reps for p in parts]),
        )


def candidate_variables(scm, variable_set='eligible'):
    if variable_set == 'eligible':
        return scm.eligible_names
    if variable_set == 'children':
        return scm.children_names
    raise ContractError(f"unknown variable set {variable_set!r}")


@dataclass
class _ShiftPool:
    class_ids: np.ndarray
    values: np.ndarray
    observations: np.ndarray
    reps: np.ndarray

    def latents(self, geometry):
        return LatentBatch(self.class_ids, self.values, geometry)

    def short_classes(self, queries, k):
        classes, counts = np.unique(self.class_ids, return_counts=True)
        available = dict(zip(classes.tolist(), counts.tolist()))
        return [c for c in np.unique(queries.class_ids).tolist() if available.get(c, 0) < k]

    def extend(self, latents, observations, reps):
        return _ShiftPool(
            np.concatenate([self.class_ids, latents.class_ids]),
            np.concatenate([self.values, latents.values]),
            np.concatenate([self.observations, observations]),
            np.concatenate([self.reps, reps]),
        )


def _shift_pool(subset, queries, holdout, holdout_x, holdout_reps, in_range, k, context, pool_encoder, rs):
    """
    Hold-out latents in hold-out range on every variable of `subset`.

    When a queried class has fewer than k of them, the hold-out set is
    intervened on `subset` and the encoded result joins the pool.
    """
    rows = np.flatnonzero(in_range)
    pool = _ShiftPool(holdout.class_ids[rows], holdout.values[rows], holdout_x[rows], holdout_reps[rows])
    short = pool.short_classes(queries, k)
    if short and pool_encoder is not None:
        extra = do_intervene_batch(holdout, InterventionSpec(subset), context.scm, context.rule, rs)
        extra_x = context.render(extra)
        pool = pool.extend(extra, extra_x, as_matrix(pool_encoder(extra_x), 'pool representations'))
        logger.debug("Added %d intervened hold-out latents for %s", len(extra), subset)
        short = pool.short_classes(queries, k)
    if short:
        raise DegenerateInputError(
            f"insufficient class-matched hold-out samples in range on {subset} for classes {short}; need {k} each"
        )
    return pool


def make_unstable_pairs(seen, seen_reps, holdout, holdout_reps, probe, n, context, rs,
                        num_neighbors=5, subsets='all', variable_set='eligible', selection='worst',
                        pool_encoder=None):
    """
    Build one unstable partner per (seen point, subset).

    subsets='all' enumerates every n-subset of the candidate variables for
    every seen point; subsets='random' draws one subset per seen point.
    Each shifted latent is matched with its num_neighbors nearest hold-out
    latents of the same class among those in hold-out range on every
    shifted variable. selection='worst' keeps the neighbour with the lowest
    prediction score (ties to the nearest), selection='random' a uniformly
    drawn neighbour.

    pool_encoder maps observations to representations. With it, a subset
    whose in-range pool is too small for some class is topped up by
    intervening the hold-out set on that subset; without it, or when the
    topped-up pool is still too small, DegenerateInputError is raised.
    """
    names = candidate_variables(context.scm, variable_set)
    if not 1 <= n <= len(names):
        raise ContractError(f"n must lie in [1, {len(names)}] for the {variable_set} set, got {n}")
    if selection not in SELECTIONS:
        raise ContractError(f"unknown neighbour selection {selection!r}")
    if len(seen) == 0 or len(holdout) == 0:
        raise DegenerateInputError("unstable pairs need nonempty seen and hold-out sets")
    seen_reps = as_matrix(seen_reps, 'seen representations')
    holdout_reps = as_matrix(holdout_reps, 'hold-out representations')
    if seen_reps.shape[0] != len(seen) or holdout_reps.shape[0] != len(holdout):
        raise ShapeError("representations must be row-aligned with their latents")

    all_subsets = list(combinations(names, n))
    if subsets == 'all':
        groups = [(subset, np.arange(len(seen))) for subset in all_subsets]
    elif subsets == 'random':
        assignment = rs.integers(0, len(all_subsets), size=len(seen))
        groups = [(all_subsets[i], np.flatnonzero(assignment == i)) for i in range(len(all_subsets))]
    else:
        raise ContractError(f"unknown subset mode {subsets!r}")

    holdout_flags = holdout_mask(context.scm, context.rule, holdout.values)
    stable_x = context.render(seen)
    holdout_x = context.render(holdout)

    parts = []
    for number, (subset, rows) in enumerate(groups):
        if not rows.size:
            continue
        stream = rs.fork(number)
        queries = do_intervene_batch(seen[rows], InterventionSpec(subset), context.scm, context.rule, stream)
        columns = [context.scm.index(name) for name in subset]
        pool = _shift_pool(
            subset, queries, holdout, holdout_x, holdout_reps, holdout_flags[:, columns].all(axis=1),
            num_neighbors, context, pool_encoder, rs.fork(len(groups) + number),
        )
        neighbours = nearest_neighbors_batch(queries, pool.latents(holdout.geometry), num_neighbors)

        if selection == 'worst':
            flat = neighbours.reshape(-1)
            scores = target_scores(probe, pool.reps[flat], np.repeat(queries.class_ids, num_neighbors))
            pick = np.argmin(scores.reshape(neighbours.shape), axis=1)
        else:
            pick = stream.integers(0, num_neighbors, size=rows.size)
        chosen = neighbours[np.arange(rows.size), pick]

        parts.append(UnstablePairs(
            class_ids=seen.class_ids[rows].copy(),
            shifted_vars=[tuple(subset)] * rows.size,
            stable_latents=seen.values[rows],
            stable_observations=stable_x[rows],
            stable_reps=seen_reps[rows],
            unstable_latents=pool.values[chosen],
            unstable_observations=pool.observations[chosen],
            unstable_reps=pool.reps[chosen],
        ))
    pairs = UnstablePairs.concatenate(parts)
    logger.info("Built %d unstable pairs for n=%d over %d subsets", len(pairs), n, len(groups))
    return pairs


# =============================================================================
# DETERIORATION
# =============================================================================

def per_sample_metric(probe, reps, class_ids, metric):
    """Per-row correctness (accuracy) or own-class probability (score)"""
    if metric == 'accuracy':
        return (predict_classes(probe, reps) == np.asarray(class_ids)).astype(np.float64)
    if metric == 'score':
        return target_scores(probe, reps, class_ids)
    raise ContractError(f"unknown metric {metric!r}")


def pair_metrics(pairs, probe, metric, stable_reps=None, unstable_reps=None):
    """Per-pair (stable, unstable) metric arrays; reps default to the pairs' own"""
    if len(pairs) == 0:
        raise DegenerateInputError("no pairs to evaluate")
    stable_reps = pairs.stable_reps if stable_reps is None else stable_reps
    unstable_reps = pairs.unstable_reps if unstable_reps is None else unstable_reps
    return (
        per_sample_metric(probe, stable_reps, pairs.class_ids, metric),
        per_sample_metric(probe, unstable_reps, pairs.class_ids, metric),
    )


def deterioration(pairs, probe, metric='accuracy'):
    """m(stable) - m(unstable), each averaged over pairs"""
    stable, unstable = pair_metrics(pairs, probe, metric)
    return float(stable.mean() - unstable.mean())


# =============================================================================
# ROBUST DIMENSIONS
# =============================================================================

@dataclass(frozen=True)
class RobustDimsConfig:
    k_percent: float = 90.0
    ranking_source: str = 'true-class'

    def __post_init__(self):
        if not 0.0 < self.k_percent <= 100.0:
            raise ContractError(f"k_percent must lie in (0, 100], got {self.k_percent}")
        if self.ranking_source not in RANKING_SOURCES:
            raise ContractError(f"unknown ranking source {self.ranking_source!r}")


def rank_dimensions(probe, stable_rep, class_id):
    """Dimensions by descending W[d, class] * rep[d]; ties keep the lower index first"""
    if not 0 <= class_id < probe.num_classes:
        raise ContractError(f"unknown class {class_id}")
    contribution = probe.W[:, class_id] * np.asarray(stable_rep, dtype=np.float64)
    return np.argsort(-contribution, kind='stable')


def rank_dimensions_batch(probe, stable_reps, class_ids):
    contribution = probe.W[:, np.asarray(class_ids)].T * stable_reps
    return np.argsort(-contribution, axis=1, kind='stable')


def kept_dimensions(d2, k_percent):
    # the small offset keeps exact products such as 50% of 128 from rounding up
    return max(1, math.ceil(k_percent * d2 / 100.0 - 1e-9))


def mask_top_k(rep, ranking, k_percent):
    """Keep the top-ranked ceil(k% * d2) coordinates, zero the rest; no renormalization"""
    if not 0.0 < k_percent <= 100.0:
        raise ContractError(f"k_percent must lie in (0, 100], got {k_percent}")
    rep = np.asarray(rep, dtype=np.float64)
    keep = np.asarray(ranking)[:kept_dimensions(rep.shape[-1], k_percent)]
    out = np.zeros_like(rep)
    out[keep] = rep[keep]
    return out


def mask_top_k_batch(reps, rankings, k_percent):
    keep = rankings[:, :kept_dimensions(reps.shape[1], k_percent)]
    out = np.zeros_like(reps)
    rows = np.arange(reps.shape[0])[:, None]
    out[rows, keep] = reps[rows, keep]
    return out


def robust_pair_metrics(pairs, probe, config, metric):
    """
    Mask both members with the ranking computed on the stable member, using
    the true class or the class predicted from the stable member.
    """
    if config.ranking_source == 'true-class':
        classes = pairs.class_ids
    else:
        classes = predict_classes(probe, pairs.stable_reps)
    rankings = rank_dimensions_batch(probe, pairs.stable_reps, classes)
    return pair_metrics(
        pairs, probe, metric,
        stable_reps=mask_top_k_batch(pairs.stable_reps, rankings, config.k_percent),
        unstable_reps=mask_top_k_batch(pairs.unstable_reps, rankings, config.k_percent),
    )


# =============================================================================
# STABLE INFERENCE MAPPING
# =============================================================================

@dataclass
class StableMap:
    F: np.ndarray
    bias: np.ndarray
    trained_on: dict = field(default_factory=dict)

    def residual(self, reps):
        return reps @ self.F + self.bias

    def to_dict(self):
        return {'F': self.F.tolist(), 'bias': self.bias.tolist(), 'trained_on': self.trained_on}

    @classmethod
    def from_dict(cls, data):
        return cls(
            F=np.array(data['F'], dtype=np.float64),
            bias=np.array(data['bias'], dtype=np.float64),
            trained_on=dict(data.get('trained_on', {})),
        )


def fit_stable_map(unstable_reps, stable_reps, rs, epochs=10, batch_size=128, optimizer=None, method='adam'):
    """
    Fit l(u) = u F + bias to the residual s - u by minimizing
    mean ||l(u) - (s - u)||^2, starting from the zero map.

    method='adam' runs mini-batch Adam; method='lstsq' solves the same
    problem in closed form.
    """
    unstable_reps = as_matrix(unstable_reps, 'unstable representations')
    stable_reps = as_matrix(stable_reps, 'stable representations')
    if unstable_reps.shape != stable_reps.shape:
        raise ShapeError("stable and unstable representations must have the same shape")
    count, d2 = unstable_reps.shape
    if count == 0:
        raise DegenerateInputError("stable map needs at least one training pair")
    if count < d2:
        logger.warning("Fitting a %d-dim stable map on only %d pairs", d2, count)
    target = stable_reps - unstable_reps
    trained_on = {'pairs': count, 'method': method}

    if method == 'lstsq':
        design = np.concatenate([unstable_reps, np.ones((count, 1))], axis=1)
        if count < design.shape[1]:
            design = np.concatenate([design, np.zeros((design.shape[1] - count, design.shape[1]))])
            target = np.concatenate([target, np.zeros((design.shape[0] - count, d2))])
        coef = least_squares(design, target).coef
        return StableMap(coef[:-1], coef[-1], trained_on)
    if method != 'adam':
        raise ContractError(f"unknown stable map method {method!r}")

    optimizer = optimizer or AdamState()
    params = {'map.F': np.zeros((d2, d2)), 'map.bias': np.zeros(d2)}
    for epoch in range(epochs):
        order = rs.permutation(count)
        for start in range(0, count, batch_size):
            index = order[start:start + batch_size]
            graph = CompGraph()
            F = graph.parameter('map.F', params['map.F'])
            bias = graph.parameter('map.bias', params['map.bias'])
            predicted = graph.add(graph.matmul(graph.constant(unstable_reps[index]), F), bias)
            residual = graph.sub(predicted, graph.constant(target[index]))
            loss = graph.mean(graph.row_sum(graph.square(residual)))
            if not np.isfinite(graph.value(loss)):
                raise NumericError("stable map loss is not finite")
            params = adam_step(optimizer, params, backward(graph, loss))
    stable_map = StableMap(params['map.F'], params['map.bias'], trained_on)
    logger.info(
        "Fitted stable map on %d pairs, residual %.6f",
        count, float(np.mean(np.sum((stable_map.residual(unstable_reps) - target) ** 2, axis=1))),
    )
    return stable_map


def apply_stable_map(stable_map, reps):
    """normalize(rep + l(rep)); accepts a vector or an (n, d2) array"""
    reps = np.asarray(reps, dtype=np.float64)
    single = reps.ndim == 1
    reps = np.atleast_2d(reps)
    if reps.shape[1] != stable_map.F.shape[0]:
        raise ShapeError(f"stable map expects dimension {stable_map.F.shape[0]}, got {reps.shape[1]}")
    out = row_normalize(reps + stable_map.residual(reps))
    return out[0] if single else out


def stable_map_training_pairs(train, train_reps, holdout, holdout_reps, probe, context, rs,
                              num_neighbors=5, pair_mode='random', variable_set='eligible', pool_encoder=None):
    """n=1 pairs: each training point shifted on one random variable, matched within its neighbours"""
    return make_unstable_pairs(
        train, train_reps, holdout, holdout_reps, probe, 1, context, rs,
        num_neighbors=num_neighbors, subsets='random', variable_set=variable_set, selection=pair_mode,
        pool_encoder=pool_encoder,
    )


# =============================================================================
# TREATMENT EFFECT
# =============================================================================

@dataclass
class AteResult:
    estimate: float
    low: float
    high: float
    count: int

    def to_dict(self):
        return dict(self.__dict__)


def intervention_pairs(batch, targets, context, rs, value_range='holdout'):
    """(control, treated) latent batches: treated = do(targets) applied to control"""
    treated = do_intervene_batch(batch, InterventionSpec(tuple(targets), value_range), context.scm, context.rule, rs)
    return LatentBatch(batch.class_ids.copy(), batch.values.copy(), batch.geometry, batch.split), treated


def ate_estimate(probe, control_reps, treated_reps, class_ids, rs, resamples=1000, level=0.95):
    """Mean paired score difference control - treated with a percentile bootstrap interval"""
    control = target_scores(probe, control_reps, class_ids)
    treated = target_scores(probe, treated_reps, class_ids)
    differences = control - treated
    count = differences.size
    if count == 0:
        raise DegenerateInputError("treatment effect of an empty sample")
    draws = rs.integers(0, count, size=(resamples, count))
    means = differences[draws].mean(axis=1)
    tail = 50.0 * (1.0 - level)
    low, high = np.percentile(means, [tail, 100.0 - tail])
    return AteResult(float(differences.mean()), float(low), float(high), int(count))


# =============================================================================
# REPORT
# =============================================================================

@dataclass
class ReportRow:
    objective: str
    geometry: str
    n: int
    method: str
    metric: str
    value: float
    stderr: float
    seed: object

    def to_row(self):
        return [self.objective, self.geometry, self.n, self.method, self.metric, self.value, self.stderr, self.seed]


def _stderr(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))


@dataclass
class StabilityReport:
    objective: str
    geometry: str
    seed: object
    rows: list = field(default_factory=list)

    def add(self, n, method, metric, value, stderr=0.0):
        self.rows.append(ReportRow(self.objective, self.geometry, int(n), method, metric,
                                   float(value), float(stderr), self.seed))

    def add_pair_metrics(self, n, method, metric, stable, unstable):
        """Stable, unstable and deterioration rows from per-pair arrays"""
        self.add(n, method, f'{metric}_stable', stable.mean(), _stderr(stable))
        self.add(n, method, f'{metric}_unstable', unstable.mean(), _stderr(unstable))
        self.add(n, method, f'{metric}_deterioration', stable.mean() - unstable.mean(), _stderr(stable - unstable))

    def value(self, n, method, metric):
        for row in self.rows:
            if row.n == n and row.method == method and row.metric == metric:
                return row.value
        raise KeyError((n, method, metric))

    def to_rows(self):
        return [row.to_row() for row in self.rows]


def aggregate_reports(reports):
    """Mean and standard error across seeds for every (objective, geometry, n, method, metric)"""
    grouped = {}
    for report in reports:
        for row in report.rows:
            grouped.setdefault((row.objective, row.geometry, row.n, row.method, row.metric), []).append(row.value)
    return [
        ReportRow(objective, geometry, n, method, metric, float(np.mean(values)), _stderr(values), 'all')
        for (objective, geometry, n, method, metric), values in grouped.items()
    ]


def robust_method_name(k_percent):
    return f'robust_k{k_percent:g}'
