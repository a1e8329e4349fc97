"""
Structural causal model over the object class and ten continuous data variables

The graph is a latent-scale analog of a rendered 3D-object dataset:
object position, three rotation angles, object hue, spotlight position,
spotlight hue and background hue. Roots are uniform on [-1, 1]; each
dependent variable is a truncated normal (sigma 0.5, support [-1, 1]) whose
mean is an affine function of its parents, clamped to [-1, 1].

Hold-out ranges carve the extreme values out of training:
- uniform roots lose both edges (<= -t and >= t)
- a dependent variable loses one tail: the lower tail (<= mu - t) when
  mu > 0, the upper tail (>= mu + t) when mu <= 0
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from bench.exceptions import ConfigurationError, ContractError, DegenerateInputError
from bench.sampling import sample_truncnorm

logger = logging.getLogger(__name__)

ROOT = 'root-uniform'
DEPENDENT = 'dependent'

SPLIT_TRAIN_SEEN = 'train-seen'
SPLIT_TEST_SEEN = 'test-seen'
SPLIT_TEST_HOLDOUT = 'test-holdout'
SPLITS = (SPLIT_TRAIN_SEEN, SPLIT_TEST_SEEN, SPLIT_TEST_HOLDOUT)

GEOMETRY_BOX = 'box'
GEOMETRY_SPHERE = 'sphere'

DEPENDENT_TAIL_RULE = 'lower tail (<= mu - t) when mu > 0; upper tail (>= mu + t) when mu <= 0'

# test-holdout rejection sampling gives up after this many rounds
MAX_HOLDOUT_ROUNDS = 10_000


# =============================================================================
# SPEC TYPES
# =============================================================================

@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = ROOT
    parents: tuple = ()
    coefficients: tuple = ()
    offset: float = 0.0
    eligible: bool = True

    def to_dict(self):
        return {
            'name': self.name,
            'kind': self.kind,
            'parents': list(self.parents),
            'coefficients': list(self.coefficients),
            'offset': self.offset,
            'eligible': self.eligible,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            name=data['name'],
            kind=data['kind'],
            parents=tuple(data.get('parents', ())),
            coefficients=tuple(float(c) for c in data.get('coefficients', ())),
            offset=float(data.get('offset', 0.0)),
            eligible=bool(data.get('eligible', True)),
        )


def _dependent(name, parents, eligible=True):
    weight = 1.0 / len(parents)
    return VariableSpec(name, DEPENDENT, tuple(parents), (weight,) * len(parents), 0.0, eligible)


@dataclass(frozen=True)
class ScmSpec:
    """
    Immutable causal-graph description.

    Variable order is the column order of every latent array; the first
    eight variables are the intervention-eligible ones.
    """
    variables: tuple
    num_classes: int = 7
    sigma: float = 0.5

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ConfigurationError("SCM variable names must be unique")
        if self.num_classes < 1:
            raise ConfigurationError("SCM needs at least one class")
        if self.sigma <= 0:
            raise ConfigurationError("SCM sigma must be positive")
        for var in self.variables:
            if var.kind not in (ROOT, DEPENDENT):
                raise ConfigurationError(f"unknown variable kind {var.kind!r} for {var.name}")
            if var.kind == ROOT and var.parents:
                raise ConfigurationError(f"root variable {var.name} cannot have parents")
            if var.kind == DEPENDENT:
                if not var.parents:
                    raise ConfigurationError(f"dependent variable {var.name} needs parents")
                if len(var.coefficients) != len(var.parents):
                    raise ConfigurationError(f"{var.name}: one coefficient per parent is required")
                missing = set(var.parents) - set(names)
                if missing:
                    raise ConfigurationError(f"{var.name}: unknown parents {sorted(missing)}")
        # raises on cycles
        self.topological_order

    @property
    def names(self):
        return tuple(v.name for v in self.variables)

    @property
    def dim(self):
        return len(self.variables)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ContractError(f"unknown variable {name!r}") from None

    @cached_property
    def topological_order(self):
        """Column indices with every parent before its children"""
        position = {name: i for i, name in enumerate(self.names)}
        remaining = {i: {position[p] for p in v.parents} for i, v in enumerate(self.variables)}
        order = []
        while remaining:
            ready = sorted(i for i, deps in remaining.items() if not deps)
            if not ready:
                cycle = sorted(self.names[i] for i in remaining)
                raise ConfigurationError(f"SCM dependency graph has a cycle among {cycle}")
            for i in ready:
                order.append(i)
                del remaining[i]
            for deps in remaining.values():
                deps.difference_update(ready)
        return tuple(order)

    @cached_property
    def children(self):
        result = {i: set() for i in range(self.dim)}
        for i, var in enumerate(self.variables):
            for parent in var.parents:
                result[self.index(parent)].add(i)
        return result

    def descendants(self, indices):
        seen = set()
        stack = list(indices)
        while stack:
            for child in self.children[stack.pop()]:
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return seen

    @property
    def eligible_names(self):
        return tuple(v.name for v in self.variables if v.eligible)

    @property
    def children_names(self):
        """Eligible variables that have parents in the graph"""
        return tuple(v.name for v in self.variables if v.eligible and v.parents)

    def mean(self, index, values):
        """Conditional mean of a dependent variable given the current parent columns"""
        var = self.variables[index]
        mu = np.full(values.shape[0], var.offset)
        for parent, weight in zip(var.parents, var.coefficients):
            mu = mu + weight * values[:, self.index(parent)]
        return np.clip(mu, -1.0, 1.0)

    def to_dict(self):
        return {
            'num_classes': self.num_classes,
            'sigma': self.sigma,
            'variables': [v.to_dict() for v in self.variables],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            variables=tuple(VariableSpec.from_dict(v) for v in data['variables']),
            num_classes=int(data['num_classes']),
            sigma=float(data['sigma']),
        )


def default_scm_spec(num_classes=7, sigma=0.5):
    """
    Spotlight position drives object position, positions drive rotations,
    background hue drives object hue, spotlight hue stands alone.
    pos_x and pos_y are modeled but never intervened on.
    """
    return ScmSpec(
        variables=(
            _dependent('pos_z', ['pos_spl']),
            _dependent('rot_phi', ['pos_x']),
            _dependent('rot_theta', ['pos_y']),
            _dependent('rot_psi', ['pos_z']),
            _dependent('hue_obj', ['hue_bg']),
            VariableSpec('pos_spl'),
            VariableSpec('hue_spl'),
            VariableSpec('hue_bg'),
            _dependent('pos_x', ['pos_spl'], eligible=False),
            _dependent('pos_y', ['pos_spl'], eligible=False),
        ),
        num_classes=num_classes,
        sigma=sigma,
    )


@dataclass(frozen=True)
class HoldoutRule:
    threshold: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"hold-out threshold must lie in (0, 1), got {self.threshold}")

    def mode(self, var):
        return 'uniform-edges' if var.kind == ROOT else 'dependent-tail'

    def seen_interval(self, var, mu=None):
        """(lo, hi) arrays of the training support"""
        t = self.threshold
        if var.kind == ROOT:
            return -t, t
        lo = np.where(mu > 0, mu - t, -1.0)
        hi = np.where(mu > 0, 1.0, mu + t)
        return lo, hi

    def holdout_interval(self, var, mu):
        """(lo, hi) arrays of the excluded tail of a dependent variable"""
        t = self.threshold
        lo = np.where(mu > 0, -1.0, mu + t)
        hi = np.where(mu > 0, mu - t, 1.0)
        return lo, hi

    def in_holdout(self, var, values, mu=None):
        t = self.threshold
        if var.kind == ROOT:
            return (values <= -t) | (values >= t)
        return np.where(mu > 0, values <= mu - t, values >= mu + t)

    def to_dict(self):
        return {'threshold': self.threshold, 'dependent_tail_rule': DEPENDENT_TAIL_RULE}

    @classmethod
    def from_dict(cls, data):
        return cls(threshold=float(data['threshold']))


@dataclass(frozen=True)
class InterventionSpec:
    """do(V_i = v_i) on a subset of eligible variables, values drawn from the hold-out (or seen) range"""
    targets: tuple = ()
    value_range: str = 'holdout'

    def __post_init__(self):
        if self.value_range not in ('holdout', 'seen'):
            raise ContractError(f"unknown intervention value range {self.value_range!r}")
        if len(set(self.targets)) != len(self.targets):
            raise ContractError("intervention targets must be distinct")


# =============================================================================
# LATENT VALUES
# =============================================================================

@dataclass
class LatentPoint:
    class_id: int
    vars: np.ndarray
    geometry: str = GEOMETRY_BOX

    def __post_init__(self):
        self.vars = np.asarray(self.vars, dtype=np.float64)
        if self.geometry == GEOMETRY_BOX and np.any(np.abs(self.vars) > 1.0):
            raise ContractError("box-geometry latent variables must lie in [-1, 1]")


@dataclass
class LatentBatch:
    """Column-stacked latents; row i is LatentPoint(class_ids[i], values[i])"""
    class_ids: np.ndarray
    values: np.ndarray
    geometry: str = GEOMETRY_BOX
    split: str = ''

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.class_ids), -1)

    def __len__(self):
        return len(self.class_ids)

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return LatentPoint(int(self.class_ids[index]), self.values[index].copy(), self.geometry)
        return LatentBatch(self.class_ids[index], self.values[index], self.geometry, self.split)

    @classmethod
    def from_points(cls, points, split=''):
        points = list(points)
        if not points:
            raise DegenerateInputError("cannot build a batch from no latents")
        return cls(
            np.array([p.class_id for p in points]),
            np.stack([p.vars for p in points]),
            points[0].geometry,
            split,
        )


# =============================================================================
# SAMPLING
# =============================================================================

def _draw_uniform_edges(count, threshold, rs):
    """Uniform on [-1, -t] U [t, 1]"""
    width = 1.0 - threshold
    u = rs.uniform(0.0, 2.0 * width, size=count)
    return np.where(u < width, -1.0 + u, threshold + (u - width))


def _draw_variable(spec, rule, index, values, mode, rs):
    """Draw column `index` for every row given the already drawn parent columns"""
    var = spec.variables[index]
    count = values.shape[0]
    if var.kind == ROOT:
        if mode == 'seen':
            lo, hi = rule.seen_interval(var)
            return rs.uniform(lo, hi, size=count)
        if mode == 'holdout':
            return _draw_uniform_edges(count, rule.threshold, rs)
        return rs.uniform(-1.0, 1.0, size=count)

    mu = spec.mean(index, values)
    if mode == 'seen':
        lo, hi = rule.seen_interval(var, mu)
    elif mode == 'holdout':
        lo, hi = rule.holdout_interval(var, mu)
    else:
        lo, hi = -1.0, 1.0
    lo = np.broadcast_to(lo, (count,))
    hi = np.broadcast_to(hi, (count,))
    if np.any(lo >= hi):
        raise ConfigurationError(f"allowed range of {var.name} is empty after exclusion")
    return sample_truncnorm(mu, spec.sigma, lo, hi, rs)


def _ancestral(spec, rule, count, mode, rs):
    values = np.zeros((count, spec.dim))
    for index in spec.topological_order:
        values[:, index] = _draw_variable(spec, rule, index, values, mode, rs)
    return values


def holdout_mask(spec, rule, values):
    """Boolean (n, dim) array: True where a value lies in its hold-out range"""
    values = np.atleast_2d(values)
    mask = np.zeros(values.shape, dtype=bool)
    for index, var in enumerate(spec.variables):
        mu = spec.mean(index, values) if var.kind == DEPENDENT else None
        mask[:, index] = rule.in_holdout(var, values[:, index], mu)
    return mask


def sample_latents(spec, rule, split, rs, count, geometry=GEOMETRY_BOX):
    """
    Draw exactly `count` latents of one split.

    train-seen and test-seen sample every variable inside its training
    support directly, so no draw is discarded. test-holdout samples the full
    support and keeps rows with at least one variable in a hold-out range,
    redrawing rejected rows until the requested count is reached.
    """
    if split not in SPLITS:
        raise ContractError(f"unknown split {split!r}")
    class_ids = rs.integers(0, spec.num_classes, size=count)

    if split != SPLIT_TEST_HOLDOUT:
        values = _ancestral(spec, rule, count, 'seen', rs)
        return LatentBatch(class_ids, values, geometry, split)

    values = np.zeros((count, spec.dim))
    pending = np.arange(count)
    for _ in range(MAX_HOLDOUT_ROUNDS):
        if not pending.size:
            break
        draws = _ancestral(spec, rule, pending.size, 'full', rs)
        keep = holdout_mask(spec, rule, draws).any(axis=1)
        values[pending[keep]] = draws[keep]
        pending = pending[~keep]
    else:
        raise ConfigurationError("could not fill the hold-out split; hold-out ranges are too narrow")
    return LatentBatch(class_ids, values, geometry, split)


def sample_latent(spec, rule, split, rs, geometry=GEOMETRY_BOX):
    return sample_latents(spec, rule, split, rs, 1, geometry)[0]


# =============================================================================
# INTERVENTIONS
# =============================================================================

def resolve_targets(spec, targets):
    indices = []
    for name in targets:
        index = spec.index(name)
        if not spec.variables[index].eligible:
            raise ContractError(f"variable {name!r} is not intervention-eligible")
        indices.append(index)
    return indices


def do_intervene_batch(batch, iv, spec, rule, rs):
    """
    Apply do(targets) to every row of a batch.

    Targeted variables get fresh draws from their hold-out range (or their
    seen range when iv.value_range == 'seen'); descendants are redrawn from
    their seen-range conditionals given the new parents; everything else,
    including the class, is left untouched.
    """
    targets = set(resolve_targets(spec, iv.targets))
    if not targets:
        return LatentBatch(batch.class_ids.copy(), batch.values.copy(), batch.geometry, batch.split)

    downstream = spec.descendants(targets) - targets
    values = batch.values.copy()
    target_mode = 'holdout' if iv.value_range == 'holdout' else 'seen'
    for index in spec.topological_order:
        if index in targets:
            values[:, index] = _draw_variable(spec, rule, index, values, target_mode, rs)
        elif index in downstream:
            values[:, index] = _draw_variable(spec, rule, index, values, 'seen', rs)
    return LatentBatch(batch.class_ids.copy(), values, batch.geometry, batch.split)


def resample_conditionals(batch, names, spec, rule, rs):
    """
    Redraw the named variables from their seen-range conditionals given the
    current parents. Unlike an intervention, descendants keep their values.
    """
    indices = {spec.index(name) for name in names}
    values = batch.values.copy()
    for index in spec.topological_order:
        if index in indices:
            values[:, index] = _draw_variable(spec, rule, index, values, 'seen', rs)
    return LatentBatch(batch.class_ids.copy(), values, batch.geometry, batch.split)


def do_intervene(z, iv, spec, rule, rs):
    batch = LatentBatch(np.array([z.class_id]), z.vars[None, :], z.geometry)
    return do_intervene_batch(batch, iv, spec, rule, rs)[0]


# =============================================================================
# NEAREST NEIGHBOURS
# =============================================================================

def nearest_neighbors(query, pool, k):
    """
    Indices of the k pool latents of the query's class closest in Euclidean
    distance over the data variables; ascending distance, ties by index.
    """
    if not isinstance(pool, LatentBatch):
        pool = LatentBatch.from_points(pool)
    candidates = np.flatnonzero(pool.class_ids == query.class_id)
    if candidates.size == 0:
        raise DegenerateInputError(f"no pool latent shares class {query.class_id}")
    if k > candidates.size:
        raise ContractError(f"asked for {k} neighbours but the class pool has {candidates.size}")
    distances = np.linalg.norm(pool.values[candidates] - query.vars[None, :], axis=1)
    order = np.argsort(distances, kind='stable')[:k]
    return candidates[order]


def nearest_neighbors_batch(queries, pool, k):
    """(len(queries), k) neighbour indices, computed class by class"""
    result = np.zeros((len(queries), k), dtype=np.int64)
    for class_id in np.unique(queries.class_ids):
        rows = np.flatnonzero(queries.class_ids == class_id)
        candidates = np.flatnonzero(pool.class_ids == class_id)
        if candidates.size < k:
            raise DegenerateInputError(
                f"class {class_id} has {candidates.size} hold-out latents, {k} neighbours requested"
            )
        candidate_values = pool.values[candidates]
        for start in range(0, rows.size, 256):
            chunk = rows[start:start + 256]
            diff = queries.values[chunk][:, None, :] - candidate_values[None, :, :]
            distances = np.sqrt((diff ** 2).sum(axis=2))
            order = np.argsort(distances, axis=1, kind='stable')[:, :k]
            result[chunk] = candidates[order]
    return result
