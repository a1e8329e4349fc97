"""
Injective mixing function g from embedded latents to observations

A latent (class, vars) is embedded as [anchor(class), vars] (projected to the
unit sphere in sphere geometry) and mapped to an observation of the same
dimension by one of:
- identity
- orthogonal-linear: x = z Q with Q orthogonal
- invertible-mlp: leaky-linear layers with condition-capped square matrices
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from bench.exceptions import ConfigurationError, ContractError, ShapeError
from bench.numerics import row_normalize
from bench.sampling import RandomStream, sample_sphere_uniform
from bench.scm import GEOMETRY_SPHERE

logger = logging.getLogger(__name__)

KIND_IDENTITY = 'identity'
KIND_ORTHOGONAL = 'orthogonal-linear'
KIND_MLP = 'invertible-mlp'
KINDS = (KIND_IDENTITY, KIND_ORTHOGONAL, KIND_MLP)

MAX_ANCHOR_COSINE = 0.5
MAX_ANCHOR_ATTEMPTS = 1000


@dataclass
class GeneratorSpec:
    kind: str
    num_classes: int
    class_embedding_dim: int
    num_vars: int
    anchors: np.ndarray
    matrices: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    depth: int = 3
    slope: float = 0.2
    condition_cap: float = 10.0
    seed: int = 0

    @property
    def latent_dim(self):
        return self.class_embedding_dim + self.num_vars

    @property
    def observation_dim(self):
        return self.latent_dim

    def to_dict(self):
        return {
            'kind': self.kind,
            'num_classes': self.num_classes,
            'class_embedding_dim': self.class_embedding_dim,
            'num_vars': self.num_vars,
            'depth': self.depth,
            'slope': self.slope,
            'condition_cap': self.condition_cap,
            'seed': self.seed,
            'anchors': self.anchors.tolist(),
            'matrices': [m.tolist() for m in self.matrices],
            'biases': [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data):
        e = int(data['class_embedding_dim'])
        return cls(
            kind=data['kind'],
            num_classes=int(data['num_classes']),
            class_embedding_dim=e,
            num_vars=int(data['num_vars']),
            anchors=np.array(data['anchors'], dtype=np.float64).reshape(int(data['num_classes']), e),
            matrices=[np.array(m, dtype=np.float64) for m in data['matrices']],
            biases=[np.array(b, dtype=np.float64) for b in data['biases']],
            depth=int(data['depth']),
            slope=float(data['slope']),
            condition_cap=float(data['condition_cap']),
            seed=int(data['seed']),
        )


# =============================================================================
# CONSTRUCTION
# =============================================================================

def _draw_anchors(num_classes, dim, rs):
    if dim == 0:
        return np.zeros((num_classes, 0))
    if dim == 1:
        raise ConfigurationError("class embedding dimension must be 0 or >= 2")
    for _ in range(MAX_ANCHOR_ATTEMPTS):
        anchors = sample_sphere_uniform(dim, rs, size=num_classes)
        cosines = anchors @ anchors.T
        np.fill_diagonal(cosines, -1.0)
        if cosines.max() < MAX_ANCHOR_COSINE:
            return anchors
    raise ConfigurationError(
        f"could not place {num_classes} class anchors in {dim} dimensions with pairwise cosine < {MAX_ANCHOR_COSINE}"
    )


def random_orthogonal(d, rs):
    q, r = np.linalg.qr(rs.normal(size=(d, d)))
    return q * np.sign(np.diag(r))[None, :]


def condition_matrix(matrix, cap):
    """Clip singular values so the condition number is at most cap and the largest is 1"""
    u, s, vt = np.linalg.svd(matrix)
    s = np.clip(s, s.max() / cap, None)
    s = s / s.max()
    return (u * s[None, :]) @ vt


def build_generator_spec(kind, num_classes, class_embedding_dim, num_vars, seed,
                         depth=3, slope=0.2, condition_cap=10.0):
    """
    Draw anchors and layer weights from a dedicated stream of `seed`.

    Anchors come from fork(0), layer weights from fork(1).
    """
    if kind not in KINDS:
        raise ConfigurationError(f"unknown generator kind {kind!r}")
    if condition_cap < 1.0:
        raise ConfigurationError("condition cap must be >= 1")
    if not 0.0 < slope <= 1.0:
        raise ConfigurationError("leaky slope must lie in (0, 1]")

    rs = RandomStream(seed, stream_id=1)
    anchors = _draw_anchors(num_classes, class_embedding_dim, rs.fork(0))
    d = class_embedding_dim + num_vars
    weights_rs = rs.fork(1)

    matrices, biases = [], []
    if kind == KIND_ORTHOGONAL:
        matrices = [random_orthogonal(d, weights_rs)]
        biases = [np.zeros(d)]
    elif kind == KIND_MLP:
        for _ in range(depth):
            matrices.append(condition_matrix(weights_rs.normal(size=(d, d)), condition_cap))
            biases.append(0.1 * weights_rs.normal(size=d))

    spec = GeneratorSpec(
        kind=kind,
        num_classes=num_classes,
        class_embedding_dim=class_embedding_dim,
        num_vars=num_vars,
        anchors=anchors,
        matrices=matrices,
        biases=biases,
        depth=depth,
        slope=slope,
        condition_cap=condition_cap,
        seed=seed,
    )
    logger.debug("Built %s generator, latent dim %d", kind, d)
    return spec


# =============================================================================
# FORWARD / INVERSE
# =============================================================================

def embed_batch(batch, spec):
    """(n, latent_dim) embedded latents for a LatentBatch"""
    if np.any(batch.class_ids < 0) or np.any(batch.class_ids >= spec.num_classes):
        raise ContractError("latent class id outside the generator's anchor table")
    if batch.values.shape[1] != spec.num_vars:
        raise ShapeError(f"expected {spec.num_vars} latent variables, got {batch.values.shape[1]}")
    embedded = np.concatenate([spec.anchors[batch.class_ids], batch.values], axis=1)
    if batch.geometry == GEOMETRY_SPHERE:
        embedded = row_normalize(embedded)
    return embedded


def embed_latent(z, spec):
    if not 0 <= z.class_id < spec.num_classes:
        raise ContractError(f"unknown class {z.class_id}")
    embedded = np.concatenate([spec.anchors[z.class_id], z.vars])
    if z.geometry == GEOMETRY_SPHERE:
        embedded = embedded / np.linalg.norm(embedded)
    return embedded


def generate(z_embedded, spec):
    """x = g(z); accepts a vector or an (n, d) array"""
    z = np.asarray(z_embedded, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != spec.latent_dim:
        raise ShapeError(f"generator expects dimension {spec.latent_dim}, got {z.shape[1]}")

    if spec.kind == KIND_IDENTITY:
        x = z.copy()
    elif spec.kind == KIND_ORTHOGONAL:
        x = z @ spec.matrices[0]
    else:
        x = z
        last = len(spec.matrices) - 1
        for layer, (weight, bias) in enumerate(zip(spec.matrices, spec.biases)):
            x = x @ weight + bias
            if layer < last:
                x = np.where(x > 0, x, spec.slope * x)
    return x[0] if single else x


def invert(x, spec):
    """Layerwise inverse of generate"""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if spec.kind == KIND_IDENTITY:
        return h.copy()
    if spec.kind == KIND_ORTHOGONAL:
        return h @ spec.matrices[0].T
    last = len(spec.matrices) - 1
    for layer in range(last, -1, -1):
        if layer < last:
            h = np.where(h > 0, h, h / spec.slope)
        h = np.linalg.solve(spec.matrices[layer].T, (h - spec.biases[layer]).T).T
    return h


# =============================================================================
# INJECTIVITY
# =============================================================================

@dataclass
class InjectivityReport:
    pairs: int
    min_input_distance: float
    min_output_distance: float
    ratio: float
    min_pair_ratio: float
    max_condition_number: float
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def injectivity_check(spec, n, rs):
    """
    Scan n random input pairs: ratio = min output distance / min input distance.

    Fails when any pair of distinct inputs collides (output distance < 1e-9).
    """
    if n < 2:
        raise ContractError("injectivity check needs at least two pairs")
    d = spec.latent_dim
    a = rs.uniform(-1.0, 1.0, size=(n, d))
    b = rs.uniform(-1.0, 1.0, size=(n, d))
    input_distance = np.linalg.norm(a - b, axis=1)
    output_distance = np.linalg.norm(generate(a, spec) - generate(b, spec), axis=1)
    conditions = [np.linalg.cond(m) for m in spec.matrices] or [1.0]

    report = InjectivityReport(
        pairs=n,
        min_input_distance=float(input_distance.min()),
        min_output_distance=float(output_distance.min()),
        ratio=float(output_distance.min() / input_distance.min()),
        min_pair_ratio=float((output_distance / input_distance).min()),
        max_condition_number=float(max(conditions)),
        passed=bool(output_distance.min() >= 1e-9),
    )
    if not report.passed:
        logger.warning("Generator collision detected: min output distance %.3e", report.min_output_distance)
    return report
