"""
Seeded random streams and the distribution samplers of the generative process

- RandomStream: counter-based (Philox) generator addressed by (seed, stream-id, fork path)
- uniform directions on the unit sphere
- von Mises-Fisher draws (rejection sampling of the cosine, uniform tangent direction)
- truncated normal draws (rejection, inverse-CDF when acceptance is below 1%)
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from bench.exceptions import ContractError
from bench.numerics import row_normalize

logger = logging.getLogger(__name__)

# below this acceptance rate the truncated normal switches to inverse-CDF
MIN_ACCEPTANCE = 0.01


class RandomStream:
    """
    Reproducible random source.

    The same (seed, stream_id, path) always yields the same sequence.
    fork(i) derives an independent child stream; a stream must have a
    single consumer, concurrency comes from forking.
    """

    def __init__(self, seed, stream_id=0, path=()):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(p) for p in path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    def fork(self, index):
        return RandomStream(self.seed, self.stream_id, self.path + (int(index),))

    @property
    def counter(self):
        return int(self.generator.bit_generator.state['state']['counter'][0])

    def describe(self):
        return {'seed': self.seed, 'stream_id': self.stream_id, 'path': list(self.path)}

    # thin delegates so callers never touch the generator directly

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def beta(self, a, b, size=None):
        return self.generator.beta(a, b, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, n, size=None, replace=True):
        return self.generator.choice(n, size=size, replace=replace)


# =============================================================================
# SPHERE AND VON MISES-FISHER
# =============================================================================

def sample_sphere_uniform(d, rs, size=None):
    """Uniform direction on S^(d-1); returns shape (d,) or (size, d)"""
    if d < 2:
        raise ContractError(f"sphere sampling needs d >= 2, got {d}")
    count = 1 if size is None else int(size)
    points = rs.normal(size=(count, d))
    while True:
        norms = np.linalg.norm(points, axis=1)
        bad = norms < 1e-12
        if not bad.any():
            break
        points[bad] = rs.normal(size=(int(bad.sum()), d))
    points = row_normalize(points)
    return points[0] if size is None else points


@dataclass(frozen=True)
class VmfParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        if mu.ndim != 1 or mu.size < 2:
            raise ContractError("vMF mean direction must be a vector of dimension >= 2")
        if abs(np.linalg.norm(mu) - 1.0) > 1e-9:
            raise ContractError("vMF mean direction must have unit norm")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ContractError(f"vMF concentration must be finite and >= 0, got {self.kappa}")
        object.__setattr__(self, 'mu', mu)
        object.__setattr__(self, 'kappa', float(self.kappa))


def _sample_vmf_cosine(kappa, d, count, rs):
    """Rejection sampler for w = mu^T x under vMF(kappa) on S^(d-1)"""
    m = d - 1
    b = m / (np.sqrt(4.0 * kappa ** 2 + m ** 2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * np.log(1.0 - x0 ** 2)

    w = np.empty(count)
    pending = np.arange(count)
    while pending.size:
        z = rs.beta(m / 2.0, m / 2.0, size=pending.size)
        candidate = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rs.uniform(size=pending.size)
        accept = kappa * candidate + m * np.log(1.0 - x0 * candidate) - c >= np.log(u)
        w[pending[accept]] = candidate[accept]
        pending = pending[~accept]
    return np.clip(w, -1.0, 1.0)


def _sample_tangent(mus, rs):
    """Uniform unit vectors orthogonal to each row of mus"""
    v = rs.normal(size=mus.shape)
    v -= np.sum(v * mus, axis=1, keepdims=True) * mus
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms < 1e-12):
        bad = norms < 1e-12
        redraw = rs.normal(size=(int(bad.sum()), mus.shape[1]))
        redraw -= np.sum(redraw * mus[bad], axis=1, keepdims=True) * mus[bad]
        v[bad] = redraw
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def sample_vmf_batch(mus, kappa, rs):
    """One vMF(mu_i, kappa) draw per row of mus"""
    mus = np.asarray(mus, dtype=np.float64)
    if mus.ndim != 2 or mus.shape[1] < 2:
        raise ContractError(f"vMF means must be an (n, d>=2) array, got {mus.shape}")
    if not np.isfinite(kappa) or kappa < 0:
        raise ContractError(f"vMF concentration must be finite and >= 0, got {kappa}")
    n, d = mus.shape
    w = _sample_vmf_cosine(float(kappa), d, n, rs)
    tangent = _sample_tangent(mus, rs)
    samples = w[:, None] * mus + np.sqrt(np.maximum(1.0 - w ** 2, 0.0))[:, None] * tangent
    return row_normalize(samples)


def sample_vmf(params, rs, size=None):
    """Draw from vMF(params.mu, params.kappa); shape (d,) or (size, d)"""
    count = 1 if size is None else int(size)
    mus = np.broadcast_to(params.mu, (count, params.mu.size))
    samples = sample_vmf_batch(mus, params.kappa, rs)
    return samples[0] if size is None else samples


# =============================================================================
# TRUNCATED NORMAL
# =============================================================================

def sample_truncnorm(mu, sigma, lo, hi, rs, size=None):
    """
    Draw from N(mu, sigma^2) conditioned on [lo, hi].

    Arguments broadcast elementwise. Entries whose acceptance probability
    is below MIN_ACCEPTANCE are drawn by inverse CDF instead of rejection.
    """
    shape = np.broadcast_shapes(np.shape(mu), np.shape(sigma), np.shape(lo), np.shape(hi))
    if size is not None:
        shape = np.broadcast_shapes(shape, (int(size),) if np.ndim(size) == 0 else tuple(size))
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), shape).reshape(-1)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), shape).reshape(-1)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), shape).reshape(-1)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), shape).reshape(-1)

    if np.any(sigma <= 0):
        raise ContractError("truncated normal needs sigma > 0")
    if np.any(lo >= hi):
        raise ContractError("truncated normal interval is empty")

    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    acceptance = special.ndtr(b) - special.ndtr(a)

    out = np.empty(mu.size)
    direct = acceptance >= MIN_ACCEPTANCE

    pending = np.flatnonzero(direct)
    while pending.size:
        draw = mu[pending] + sigma[pending] * rs.normal(size=pending.size)
        inside = (draw >= lo[pending]) & (draw <= hi[pending])
        out[pending[inside]] = draw[inside]
        pending = pending[~inside]

    tail = np.flatnonzero(~direct)
    if tail.size:
        u = rs.uniform(size=tail.size)
        draw = stats.truncnorm.ppf(u, a[tail], b[tail], loc=mu[tail], scale=sigma[tail])
        draw = np.where(np.isfinite(draw), draw, 0.5 * (lo[tail] + hi[tail]))
        out[tail] = np.clip(draw, lo[tail], hi[tail])

    if shape == ():
        return float(out[0])
    return out.reshape(shape)
