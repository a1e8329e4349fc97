"""
SSL objectives and their diagnostic decompositions

Every objective has two forms:
- a graph builder (`*_node`) recording the loss on a CompGraph for backward()
- a float wrapper (`loss_*`) evaluating the same loss on plain arrays

Diagnostics:
- align_uniform_decompose / decomposition_gap: contrastive loss as alignment + uniformity
- predictor_decompose / cross_term_taylor: predictor loss as online alignment + cross terms
- barlow_terms: diagonal and off-diagonal parts of the Barlow loss
"""

import logging

import numpy as np
from scipy.special import logsumexp

from bench.encoders import encode, predict
from bench.exceptions import ContractError, ShapeError, WarmupRequired
from bench.numerics import CompGraph, as_matrix, row_normalize

logger = logging.getLogger(__name__)


def _check_pair(reps_a, reps_b):
    reps_a = as_matrix(reps_a, 'first view')
    reps_b = as_matrix(reps_b, 'second view')
    if reps_a.shape != reps_b.shape:
        raise ShapeError(f"views differ in shape: {reps_a.shape} vs {reps_b.shape}")
    if reps_a.shape[0] < 2:
        raise ContractError("a batch needs at least two pairs")
    return reps_a, reps_b


def interleave(reps_a, reps_b):
    """Rows (2i, 2i+1) hold the two views of pair i"""
    reps_a, reps_b = _check_pair(reps_a, reps_b)
    out = np.empty((2 * reps_a.shape[0], reps_a.shape[1]))
    out[0::2] = reps_a
    out[1::2] = reps_b
    return out


def _partner_index(n):
    return np.arange(n) ^ 1


# =============================================================================
# CONTRASTIVE
# =============================================================================

def simclr_node(graph, reps, tau):
    """
    InfoNCE over 2B interleaved rows.

    Anchor i's positive is its partner row; every other row except i
    itself is a negative.
    """
    n = graph.value(reps).shape[0]
    if n < 4 or n % 2:
        raise ContractError("SimCLR needs an even number of rows and a batch of at least 2 pairs")
    sims = graph.scale(graph.matmul(reps, graph.transpose(reps)), 1.0 / tau)
    mask = ~np.eye(n, dtype=bool)
    log_partition = graph.logsumexp(sims, mask)
    positives = graph.gather(sims, _partner_index(n))
    return graph.mean(graph.sub(log_partition, positives))


def loss_simclr(reps, tau):
    graph = CompGraph()
    return float(graph.value(simclr_node(graph, graph.constant(reps), tau)))


def moco_node(graph, queries, keys, queue, tau):
    """
    Queue-based InfoNCE: query i is scored against the B current keys and
    the K queued keys, with key i as the positive and other current keys
    masked out. Keys are constants.
    """
    if not queue.is_full:
        raise WarmupRequired(f"MoCo queue holds {len(queue)} of {queue.size} entries")
    keys = as_matrix(keys, 'keys')
    b = keys.shape[0]
    if graph.value(queries).shape != keys.shape:
        raise ShapeError("queries and keys must have the same shape")
    bank = np.concatenate([keys, queue.contents()], axis=0)
    logits = graph.scale(graph.matmul(queries, graph.constant(bank.T)), 1.0 / tau)
    mask = np.ones((b, bank.shape[0]), dtype=bool)
    mask[:, :b] = np.eye(b, dtype=bool)
    log_partition = graph.logsumexp(logits, mask)
    positives = graph.gather(logits, np.arange(b))
    return graph.mean(graph.sub(log_partition, positives))


def loss_moco(queries, keys, queue, tau, enqueue=True):
    """Loss against the current queue snapshot, then push keys into the queue"""
    graph = CompGraph()
    value = float(graph.value(moco_node(graph, graph.constant(queries), keys, queue, tau)))
    if enqueue:
        queue.enqueue(keys)
    return value


# =============================================================================
# PREDICTOR OBJECTIVES
# =============================================================================

def _mean_sq_distance(graph, a, b):
    return graph.mean(graph.row_sum(graph.square(graph.sub(a, b))))


def byol_node(graph, preds_1, preds_2, targets_1, targets_2):
    """Symmetric ||p'(x1) - t(x2)||^2 with normalized predictions and constant targets"""
    p1 = graph.row_normalize(preds_1)
    p2 = graph.row_normalize(preds_2)
    t1 = graph.constant(targets_1)
    t2 = graph.constant(targets_2)
    return graph.scale(graph.add(_mean_sq_distance(graph, p1, t2), _mean_sq_distance(graph, p2, t1)), 0.5)


def simsiam_node(graph, preds_1, preds_2, reps_1, reps_2):
    """Symmetric negative cosine between predictions and stop-gradient representations"""
    p1 = graph.row_normalize(preds_1)
    p2 = graph.row_normalize(preds_2)
    z1 = graph.detach(reps_1)
    z2 = graph.detach(reps_2)
    total = graph.add(graph.mean(graph.rowdot(p1, z2)), graph.mean(graph.rowdot(p2, z1)))
    return graph.scale(total, -0.5)


def loss_byol(preds_1, preds_2, targets_1, targets_2):
    graph = CompGraph()
    node = byol_node(graph, graph.constant(preds_1), graph.constant(preds_2), targets_1, targets_2)
    return float(graph.value(node))


def loss_simsiam(preds_1, preds_2, reps_1, reps_2):
    graph = CompGraph()
    node = simsiam_node(
        graph, graph.constant(preds_1), graph.constant(preds_2),
        graph.constant(reps_1), graph.constant(reps_2),
    )
    return float(graph.value(node))


# =============================================================================
# BARLOW TWINS
# =============================================================================

def _barlow_parts(graph, reps_1, reps_2):
    batch = graph.value(reps_1).shape[0]
    if batch < 2:
        raise ContractError("Barlow Twins needs a batch of at least 2")
    s1 = graph.standardize_columns(reps_1)
    s2 = graph.standardize_columns(reps_2)
    cross = graph.scale(graph.matmul(graph.transpose(s1), s2), 1.0 / batch)
    diagonal = graph.diag(cross)
    on_diag = graph.sum(graph.square(graph.shift(graph.scale(diagonal, -1.0), 1.0)))
    off_diag = graph.sub(graph.sum(graph.square(cross)), graph.sum(graph.square(diagonal)))
    return on_diag, off_diag


def barlow_node(graph, reps_1, reps_2, lam):
    on_diag, off_diag = _barlow_parts(graph, reps_1, reps_2)
    return graph.add(on_diag, graph.scale(off_diag, lam))


def loss_barlow(reps_1, reps_2, lam):
    graph = CompGraph()
    return float(graph.value(barlow_node(graph, graph.constant(reps_1), graph.constant(reps_2), lam)))


def barlow_terms(reps_1, reps_2):
    """(sum_i (1 - C_ii)^2, sum_{i != j} C_ij^2) of the cross-correlation matrix"""
    reps_1, reps_2 = _check_pair(reps_1, reps_2)
    graph = CompGraph()
    on_diag, off_diag = _barlow_parts(graph, graph.constant(reps_1), graph.constant(reps_2))
    return float(graph.value(on_diag)), float(graph.value(off_diag))


# =============================================================================
# DECOMPOSITIONS
# =============================================================================

def align_uniform_decompose(reps_a, reps_b, tau, pool=None):
    """
    Returns (alignment, uniformity).

    alignment = E ||f(x) - f(x+)||^2. uniformity = E log E_neg exp(f(x)^T f(x-) / tau),
    with in-batch negatives (every row except the anchor and its partner)
    unless a pool of negatives is given.
    """
    reps_a, reps_b = _check_pair(reps_a, reps_b)
    alignment = float(np.mean(np.sum((reps_a - reps_b) ** 2, axis=1)))

    if pool is None:
        stacked = interleave(reps_a, reps_b)
        n = stacked.shape[0]
        sims = stacked @ stacked.T / tau
        mask = ~np.eye(n, dtype=bool)
        mask[np.arange(n), _partner_index(n)] = False
        negatives = mask.sum(axis=1)
        per_anchor = logsumexp(np.where(mask, sims, -np.inf), axis=1) - np.log(negatives)
    else:
        pool = as_matrix(pool, 'negative pool')
        if pool.shape[1] != reps_a.shape[1]:
            raise ShapeError("negative pool dimension does not match the representations")
        sims = reps_a @ pool.T / tau
        per_anchor = logsumexp(sims, axis=1) - np.log(pool.shape[0])
    return alignment, float(np.mean(per_anchor))


def decomposition_gap(reps_a, reps_b, tau):
    """
    |(L_simclr - log(2B - 1)) - (alignment / (2 tau) - 1 / tau + uniformity)|

    The bracketed identity holds up to the difference between the
    log-mean over 2B - 1 candidates and the 2B - 2 true negatives.
    """
    reps_a, reps_b = _check_pair(reps_a, reps_b)
    batch = reps_a.shape[0]
    simclr = loss_simclr(interleave(reps_a, reps_b), tau)
    alignment, uniformity = align_uniform_decompose(reps_a, reps_b, tau)
    estimate = alignment / (2.0 * tau) - 1.0 / tau + uniformity
    return float(abs((simclr - np.log(2 * batch - 1)) - estimate))


def _prediction_views(model, x1, x2, which):
    if not model.has_predictor:
        raise ContractError("predictor decomposition needs a model with a predictor")
    p1 = row_normalize(predict(model, encode(model, x1)))
    p2 = row_normalize(predict(model, encode(model, x2)))
    if which == 'byol':
        t2 = encode(model, x2, which='target')
    elif which == 'simsiam':
        t2 = encode(model, x2)
    else:
        raise ContractError(f"unknown predictor objective {which!r}")
    return p1, p2, t2


def predictor_decompose(model, x1, x2, which):
    """
    One-direction predictor loss E||p'(x1) - t(x2)||^2 split as
    online alignment E||p'(x1) - p'(x2)||^2
    + cross alignment E||p'(x2) - t(x2)||^2
    + cross term -2 E[(p'(x2) - p'(x1))^T (p'(x2) - t(x2))].

    t is the target encoder for BYOL, the online encoder for SimSiam.
    """
    p1, p2, t2 = _prediction_views(model, x1, x2, which)
    loss = float(np.mean(np.sum((p1 - t2) ** 2, axis=1)))
    online_alignment = float(np.mean(np.sum((p1 - p2) ** 2, axis=1)))
    cross_alignment = float(np.mean(np.sum((p2 - t2) ** 2, axis=1)))
    cross_term = float(-2.0 * np.mean(np.sum((p2 - p1) * (p2 - t2), axis=1)))
    return {
        'loss': loss,
        'online_alignment': online_alignment,
        'cross_alignment': cross_alignment,
        'cross_term': cross_term,
        'residual': abs(loss - (online_alignment + cross_alignment + cross_term)),
    }


def cross_term_taylor(model, x1, x2, which):
    """
    Cross term with each expectation of an inner product s replaced by
    log E exp(s): -2 (1 - log E e^{p1 p2} - log E e^{p2 t2} + log E e^{p1 t2}).
    The exact value is the cross_term entry of predictor_decompose.
    """
    p1, p2, t2 = _prediction_views(model, x1, x2, which)
    n = p1.shape[0]

    def log_mean_exp(s):
        return float(logsumexp(s) - np.log(n))

    s12 = np.sum(p1 * p2, axis=1)
    s2t = np.sum(p2 * t2, axis=1)
    s1t = np.sum(p1 * t2, axis=1)
    return float(-2.0 * (1.0 - log_mean_exp(s12) - log_mean_exp(s2t) + log_mean_exp(s1t)))
