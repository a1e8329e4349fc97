"""
Positive-pair policies and the encoder training loop

Positive pairs are built in latent space and pushed through the generator:
- sphere geometry: x1 = g(z), x2 = g(z') with z' ~ vMF(z, kappa)
- box geometry: both views resample the style variables from their
  seen-range conditionals, everything else is shared
"""

import logging
from dataclasses import dataclass

import numpy as np

from bench.encoders import bind_parameters, ema_update, encode, encode_on, predict_on
from bench.exceptions import ConfigurationError, NumericError
from bench.generator import embed_batch, generate
from bench.numerics import CompGraph, adam_step, backward
from bench.objectives import (
    align_uniform_decompose,
    barlow_node,
    byol_node,
    interleave,
    moco_node,
    simclr_node,
    simsiam_node,
)
from bench.sampling import sample_vmf_batch
from bench.scm import GEOMETRY_BOX, GEOMETRY_SPHERE, resample_conditionals

logger = logging.getLogger(__name__)

BOX_STYLE_VARS = ('hue_obj', 'hue_spl', 'hue_bg', 'pos_z')

# fork index reserved for MoCo warm-up draws, outside the per-batch range
WARMUP_FORK = 1_000_000


@dataclass(frozen=True)
class PairPolicy:
    geometry: str = GEOMETRY_BOX
    kappa: float = 20.0
    style_vars: tuple = BOX_STYLE_VARS

    def __post_init__(self):
        if self.geometry not in (GEOMETRY_BOX, GEOMETRY_SPHERE):
            raise ConfigurationError(f"unknown geometry {self.geometry!r}")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ConfigurationError("vMF concentration must be finite and >= 0")
        if self.geometry == GEOMETRY_BOX and not self.style_vars:
            raise ConfigurationError("box-mode augmentations need at least one style variable")


@dataclass
class DataSource:
    """Training latents plus everything needed to render them"""
    latents: object
    scm: object
    rule: object
    generator: object


@dataclass
class PositivePairs:
    x1: np.ndarray
    x2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray

    @property
    def directions(self):
        return self.z2 - self.z1


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    loss: float
    alignment: float
    uniformity: float

    def to_row(self):
        return [self.epoch, self.batch, self.loss, self.alignment, self.uniformity]


LOSS_TRACE_HEADER = ['epoch', 'batch', 'loss', 'alignment', 'uniformity']


def positive_pairs(batch, source, policy, rs):
    """Two views of every latent in `batch`, as observations and embedded latents"""
    if policy.geometry == GEOMETRY_SPHERE:
        z1 = embed_batch(batch, source.generator)
        z2 = sample_vmf_batch(z1, policy.kappa, rs)
    else:
        first = resample_conditionals(batch, policy.style_vars, source.scm, source.rule, rs)
        second = resample_conditionals(batch, policy.style_vars, source.scm, source.rule, rs)
        z1 = embed_batch(first, source.generator)
        z2 = embed_batch(second, source.generator)
    return PositivePairs(generate(z1, source.generator), generate(z2, source.generator), z1, z2)


# =============================================================================
# ONE OPTIMIZATION STEP
# =============================================================================

def _record_loss(graph, nodes, model, x1, x2):
    """Loss node plus the online representations of both views"""
    config = model.config
    objective = config.objective

    if objective == 'simclr':
        reps = encode_on(graph, nodes, model, graph.constant(interleave(x1, x2)))
        stacked = graph.value(reps)
        return simclr_node(graph, reps, config.tau), stacked[0::2], stacked[1::2], None

    z1 = encode_on(graph, nodes, model, graph.constant(x1))
    z2 = encode_on(graph, nodes, model, graph.constant(x2))
    r1, r2 = graph.value(z1), graph.value(z2)

    if objective == 'moco':
        keys = encode(model, x2, which='target')
        return moco_node(graph, z1, keys, model.queue, config.tau), r1, r2, keys
    if objective == 'byol':
        targets_1 = encode(model, x1, which='target')
        targets_2 = encode(model, x2, which='target')
        p1 = predict_on(graph, nodes, z1)
        p2 = predict_on(graph, nodes, z2)
        return byol_node(graph, p1, p2, targets_1, targets_2), r1, r2, None
    if objective == 'simsiam':
        p1 = predict_on(graph, nodes, z1)
        p2 = predict_on(graph, nodes, z2)
        return simsiam_node(graph, p1, p2, z1, z2), r1, r2, None
    return barlow_node(graph, z1, z2, config.barlow_lambda), r1, r2, None


def train_step(model, pairs, optimizer):
    """Forward, backward, Adam step and EMA update on one batch; returns (loss, r1, r2)"""
    graph = CompGraph()
    nodes = bind_parameters(graph, model)
    loss_node, r1, r2, keys = _record_loss(graph, nodes, model, pairs.x1, pairs.x2)
    loss = float(graph.value(loss_node))
    if not np.isfinite(loss):
        raise NumericError(f"{model.config.objective} loss is not finite")

    grads = backward(graph, loss_node)
    model.params = adam_step(optimizer, model.params, grads)
    if not all(np.all(np.isfinite(value)) for value in model.params.values()):
        raise NumericError("encoder parameters became non-finite")
    if keys is not None:
        model.queue.enqueue(keys)
    if model.has_target:
        ema_update(model)
    return loss, r1, r2


def warm_up_queue(model, source, policy, rs):
    """Fill the MoCo queue with target representations of random training views"""
    batch_size = model.config.batch_size
    fills = 0
    while not model.queue.is_full:
        index = rs.integers(0, len(source.latents), size=batch_size)
        pairs = positive_pairs(source.latents[index], source, policy, rs)
        model.queue.enqueue(encode(model, pairs.x2, which='target'))
        fills += 1
    logger.info("Filled MoCo queue with %d target batches", fills)


# =============================================================================
# EPOCH LOOP
# =============================================================================

def _batches(count, batch_size, rs):
    order = rs.permutation(count)
    full = count // batch_size
    if full == 0:
        return [order]
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(full)]


def train_epoch(model, source, policy, optimizer, rs, epoch=0):
    """
    One pass over the training latents in shuffled batches (incomplete
    last batch dropped). Batch b draws its augmentations from rs.fork(b).
    Returns one BatchRecord per batch.
    """
    if source.generator.latent_dim != model.input_dim:
        raise ConfigurationError(
            f"generator emits dimension {source.generator.latent_dim}, encoder expects {model.input_dim}"
        )
    if model.queue is not None and not model.queue.is_full:
        warm_up_queue(model, source, policy, rs.fork(WARMUP_FORK))

    records = []
    for number, index in enumerate(_batches(len(source.latents), model.config.batch_size, rs)):
        pairs = positive_pairs(source.latents[index], source, policy, rs.fork(number))
        loss, r1, r2 = train_step(model, pairs, optimizer)
        alignment, uniformity = align_uniform_decompose(r1, r2, model.config.tau)
        records.append(BatchRecord(epoch, number, loss, alignment, uniformity))

    logger.info(
        "epoch %d: loss %.6f alignment %.6f uniformity %.6f",
        epoch,
        np.mean([r.loss for r in records]),
        np.mean([r.alignment for r in records]),
        np.mean([r.uniformity for r in records]),
    )
    return records


def augmentation_directions(batch, source, policy, rs):
    """Unit-length latent displacements z2 - z1 produced by the positive-pair policy"""
    directions = positive_pairs(batch, source, policy, rs).directions
    norms = np.linalg.norm(directions, axis=1)
    keep = norms > 1e-12
    return directions[keep] / norms[keep, None]
