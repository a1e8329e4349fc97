"""
Linear probe on frozen representations

logits = rep W + b with W of shape (d2, C). The probe is the downstream
task whose accuracy and prediction score measure stability.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from bench.exceptions import ContractError, DegenerateInputError, NumericError, ShapeError
from bench.numerics import AdamState, CompGraph, adam_step, as_matrix, backward

logger = logging.getLogger(__name__)


@dataclass
class ProbeModel:
    W: np.ndarray
    b: np.ndarray
    trained_on: str = ''
    missing_classes: list = field(default_factory=list)

    @property
    def num_classes(self):
        return self.W.shape[1]

    def to_dict(self):
        return {
            'W': self.W.tolist(),
            'b': self.b.tolist(),
            'trained_on': self.trained_on,
            'missing_classes': list(self.missing_classes),
        }

    @classmethod
    def from_dict(cls, data):
        W = np.array(data['W'], dtype=np.float64)
        return cls(
            W=W,
            b=np.array(data['b'], dtype=np.float64).reshape(W.shape[1]),
            trained_on=data.get('trained_on', ''),
            missing_classes=list(data.get('missing_classes', [])),
        )


def _check_labels(labels, count, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (count,):
        raise ShapeError(f"expected {count} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    return labels


def cross_entropy_node(graph, reps, W, b, labels):
    """Mean multinomial cross-entropy of logits = reps W + b"""
    logits = graph.add(graph.matmul(reps, W), b)
    return graph.mean(graph.sub(graph.logsumexp(logits), graph.gather(logits, labels)))


def train_probe(reps, labels, num_classes, rs, epochs=10, batch_size=128, optimizer=None, trained_on=''):
    """
    Fit the probe with Adam on shuffled mini-batches.

    `reps` is never modified. Classes absent from `labels` are recorded in
    probe.missing_classes and logged.
    """
    reps = as_matrix(reps, 'representations')
    labels = _check_labels(labels, reps.shape[0], num_classes)
    if epochs < 1:
        raise ContractError("probe training needs at least one epoch")
    optimizer = optimizer or AdamState()

    missing = sorted(set(range(num_classes)) - set(np.unique(labels).tolist()))
    if missing:
        logger.warning("Probe training labels have no samples of classes %s", missing)

    params = {'probe.W': np.zeros((reps.shape[1], num_classes)), 'probe.b': np.zeros(num_classes)}
    count = reps.shape[0]
    for epoch in range(epochs):
        order = rs.permutation(count)
        losses = []
        for start in range(0, count, batch_size):
            index = order[start:start + batch_size]
            graph = CompGraph()
            W = graph.parameter('probe.W', params['probe.W'])
            b = graph.parameter('probe.b', params['probe.b'])
            loss = cross_entropy_node(graph, graph.constant(reps[index]), W, b, labels[index])
            value = float(graph.value(loss))
            if not np.isfinite(value):
                raise NumericError("probe cross-entropy is not finite")
            params = adam_step(optimizer, params, backward(graph, loss))
            losses.append(value)
        logger.debug("probe epoch %d: cross-entropy %.6f", epoch, np.mean(losses))

    probe = ProbeModel(params['probe.W'], params['probe.b'], trained_on, missing)
    logger.info("Trained probe on %d samples, train accuracy %.4f", count, accuracy(probe, reps, labels))
    return probe


def logits(probe, reps):
    reps = np.atleast_2d(np.asarray(reps, dtype=np.float64))
    if reps.shape[1] != probe.W.shape[0]:
        raise ShapeError(f"probe expects dimension {probe.W.shape[0]}, got {reps.shape[1]}")
    return reps @ probe.W + probe.b


def predict_scores(probe, reps):
    """(n, C) class probabilities"""
    return softmax(logits(probe, reps), axis=1)


def predict_score(probe, rep, target_class):
    if not 0 <= target_class < probe.num_classes:
        raise ContractError(f"unknown class {target_class}")
    return float(predict_scores(probe, rep)[0, target_class])


def target_scores(probe, reps, labels):
    """Probability of each row's own label"""
    scores = predict_scores(probe, reps)
    labels = _check_labels(labels, scores.shape[0], probe.num_classes)
    return scores[np.arange(scores.shape[0]), labels]


def predict_classes(probe, reps):
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(logits(probe, reps), axis=1)


def accuracy(probe, reps, labels):
    reps = np.atleast_2d(np.asarray(reps, dtype=np.float64))
    if reps.shape[0] == 0:
        raise DegenerateInputError("accuracy of an empty set")
    labels = _check_labels(labels, reps.shape[0], probe.num_classes)
    return float(np.mean(predict_classes(probe, reps) == labels))
