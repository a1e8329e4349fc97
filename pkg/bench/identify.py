"""
Linear identifiability checks

- fit_A: least-squares map from embedded ground-truth latents to
  representations, scored on a held-out split
- nullspace_test: how strongly A suppresses augmentation directions
  compared with hold-out intervention directions
- seen_unseen_gap: probe accuracy on seen minus hold-out test data
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from bench.exceptions import ContractError, DegenerateInputError, ShapeError
from bench.numerics import as_matrix, gram_deviation, least_squares, r2_scores
from bench.probe import predict_classes

logger = logging.getLogger(__name__)


@dataclass
class LinearMapFit:
    A: np.ndarray
    r2: np.ndarray
    mean_r2: float
    min_r2: float
    scale: float
    gram_deviation: float
    fit_count: int
    heldout_count: int

    @property
    def d1(self):
        return self.A.shape[1]

    @property
    def d2(self):
        return self.A.shape[0]

    def summary(self):
        return {
            'd1': self.d1,
            'd2': self.d2,
            'scale': self.scale,
            'gram_deviation': self.gram_deviation,
            'mean_r2': self.mean_r2,
            'min_r2': self.min_r2,
            'fit_count': self.fit_count,
            'heldout_count': self.heldout_count,
        }


def _semi_orthogonal_side(A):
    """Gram on the smaller side: A A^T when d2 <= d1, else A^T A"""
    return A if A.shape[0] <= A.shape[1] else A.T


def fit_A(latents, reps, holdout_fraction=0.2, rs=None):
    """
    Fit reps ~ latents A^T without intercept.

    Rows are shuffled with rs when given. R^2 (per representation dimension)
    is measured on the last holdout_fraction of the rows. scale is the RMS
    singular value sqrt(trace(A A^T) / min(d1, d2)), so a semi-orthogonal A
    stretches its row space by exactly `scale`.
    """
    latents = as_matrix(latents, 'latents')
    reps = as_matrix(reps, 'representations')
    n, d1 = latents.shape
    if reps.shape[0] != n:
        raise ShapeError(f"{n} latents but {reps.shape[0]} representations")
    if n < 5 * d1:
        raise ContractError(f"fit_A needs at least {5 * d1} samples, got {n}")
    if not 0.0 < holdout_fraction < 1.0:
        raise ContractError("holdout fraction must lie in (0, 1)")

    order = rs.permutation(n) if rs is not None else np.arange(n)
    heldout = max(1, int(round(holdout_fraction * n)))
    fit_rows, test_rows = order[:n - heldout], order[n - heldout:]

    solution = least_squares(latents[fit_rows], reps[fit_rows])
    A = solution.coef.T
    predicted = latents[test_rows] @ solution.coef
    r2 = r2_scores(reps[test_rows], predicted)

    side = _semi_orthogonal_side(A)
    scale = float(np.sqrt(np.trace(side @ side.T) / side.shape[0]))
    fit = LinearMapFit(
        A=A,
        r2=r2,
        mean_r2=float(np.mean(r2)),
        min_r2=float(np.min(r2)),
        scale=scale,
        gram_deviation=gram_deviation(side),
        fit_count=int(fit_rows.size),
        heldout_count=int(test_rows.size),
    )
    logger.info("fit_A: mean R2 %.4f, gram deviation %.4f, scale %.4f", fit.mean_r2, fit.gram_deviation, scale)
    return fit


def _unit_directions(directions, name):
    directions = as_matrix(directions, name)
    norms = np.linalg.norm(directions, axis=1)
    directions = directions[norms > 1e-12]
    if directions.shape[0] == 0:
        raise DegenerateInputError(f"no nonzero {name}")
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


@dataclass
class NullspaceReport:
    r_aug: float
    r_hold: float
    ratio: float
    r_aug_scaled: float
    r_hold_scaled: float
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)


def nullspace_test(fit, augmented_dirs, holdout_dirs):
    """Mean ||A dz|| over unit augmentation and hold-out directions, their ratio, and both divided by scale"""
    augmented = _unit_directions(augmented_dirs, 'augmentation directions')
    holdout = _unit_directions(holdout_dirs, 'hold-out directions')
    if augmented.shape[1] != fit.d1 or holdout.shape[1] != fit.d1:
        raise ShapeError(f"directions must have dimension {fit.d1}")

    r_aug = float(np.mean(np.linalg.norm(augmented @ fit.A.T, axis=1)))
    r_hold = float(np.mean(np.linalg.norm(holdout @ fit.A.T, axis=1)))
    if r_hold == 0.0:
        raise DegenerateInputError("A annihilates every hold-out direction")
    return NullspaceReport(
        r_aug=r_aug,
        r_hold=r_hold,
        ratio=r_aug / r_hold,
        r_aug_scaled=r_aug / fit.scale,
        r_hold_scaled=r_hold / fit.scale,
        counts={'augmented': int(augmented.shape[0]), 'holdout': int(holdout.shape[0])},
    )


@dataclass
class GapReport:
    seen_accuracy: float
    holdout_accuracy: float
    gap: float
    per_class: dict

    def to_dict(self):
        return {
            'seen_accuracy': self.seen_accuracy,
            'holdout_accuracy': self.holdout_accuracy,
            'gap': self.gap,
            'per_class': {str(k): v for k, v in sorted(self.per_class.items())},
        }


def seen_unseen_gap(probe, seen_reps, seen_labels, holdout_reps, holdout_labels):
    """accuracy(seen) - accuracy(hold-out), overall and for every class present in both"""
    seen_labels = np.asarray(seen_labels)
    holdout_labels = np.asarray(holdout_labels)
    if seen_labels.size == 0 or holdout_labels.size == 0:
        raise DegenerateInputError("both splits must be nonempty")
    seen_hits = predict_classes(probe, seen_reps) == seen_labels
    holdout_hits = predict_classes(probe, holdout_reps) == holdout_labels

    per_class = {}
    for class_id in sorted(set(seen_labels.tolist()) & set(holdout_labels.tolist())):
        per_class[int(class_id)] = float(
            seen_hits[seen_labels == class_id].mean() - holdout_hits[holdout_labels == class_id].mean()
        )
    seen_accuracy = float(seen_hits.mean())
    holdout_accuracy = float(holdout_hits.mean())
    return GapReport(seen_accuracy, holdout_accuracy, seen_accuracy - holdout_accuracy, per_class)
