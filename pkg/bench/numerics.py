"""
Numerics for the sslbench testbed

Dense matrices are plain float64 numpy arrays. This module provides:
- shape-checked primitives (matmul, row_normalize)
- CompGraph, a tape that records differentiable operations and replays
  them in reverse to produce parameter gradients
- Adam with decoupled weight decay
- least squares through the normal equations, with a ridge fallback
- gram_deviation, the scale-normalized semi-orthogonality measure
- central finite-difference gradient checking
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from bench.exceptions import (
    ContractError,
    DegenerateInputError,
    NumericError,
    ShapeError,
    SingularMatrixError,
)

logger = logging.getLogger(__name__)


# =============================================================================
# DENSE MATRIX PRIMITIVES
# =============================================================================

def as_matrix(data, name='matrix'):
    """Coerce to a finite 2-D float64 array"""
    array = np.asarray(data, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{name} contains non-finite entries")
    return array


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_normalize(m):
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize an all-zero row")
    return m / norms


# =============================================================================
# COMPUTATION GRAPH
# =============================================================================

@dataclass
class Node:
    op: str
    inputs: tuple
    value: np.ndarray
    attrs: dict = field(default_factory=dict)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the input's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class CompGraph:
    """
    Records a forward computation as an append-only list of nodes.

    Inputs of a node always precede it, so the graph is acyclic by
    construction and a single reverse sweep visits every node once.
    Parameter leaves are named; constant leaves never receive gradients.
    """

    def __init__(self):
        self.nodes = []
        self.parameters = {}

    def _push(self, op, inputs, value, **attrs):
        self.nodes.append(Node(op, tuple(inputs), value, attrs))
        return len(self.nodes) - 1

    def value(self, node):
        return self.nodes[node].value

    # -- leaves ---------------------------------------------------------------

    def parameter(self, name, value):
        if name in self.parameters:
            raise ContractError(f"parameter {name!r} already recorded")
        node = self._push('param', (), np.array(value, dtype=np.float64), name=name)
        self.parameters[name] = node
        return node

    def constant(self, value):
        return self._push('const', (), np.array(value, dtype=np.float64))

    def detach(self, node):
        """Stop-gradient: a constant leaf holding the node's current value"""
        return self.constant(self.value(node).copy())

    # -- linear algebra ---------------------------------------------------------

    def matmul(self, a, b):
        return self._push('matmul', (a, b), matmul(self.value(a), self.value(b)))

    def transpose(self, a):
        return self._push('transpose', (a,), self.value(a).T.copy())

    def add(self, a, b):
        return self._push('add', (a, b), self.value(a) + self.value(b))

    def sub(self, a, b):
        return self._push('sub', (a, b), self.value(a) - self.value(b))

    def mul(self, a, b):
        return self._push('mul', (a, b), self.value(a) * self.value(b))

    def scale(self, a, factor):
        return self._push('scale', (a,), self.value(a) * factor, factor=float(factor))

    def shift(self, a, offset):
        return self._push('shift', (a,), self.value(a) + offset, offset=float(offset))

    # -- elementwise --------------------------------------------------------------

    def leaky_relu(self, a, slope):
        x = self.value(a)
        return self._push('leaky_relu', (a,), np.where(x > 0, x, slope * x), slope=float(slope))

    def square(self, a):
        return self._push('square', (a,), self.value(a) ** 2)

    def exp(self, a):
        return self._push('exp', (a,), np.exp(self.value(a)))

    def log(self, a):
        x = self.value(a)
        if np.any(x <= 0):
            raise DegenerateInputError("log of a non-positive value")
        return self._push('log', (a,), np.log(x))

    # -- reductions -----------------------------------------------------------------

    def sum(self, a):
        return self._push('sum', (a,), np.array(self.value(a).sum()))

    def mean(self, a):
        return self._push('mean', (a,), np.array(self.value(a).mean()))

    def row_sum(self, a):
        return self._push('row_sum', (a,), self.value(a).sum(axis=1))

    def rowdot(self, a, b):
        return self._push('rowdot', (a, b), np.einsum('ij,ij->i', self.value(a), self.value(b)))

    def diag(self, a):
        return self._push('diag', (a,), np.diag(self.value(a)).copy())

    def gather(self, a, index):
        """Pick a[i, index[i]] for every row i"""
        index = np.asarray(index, dtype=np.int64)
        x = self.value(a)
        if index.shape != (x.shape[0],):
            raise ShapeError(f"gather index shape {index.shape} does not match {x.shape[0]} rows")
        return self._push('gather', (a,), x[np.arange(x.shape[0]), index], index=index)

    def logsumexp(self, a, mask=None):
        """Row-wise log-sum-exp over the entries where mask is True"""
        x = self.value(a)
        if mask is None:
            mask = np.ones_like(x, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise DegenerateInputError("logsumexp row with no selected entries")
        masked = np.where(mask, x, -np.inf)
        peak = masked.max(axis=1, keepdims=True)
        weights = np.where(mask, np.exp(masked - peak), 0.0)
        total = weights.sum(axis=1, keepdims=True)
        softmax = weights / total
        return self._push('logsumexp', (a,), (peak + np.log(total))[:, 0], softmax=softmax)

    # -- normalizations ---------------------------------------------------------

    def row_normalize(self, a):
        x = self.value(a)
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise DegenerateInputError("cannot normalize an all-zero row")
        return self._push('row_normalize', (a,), x / norms, norms=norms)

    def standardize_columns(self, a, min_std=1e-8):
        """Zero-mean, unit-variance columns using batch statistics (population std)"""
        x = self.value(a)
        std = x.std(axis=0, keepdims=True)
        if np.any(std <= min_std):
            raise DegenerateInputError("zero-variance column in batch standardization")
        y = (x - x.mean(axis=0, keepdims=True)) / std
        return self._push('standardize_columns', (a,), y, std=std)


# =============================================================================
# BACKWARD PASS
# =============================================================================

def _input_grads(graph, node, grad):
    """Gradient contribution of `grad` (d loss / d node output) to each input"""
    inputs = [graph.nodes[i].value for i in node.inputs]
    op = node.op
    out = node.value

    if op == 'matmul':
        a, b = inputs
        return [grad @ b.T, a.T @ grad]
    if op == 'transpose':
        return [grad.T]
    if op == 'add':
        return [_unbroadcast(grad, inputs[0].shape), _unbroadcast(grad, inputs[1].shape)]
    if op == 'sub':
        return [_unbroadcast(grad, inputs[0].shape), _unbroadcast(-grad, inputs[1].shape)]
    if op == 'mul':
        a, b = inputs
        return [_unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)]
    if op == 'scale':
        return [grad * node.attrs['factor']]
    if op == 'shift':
        return [grad]
    if op == 'leaky_relu':
        return [grad * np.where(inputs[0] > 0, 1.0, node.attrs['slope'])]
    if op == 'square':
        return [2.0 * inputs[0] * grad]
    if op == 'exp':
        return [grad * out]
    if op == 'log':
        return [grad / inputs[0]]
    if op == 'sum':
        return [np.full_like(inputs[0], float(grad))]
    if op == 'mean':
        return [np.full_like(inputs[0], float(grad) / inputs[0].size)]
    if op == 'row_sum':
        return [np.repeat(grad[:, None], inputs[0].shape[1], axis=1)]
    if op == 'rowdot':
        a, b = inputs
        return [grad[:, None] * b, grad[:, None] * a]
    if op == 'diag':
        return [np.diag(grad)]
    if op == 'gather':
        full = np.zeros_like(inputs[0])
        full[np.arange(full.shape[0]), node.attrs['index']] = grad
        return [full]
    if op == 'logsumexp':
        return [node.attrs['softmax'] * grad[:, None]]
    if op == 'row_normalize':
        y = out
        projected = grad - y * np.sum(grad * y, axis=1, keepdims=True)
        return [projected / node.attrs['norms']]
    if op == 'standardize_columns':
        y = out
        centered = grad - grad.mean(axis=0, keepdims=True)
        return [(centered - y * np.mean(grad * y, axis=0, keepdims=True)) / node.attrs['std']]
    raise ContractError(f"no backward rule for op {op!r}")


def backward(graph, loss_node):
    """
    Reverse sweep from a scalar node.

    Returns a dict mapping every parameter name to d loss / d parameter
    (zeros for parameters the loss does not depend on). Forward values are
    left untouched.
    """
    loss_value = graph.value(loss_node)
    if loss_value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss_value.shape}")

    grads = {loss_node: np.ones_like(loss_value)}
    for index in range(loss_node, -1, -1):
        grad = grads.pop(index, None)
        node = graph.nodes[index]
        if grad is None or node.op in ('param', 'const'):
            if grad is not None and node.op == 'param':
                grads[index] = grad
            continue
        for child, child_grad in zip(node.inputs, _input_grads(graph, node, grad)):
            if graph.nodes[child].op == 'const':
                continue
            if child in grads:
                grads[child] = grads[child] + child_grad
            else:
                grads[child] = child_grad

    result = {}
    for name, node in graph.parameters.items():
        grad = grads.get(node)
        result[name] = np.zeros_like(graph.value(node)) if grad is None else grad.reshape(graph.value(node).shape)
    return result


# =============================================================================
# ADAM
# =============================================================================

@dataclass
class AdamState:
    """Adam with decoupled weight decay; defaults follow the encoder training setup"""
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'lr': self.lr,
            'weight_decay': self.weight_decay,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'eps': self.eps,
            'step': self.step,
            'first_moment': {k: v.tolist() for k, v in sorted(self.first_moment.items())},
            'second_moment': {k: v.tolist() for k, v in sorted(self.second_moment.items())},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            lr=data['lr'],
            weight_decay=data['weight_decay'],
            beta1=data['beta1'],
            beta2=data['beta2'],
            eps=data['eps'],
            step=data['step'],
            first_moment={k: np.array(v, dtype=np.float64) for k, v in data['first_moment'].items()},
            second_moment={k: np.array(v, dtype=np.float64) for k, v in data['second_moment'].items()},
        )


def adam_step(state, params, grads):
    """
    One Adam update over a dict of named parameters.

    Weight decay is decoupled: lr * weight_decay * param is subtracted
    outside the moment estimates. Returns a new dict; inputs are not mutated.
    """
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step

    updated = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        if grad.shape != value.shape:
            raise ShapeError(f"gradient for {name!r} has shape {grad.shape}, parameter has {value.shape}")
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        step = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        updated[name] = value - state.lr * step - state.lr * state.weight_decay * value
    return updated


# =============================================================================
# LEAST SQUARES AND SEMI-ORTHOGONALITY
# =============================================================================

@dataclass
class LeastSquaresFit:
    coef: np.ndarray
    r2: np.ndarray
    ridge: float = 0.0


def r2_scores(Y, predicted):
    """Coefficient of determination per output column"""
    residual = ((Y - predicted) ** 2).sum(axis=0)
    total = ((Y - Y.mean(axis=0, keepdims=True)) ** 2).sum(axis=0)
    scores = np.empty(Y.shape[1])
    for j in range(Y.shape[1]):
        if total[j] > 0:
            scores[j] = 1.0 - residual[j] / total[j]
        else:
            scores[j] = 1.0 if residual[j] <= 1e-24 else -np.inf
    return scores


def least_squares(X, Y, ridge_fallback=True, pivot_tolerance=1e-12):
    """
    Solve min ||X B - Y||_F through the normal equations.

    The Gram matrix is Cholesky-factored; a pivot below
    pivot_tolerance * trace / d1 marks X as rank deficient. In that case a
    ridge of 1e-8 * trace / d1 is added when ridge_fallback is set, otherwise
    SingularMatrixError is raised.
    """
    X = as_matrix(X, 'X')
    Y = as_matrix(Y, 'Y')
    n, d1 = X.shape
    if Y.shape[0] != n:
        raise ShapeError(f"X has {n} rows but Y has {Y.shape[0]}")
    if n < d1:
        raise ContractError(f"least squares needs n >= d1, got n={n}, d1={d1}")

    gram = X.T @ X
    rhs = X.T @ Y
    scale = np.trace(gram) / d1
    if scale == 0.0:
        raise SingularMatrixError("design matrix is identically zero")

    ridge = 0.0
    try:
        factor = linalg.cho_factor(gram, lower=True)
        pivots = np.diag(factor[0]) ** 2
        singular = pivots.min() <= pivot_tolerance * scale
    except linalg.LinAlgError:
        singular = True

    if singular:
        if not ridge_fallback:
            raise SingularMatrixError("design matrix is rank deficient")
        ridge = 1e-8 * scale
        logger.warning("Rank-deficient design matrix, falling back to ridge %.3e", ridge)
        factor = linalg.cho_factor(gram + ridge * np.eye(d1), lower=True)

    coef = linalg.cho_solve(factor, rhs)
    return LeastSquaresFit(coef=coef, r2=r2_scores(Y, X @ coef), ridge=ridge)


def gram_deviation(A):
    """||A A^T / s - I||_F / sqrt(d2) with s = trace(A A^T) / d2"""
    A = as_matrix(A, 'A')
    d2, d1 = A.shape
    if d2 > d1:
        raise ContractError(f"gram_deviation needs d2 <= d1, got {A.shape}")
    gram = A @ A.T
    s = np.trace(gram) / d2
    if s <= 0.0:
        raise DegenerateInputError("zero matrix has no semi-orthogonal scale")
    return float(np.linalg.norm(gram / s - np.eye(d2)) / np.sqrt(d2))


# =============================================================================
# GRADIENT VERIFICATION
# =============================================================================

def numerical_gradient(loss_fn, params, h=1e-5):
    """Central finite differences of loss_fn(params) -> float for every entry"""
    grads = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = loss_fn(params)
            flat[i] = original - h
            minus = loss_fn(params)
            flat[i] = original
            grad.reshape(-1)[i] = (plus - minus) / (2.0 * h)
        grads[name] = grad
    return grads


def relative_error(analytic, numeric):
    diff = np.linalg.norm(analytic - numeric)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return 0.0 if scale < 1e-12 else float(diff / scale)


def gradient_check(build_loss, params, h=1e-5):
    """
    Compare backward() against central finite differences.

    build_loss(graph, nodes) must record the loss on `graph` given a dict of
    parameter nodes and return the scalar node. Returns the worst relative
    error across parameters.
    """
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}

    def evaluate(current):
        graph = CompGraph()
        nodes = {name: graph.parameter(name, value) for name, value in current.items()}
        return float(graph.value(build_loss(graph, nodes)))

    graph = CompGraph()
    nodes = {name: graph.parameter(name, value) for name, value in params.items()}
    analytic = backward(graph, build_loss(graph, nodes))
    numeric = numerical_gradient(evaluate, params, h=h)
    return max(relative_error(analytic[name], numeric[name]) for name in params)
