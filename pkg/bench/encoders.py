"""
Encoder, EMA target encoder, linear predictor and MoCo queue

The encoder is a leaky-linear MLP whose output rows are projected to the
unit sphere; there is no projection head, the encoder output is the
representation. Parameters live in plain dicts of float64 arrays:
- model.params: online encoder ('enc.W<l>', 'enc.b<l>') plus predictor ('pred.W', 'pred.b')
- model.target: EMA copy of the encoder weights, or None
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from bench.exceptions import ConfigurationError, ContractError, ShapeError
from bench.numerics import as_matrix, row_normalize

logger = logging.getLogger(__name__)

OBJECTIVES = ('simclr', 'moco', 'byol', 'simsiam', 'barlow')
TARGET_OBJECTIVES = ('moco', 'byol')
PREDICTOR_OBJECTIVES = ('byol', 'simsiam')


@dataclass(frozen=True)
class SslConfig:
    objective: str = 'simclr'
    tau: float = 0.07
    queue_size: int = 4096
    momentum: float = 0.99
    barlow_lambda: float = 0.005
    batch_size: int = 128
    hidden_dim: int = 256
    depth: int = 3
    slope: float = 0.2
    output_dim: int = 128

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.tau <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.queue_size < self.batch_size:
            raise ConfigurationError("MoCo queue size must be at least the batch size")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigurationError("EMA momentum must lie in (0, 1)")
        if self.barlow_lambda <= 0:
            raise ConfigurationError("Barlow lambda must be positive")
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be at least 2")
        if self.depth < 1:
            raise ConfigurationError("encoder depth must be at least 1")

    def to_dict(self):
        return asdict(self)


# =============================================================================
# MOCO QUEUE
# =============================================================================

class MocoQueue:
    """Ring buffer of K unit vectors; FIFO eviction once full"""

    def __init__(self, size, dim):
        self.size = int(size)
        self.dim = int(dim)
        self.buffer = np.zeros((self.size, self.dim))
        self.cursor = 0
        self.filled = 0

    def __len__(self):
        return self.filled

    @property
    def is_full(self):
        return self.filled == self.size

    def enqueue(self, reps):
        reps = as_matrix(reps, 'queue entries')
        if reps.shape[1] != self.dim:
            raise ShapeError(f"queue holds {self.dim}-dim vectors, got {reps.shape[1]}")
        if np.any(np.abs(np.linalg.norm(reps, axis=1) - 1.0) > 1e-9):
            raise ContractError("queue entries must be unit vectors")
        for row in reps:
            self.buffer[self.cursor] = row
            self.cursor = (self.cursor + 1) % self.size
        self.filled = min(self.size, self.filled + reps.shape[0])

    def contents(self):
        return self.buffer[:self.filled].copy()

    def to_dict(self):
        return {
            'size': self.size,
            'dim': self.dim,
            'cursor': self.cursor,
            'filled': self.filled,
            'buffer': self.buffer.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        queue = cls(data['size'], data['dim'])
        queue.buffer = np.array(data['buffer'], dtype=np.float64).reshape(queue.size, queue.dim)
        queue.cursor = int(data['cursor'])
        queue.filled = int(data['filled'])
        return queue


# =============================================================================
# MODEL
# =============================================================================

@dataclass
class SslModel:
    config: SslConfig
    input_dim: int
    params: dict
    target: dict = None
    queue: MocoQueue = None

    @property
    def has_target(self):
        return self.target is not None

    @property
    def has_predictor(self):
        return 'pred.W' in self.params

    def encoder_names(self):
        return [f'enc.{kind}{layer}' for layer in range(self.config.depth) for kind in ('W', 'b')]

    def to_dict(self):
        return {
            'config': self.config.to_dict(),
            'input_dim': self.input_dim,
            'params': {name: value.tolist() for name, value in sorted(self.params.items())},
            'target': None if self.target is None else {
                name: value.tolist() for name, value in sorted(self.target.items())
            },
            'queue': None if self.queue is None else self.queue.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        def arrays(block):
            return {name: np.array(value, dtype=np.float64) for name, value in block.items()}

        return cls(
            config=SslConfig(**data['config']),
            input_dim=int(data['input_dim']),
            params=arrays(data['params']),
            target=None if data['target'] is None else arrays(data['target']),
            queue=None if data['queue'] is None else MocoQueue.from_dict(data['queue']),
        )


def build_ssl_model(config, input_dim, rs):
    """He-initialized encoder; target copies the encoder; predictor starts at the identity"""
    sizes = [input_dim] + [config.hidden_dim] * (config.depth - 1) + [config.output_dim]
    params = {}
    for layer in range(config.depth):
        fan_in, fan_out = sizes[layer], sizes[layer + 1]
        params[f'enc.W{layer}'] = rs.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f'enc.b{layer}'] = np.zeros(fan_out)

    target = None
    if config.objective in TARGET_OBJECTIVES:
        target = {name: params[name].copy() for name in list(params)}
    if config.objective in PREDICTOR_OBJECTIVES:
        params['pred.W'] = np.eye(config.output_dim)
        params['pred.b'] = np.zeros(config.output_dim)
    queue = MocoQueue(config.queue_size, config.output_dim) if config.objective == 'moco' else None
    return SslModel(config=config, input_dim=input_dim, params=params, target=target, queue=queue)


def _mlp_forward(weights, x, depth, slope):
    h = x
    for layer in range(depth):
        h = h @ weights[f'enc.W{layer}'] + weights[f'enc.b{layer}']
        if layer < depth - 1:
            h = np.where(h > 0, h, slope * h)
    return row_normalize(h)


def bind_parameters(graph, model):
    """Record every online parameter on the graph; returns name -> node"""
    return {name: graph.parameter(name, value) for name, value in model.params.items()}


def encode_on(graph, nodes, model, x_node):
    """Record the online encoder pass on the graph"""
    h = x_node
    depth = model.config.depth
    for layer in range(depth):
        h = graph.add(graph.matmul(h, nodes[f'enc.W{layer}']), nodes[f'enc.b{layer}'])
        if layer < depth - 1:
            h = graph.leaky_relu(h, model.config.slope)
    return graph.row_normalize(h)


def predict_on(graph, nodes, z_node):
    return graph.add(graph.matmul(z_node, nodes['pred.W']), nodes['pred.b'])


def encode(model, batch, which='online'):
    """
    Unit-norm representations f(x) (online) or f(x; xi) (target).

    Differentiable online passes go through encode_on; this is the detached
    evaluation path.
    """
    x = as_matrix(batch, 'observations')
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"encoder expects dimension {model.input_dim}, got {x.shape[1]}")
    if which == 'target':
        if model.target is None:
            raise ContractError("model has no target network")
        weights = model.target
    elif which == 'online':
        weights = model.params
    else:
        raise ContractError(f"unknown encoder branch {which!r}")
    return _mlp_forward(weights, x, model.config.depth, model.config.slope)


def predict(model, reps):
    if not model.has_predictor:
        raise ContractError("model has no predictor")
    return reps @ model.params['pred.W'] + model.params['pred.b']


def ema_update(model):
    """xi <- alpha * xi + (1 - alpha) * theta"""
    if model.target is None:
        raise ContractError("model has no target network")
    alpha = model.config.momentum
    for name, value in model.target.items():
        model.target[name] = alpha * value + (1.0 - alpha) * model.params[name]
