"""
Experiment configuration

Frozen dataclasses built from a validated JSON payload (see
bench.serializers.config_serializers). Defaults reproduce the desk-scale
setup: batch 128, lr 1e-4, weight decay 1e-5, d2 = 128, 20 encoder epochs,
10 probe epochs, 5 neighbours, hold-out threshold 0.8.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from bench.encoders import SslConfig
from bench.scm import GEOMETRY_BOX, GEOMETRY_SPHERE

SCHEMA_VERSION = 1

# top-level blocks that determine each stage's artifacts
STAGE_SCOPES = {
    'data': ('schema_version', 'seed', 'geometry', 'data', 'generator'),
    'encoder': ('schema_version', 'seed', 'geometry', 'data', 'generator', 'ssl', 'train'),
    'probe': ('schema_version', 'seed', 'geometry', 'data', 'generator', 'ssl', 'train', 'probe'),
    'evaluation': (
        'schema_version', 'seed', 'geometry', 'data', 'generator', 'ssl', 'train', 'probe',
        'stability', 'identify',
    ),
}


@dataclass(frozen=True)
class DataConfig:
    train_size: int = 20_000
    test_seen_size: int = 4_000
    test_holdout_size: int = 4_000
    num_classes: int = 7
    threshold: float = 0.8
    sigma: float = 0.5
    scm: dict = None


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = 'invertible-mlp'
    class_embedding_dim: int = 8
    depth: int = 3
    slope: float = 0.2
    condition_cap: float = 10.0


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    kappa: float = 20.0
    style_vars: tuple = ('hue_obj', 'hue_spl', 'hue_bg', 'pos_z')
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 10
    batch_size: int = 128
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass(frozen=True)
class StableMapConfig:
    method: str = 'adam'
    epochs: int = 10
    batch_size: int = 128
    pair_mode: str = 'random'
    train_pairs: int = 4_000
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass(frozen=True)
class StabilityConfig:
    n_values: tuple = (1, 2, 3, 4)
    k_grid: tuple = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
    num_neighbors: int = 5
    test_points: int = 1_000
    subsets: str = 'all'
    variable_set: str = 'eligible'
    ranking_source: str = 'true-class'
    ate_resamples: int = 1_000
    stable_map: StableMapConfig = field(default_factory=StableMapConfig)


@dataclass(frozen=True)
class IdentifyConfig:
    holdout_fraction: float = 0.2
    directions: int = 2_000


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    geometry: str = GEOMETRY_BOX
    output_dir: str = ''
    seeds: tuple = (0, 1, 2)
    data: DataConfig = field(default_factory=DataConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    ssl: SslConfig = field(default_factory=SslConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    identify: IdentifyConfig = field(default_factory=IdentifyConfig)
    schema_version: int = SCHEMA_VERSION

    @property
    def is_sphere(self):
        return self.geometry == GEOMETRY_SPHERE

    def to_dict(self):
        return _listify(asdict(self))

    def with_overrides(self, seed=None, output_dir=None, objective=None):
        config = self
        if seed is not None:
            config = replace(config, seed=int(seed))
        if output_dir is not None:
            config = replace(config, output_dir=str(output_dir))
        if objective is not None:
            config = replace(config, ssl=replace(config.ssl, objective=objective))
        return config


def _listify(value):
    if isinstance(value, dict):
        return {k: _listify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_listify(v) for v in value]
    return value


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def _digest(data):
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def config_hash(config, stage='evaluation'):
    """SHA-256 of the canonical JSON of the config blocks that determine `stage`"""
    data = config.to_dict()
    return _digest({key: data[key] for key in STAGE_SCOPES[stage]})


def lineage_hash(config):
    """Encoder-stage hash without train.epochs, so a resumed run may extend training"""
    data = config.to_dict()
    scoped = {key: data[key] for key in STAGE_SCOPES['encoder']}
    scoped['train'] = {k: v for k, v in scoped['train'].items() if k != 'epochs'}
    return _digest(scoped)


def sweep_hash(config):
    """Evaluation-stage hash without the seed; equal across the seed directories of one sweep"""
    data = config.to_dict()
    return _digest({key: data[key] for key in STAGE_SCOPES['evaluation'] if key != 'seed'})
