"""
Files of an experiment directory

- JSON: sorted keys, two-space indent, trailing newline; floats keep repr
  precision so load -> save reproduces the file byte for byte
- CSV: datasets, loss traces, reports and plot data
- checkpoints: encoder, probe and stable map, each stamped with
  schema_version and the config hash
- manifest.json: the config hash every CSV output was written under
- ExperimentLock: one process per experiment directory
"""

import csv
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bench.config import SCHEMA_VERSION
from bench.encoders import SslModel
from bench.exceptions import CheckpointParseError, ConfigurationError, DataError, SchemaVersionError
from bench.numerics import AdamState
from bench.probe import ProbeModel
from bench.scm import LatentBatch
from bench.stability import StableMap

logger = logging.getLogger(__name__)

LOCK_NAME = '.lock'

DATASET_FILES = {
    'train-seen': 'train_seen.csv',
    'test-seen': 'test_seen.csv',
    'test-holdout': 'test_holdout.csv',
}
SCM_FILE = 'scm.json'
GENERATOR_FILE = 'generator.json'
ENCODER_FILE = 'encoder.json'
LOSS_TRACE_FILE = 'loss_trace.csv'
PROBE_FILE = 'probe.json'
STABLE_MAP_FILE = 'stable_map.json'
STABILITY_FILE = 'stability.csv'
STABLE_MAP_REPORT_FILE = 'stable_map.csv'
IDENTIFY_FILE = 'identify.json'
PLOT_N_FILE = 'plot_metric_vs_n.csv'
PLOT_K_FILE = 'plot_metric_vs_k.csv'
AGGREGATE_FILE = 'aggregate.csv'
MANIFEST_FILE = 'manifest.json'


# =============================================================================
# JSON / CSV
# =============================================================================

def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dump_json(data):
    return json.dumps(data, sort_keys=True, indent=2, default=_plain) + '\n'


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(data), encoding='utf-8')
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    text = path.read_text(encoding='utf-8')
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointParseError(str(path), exc.lineno, exc.colno, exc.msg) from None


def check_schema(data, path=''):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    version = data.get('schema_version')
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(version, SCHEMA_VERSION)
    return data


def _cell(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    return path


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    with path.open(newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        return header, [row for row in reader]


# =============================================================================
# DATASETS
# =============================================================================

def write_latents(path, batch, names):
    rows = ([int(c)] + [float(v) for v in values] for c, values in zip(batch.class_ids, batch.values))
    return write_csv(path, ['class_id'] + list(names), rows)


def read_latents(path, names, geometry, split=''):
    header, rows = read_csv(path)
    expected = ['class_id'] + list(names)
    if header != expected:
        raise DataError(f"{path}: columns {header} do not match the SCM variables {expected}")
    if not rows:
        raise DataError(f"{path} holds no samples")
    try:
        class_ids = np.array([int(row[0]) for row in rows], dtype=np.int64)
        values = np.array([[float(v) for v in row[1:]] for row in rows], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    return LatentBatch(class_ids, values, geometry, split)


# =============================================================================
# CHECKPOINTS
# =============================================================================

@dataclass
class EncoderCheckpoint:
    config_hash: str
    lineage_hash: str
    epoch: int
    model: SslModel
    optimizer: AdamState
    streams: dict

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'kind': 'encoder',
            'config_hash': self.config_hash,
            'lineage_hash': self.lineage_hash,
            'epoch': self.epoch,
            'model': self.model.to_dict(),
            'optimizer': self.optimizer.to_dict(),
            'streams': self.streams,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            config_hash=data['config_hash'],
            lineage_hash=data['lineage_hash'],
            epoch=int(data['epoch']),
            model=SslModel.from_dict(data['model']),
            optimizer=AdamState.from_dict(data['optimizer']),
            streams=data['streams'],
        )


@dataclass
class ProbeCheckpoint:
    config_hash: str
    probe: ProbeModel

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'kind': 'probe',
            'config_hash': self.config_hash,
            'probe': self.probe.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(config_hash=data['config_hash'], probe=ProbeModel.from_dict(data['probe']))


@dataclass
class StableMapCheckpoint:
    config_hash: str
    stable_map: StableMap

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'kind': 'stable_map',
            'config_hash': self.config_hash,
            'stable_map': self.stable_map.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(config_hash=data['config_hash'], stable_map=StableMap.from_dict(data['stable_map']))


CHECKPOINT_KINDS = {
    'encoder': EncoderCheckpoint,
    'probe': ProbeCheckpoint,
    'stable_map': StableMapCheckpoint,
}


def save_checkpoint(path, checkpoint):
    return write_json(path, checkpoint.to_dict())


def load_checkpoint(path, kind=None):
    data = check_schema(read_json(path), path)
    found = data.get('kind')
    if found not in CHECKPOINT_KINDS:
        raise DataError(f"{path}: unknown checkpoint kind {found!r}")
    if kind is not None and found != kind:
        raise DataError(f"{path}: expected a {kind} checkpoint, found {found}")
    try:
        return CHECKPOINT_KINDS[found].from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed {found} checkpoint ({exc})") from None


def require_hash(path, found, expected):
    if found != expected:
        raise DataError(f"{path} was written under config {found[:12]}, current config is {expected[:12]}")


# =============================================================================
# MANIFEST
# =============================================================================

def read_manifest(directory):
    path = Path(directory) / MANIFEST_FILE
    data = check_schema(read_json(path), path)
    if not isinstance(data.get('files'), dict):
        raise DataError(f"{path}: malformed manifest")
    return data


def stamp_outputs(directory, names, config_hash, sweep_hash=None):
    """Record in the directory manifest that `names` were written under `config_hash`"""
    path = Path(directory) / MANIFEST_FILE
    manifest = read_manifest(directory) if path.exists() else {'schema_version': SCHEMA_VERSION, 'files': {}}
    manifest['files'].update({name: config_hash for name in names})
    if sweep_hash is not None:
        manifest['sweep_hash'] = sweep_hash
    return write_json(path, manifest)


def require_output(directory, name, expected):
    """The manifest entry of a CSV output must match the current config hash"""
    stamps = read_manifest(directory)['files']
    path = Path(directory) / name
    if name not in stamps:
        raise DataError(f"{path} has no entry in {MANIFEST_FILE}")
    require_hash(path, stamps[name], expected)


# =============================================================================
# LOCK
# =============================================================================

class ExperimentLock:
    """Exclusive ownership of an experiment directory for one process"""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.path = self.directory / LOCK_NAME
        self.held = False

    def acquire(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataError(f"{self.directory} is locked by another process ({self.path})") from None
        with os.fdopen(fd, 'w') as handle:
            handle.write(f"{os.getpid()}\n")
        self.held = True
        logger.debug("Acquired %s", self.path)

    def release(self):
        if self.held:
            self.path.unlink(missing_ok=True)
            self.held = False

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.release()
        return False
