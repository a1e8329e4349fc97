"""
Experiment pipeline

Each cmd_* function is one stage of an experiment directory:
- cmd_generate: datasets, SCM and generator descriptions
- cmd_train: encoder checkpoint and loss trace (resumable)
- cmd_probe: linear probe on frozen train-seen representations
- cmd_evaluate: deterioration sweep, remedies, treatment effects, identifiability
- cmd_identify: identifiability summary only
- cmd_checkpoint_roundtrip: load -> save -> compare
- cmd_aggregate: mean and standard error over per-seed reports

Every stage holds the directory lock while it runs. Randomness comes from
RandomStream(config.seed, <stage stream id>) so one seed fixes every file.
CSV outputs are recorded in manifest.json with the config hash they were
written under, and readers check that record.
"""

import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bench import persistence as files
from bench.config import SCHEMA_VERSION, config_hash, lineage_hash, sweep_hash
from bench.encoders import build_ssl_model, encode
from bench.exceptions import ConfigurationError, DataError
from bench.generator import GeneratorSpec, build_generator_spec, embed_batch, generate, injectivity_check
from bench.identify import fit_A, nullspace_test, seen_unseen_gap
from bench.numerics import AdamState
from bench.probe import predict_scores, train_probe
from bench.sampling import RandomStream
from bench.scm import SPLITS, HoldoutRule, ScmSpec, default_scm_spec, sample_latents
from bench.serializers import build_experiment_config
from bench.stability import (
    METRICS,
    REPORT_HEADER,
    ReportRow,
    RobustDimsConfig,
    ShiftContext,
    StabilityReport,
    aggregate_reports,
    apply_stable_map,
    ate_estimate,
    candidate_variables,
    fit_stable_map,
    intervention_pairs,
    make_unstable_pairs,
    pair_metrics,
    per_sample_metric,
    robust_method_name,
    robust_pair_metrics,
    stable_map_training_pairs,
)
from bench.training import LOSS_TRACE_HEADER, DataSource, PairPolicy, augmentation_directions, train_epoch

logger = logging.getLogger(__name__)

STREAM_DATA = 0
STREAM_MODEL = 2
STREAM_TRAIN = 3
STREAM_PROBE = 4
STREAM_EVALUATE = 5
STREAM_IDENTIFY = 6
STREAM_ROUNDTRIP = 7

STABLE_MAP_HEADER = [
    'objective', 'geometry', 'n', 'metric',
    'stable_without_map', 'unstable_without_map', 'stable_with_map', 'unstable_with_map', 'seed',
]
PLOT_N_HEADER = ['objective', 'geometry', 'method', 'metric', 'n', 'value', 'stderr', 'seed']
PLOT_K_HEADER = ['objective', 'geometry', 'n', 'k_percent', 'metric', 'value', 'stderr', 'seed']
ATE_FILE = 'ate.csv'
ATE_HEADER = ['variable', 'value_range', 'estimate', 'low', 'high', 'count']
REPORT_FILES = (
    files.STABILITY_FILE, files.STABLE_MAP_REPORT_FILE, files.PLOT_N_FILE, files.PLOT_K_FILE, ATE_FILE,
)


@dataclass
class Experiment:
    """A config bound to its directory and its generative pieces"""
    config: object
    directory: Path
    scm: ScmSpec
    rule: HoldoutRule
    generator: GeneratorSpec

    @property
    def context(self):
        return ShiftContext(self.scm, self.rule, self.generator)

    def path(self, name):
        return self.directory / name

    def render(self, batch):
        return generate(embed_batch(batch, self.generator), self.generator)

    def load_split(self, split):
        name = files.DATASET_FILES[split]
        files.require_output(self.directory, name, config_hash(self.config, 'data'))
        return files.read_latents(self.path(name), self.scm.names, self.config.geometry, split)


def load_config(path=None, payload=None, seed=None, output_dir=None, objective=None, output_root=None):
    """
    Validated ExperimentConfig from a JSON file (or an already parsed
    payload) with command-line overrides applied. Without an output
    directory the run goes to <output_root>/<objective>-<geometry>-seed<seed>.
    """
    if payload is None:
        payload = files.read_json(path) if path else {'schema_version': SCHEMA_VERSION}
    config = build_experiment_config(payload).with_overrides(seed, output_dir, objective)
    if not config.output_dir:
        if not output_root:
            raise ConfigurationError("no output directory given and no default output root")
        name = f'{config.ssl.objective}-{config.geometry}-seed{config.seed}'
        config = config.with_overrides(output_dir=Path(output_root) / name)
    return config


def experiment_directory(config):
    if not config.output_dir:
        raise ConfigurationError("no output directory given")
    return Path(config.output_dir)


def build_scm(config):
    if config.data.scm is None:
        return default_scm_spec(config.data.num_classes, config.data.sigma)
    scm = ScmSpec.from_dict(config.data.scm)
    if scm.num_classes != config.data.num_classes:
        raise ConfigurationError(
            f"inline SCM has {scm.num_classes} classes but data.num_classes is {config.data.num_classes}"
        )
    return scm


def build_generator(config, scm):
    return build_generator_spec(
        config.generator.kind,
        scm.num_classes,
        config.generator.class_embedding_dim,
        scm.dim,
        seed=config.seed,
        depth=config.generator.depth,
        slope=config.generator.slope,
        condition_cap=config.generator.condition_cap,
    )


def open_experiment(config):
    """Load the SCM and generator written by cmd_generate and check they belong to this config"""
    directory = experiment_directory(config)
    expected = config_hash(config, 'data')
    scm_data = files.check_schema(files.read_json(directory / files.SCM_FILE), files.SCM_FILE)
    generator_data = files.check_schema(files.read_json(directory / files.GENERATOR_FILE), files.GENERATOR_FILE)
    files.require_hash(directory / files.SCM_FILE, scm_data['config_hash'], expected)
    files.require_hash(directory / files.GENERATOR_FILE, generator_data['config_hash'], expected)

    scm = ScmSpec.from_dict(scm_data['scm'])
    generator = GeneratorSpec.from_dict(generator_data['generator'])
    if generator.num_vars != scm.dim:
        raise DataError(f"generator expects {generator.num_vars} variables, SCM has {scm.dim}")
    return Experiment(config, directory, scm, HoldoutRule.from_dict(scm_data['holdout']), generator)


def _pair_policy(config):
    return PairPolicy(config.geometry, config.train.kappa, tuple(config.train.style_vars))


def _adam(block):
    return AdamState(lr=block.lr, weight_decay=block.weight_decay)


# =============================================================================
# GENERATE
# =============================================================================

def cmd_generate(config):
    directory = experiment_directory(config)
    with files.ExperimentLock(directory):
        scm = build_scm(config)
        rule = HoldoutRule(config.data.threshold)
        generator = build_generator(config, scm)
        sizes = {
            'train-seen': config.data.train_size,
            'test-seen': config.data.test_seen_size,
            'test-holdout': config.data.test_holdout_size,
        }
        rs = RandomStream(config.seed, STREAM_DATA)
        for index, split in enumerate(SPLITS):
            batch = sample_latents(scm, rule, split, rs.fork(index), sizes[split], config.geometry)
            files.write_latents(directory / files.DATASET_FILES[split], batch, scm.names)
            logger.info("Wrote %d %s latents", len(batch), split)
        files.stamp_outputs(directory, files.DATASET_FILES.values(), config_hash(config, 'data'))

        stamp = {'schema_version': config.schema_version, 'config_hash': config_hash(config, 'data')}
        files.write_json(directory / files.SCM_FILE, {**stamp, 'scm': scm.to_dict(), 'holdout': rule.to_dict()})
        injectivity = injectivity_check(generator, 1_000, rs.fork(len(SPLITS)))
        files.write_json(
            directory / files.GENERATOR_FILE,
            {**stamp, 'generator': generator.to_dict(), 'injectivity': injectivity.to_dict()},
        )
    return {'directory': str(directory), 'sizes': sizes, 'latent_dim': generator.latent_dim}


# =============================================================================
# TRAIN
# =============================================================================

def cmd_train(config, resume=None):
    """
    Train the encoder for config.train.epochs epochs, writing the checkpoint
    and loss trace after every epoch. With `resume`, training continues
    from the checkpoint's epoch and reproduces the uninterrupted run.
    """
    directory = experiment_directory(config)
    with files.ExperimentLock(directory):
        experiment = open_experiment(config)
        train = experiment.load_split('train-seen')
        trace = []

        if resume:
            checkpoint = files.load_checkpoint(resume, 'encoder')
            if checkpoint.lineage_hash != lineage_hash(config):
                raise DataError(f"{resume} was trained under a different configuration")
            model, optimizer, start = checkpoint.model, checkpoint.optimizer, checkpoint.epoch
            trace_path = Path(resume).parent / files.LOSS_TRACE_FILE
            if trace_path.exists():
                files.require_output(trace_path.parent, trace_path.name, lineage_hash(config))
                _, rows = files.read_csv(trace_path)
                trace = [row for row in rows if int(row[0]) < start]
            else:
                logger.warning("No loss trace next to %s; the trace restarts at epoch %d", resume, start)
            logger.info("Resuming %s training at epoch %d", config.ssl.objective, start)
        else:
            model = build_ssl_model(config.ssl, experiment.generator.latent_dim, RandomStream(config.seed, STREAM_MODEL))
            optimizer = _adam(config.train.optimizer)
            start = 0

        if model.input_dim != experiment.generator.latent_dim:
            raise DataError(
                f"encoder input dimension {model.input_dim} does not match the dataset's {experiment.generator.latent_dim}"
            )

        source = DataSource(train, experiment.scm, experiment.rule, experiment.generator)
        policy = _pair_policy(config)
        train_rs = RandomStream(config.seed, STREAM_TRAIN)
        for epoch in range(start, config.train.epochs):
            records = train_epoch(model, source, policy, optimizer, train_rs.fork(epoch), epoch)
            trace.extend(record.to_row() for record in records)
            checkpoint = files.EncoderCheckpoint(
                config_hash=config_hash(config, 'encoder'),
                lineage_hash=lineage_hash(config),
                epoch=epoch + 1,
                model=model,
                optimizer=optimizer,
                streams={'model': RandomStream(config.seed, STREAM_MODEL).describe(), 'train': train_rs.describe()},
            )
            files.save_checkpoint(directory / files.ENCODER_FILE, checkpoint)
            files.write_csv(directory / files.LOSS_TRACE_FILE, LOSS_TRACE_HEADER, trace)
            files.stamp_outputs(directory, [files.LOSS_TRACE_FILE], lineage_hash(config))
    return {'directory': str(directory), 'epochs': config.train.epochs, 'batches': len(trace)}


# =============================================================================
# PROBE
# =============================================================================

def _load_encoder(experiment):
    path = experiment.path(files.ENCODER_FILE)
    checkpoint = files.load_checkpoint(path, 'encoder')
    files.require_hash(path, checkpoint.config_hash, config_hash(experiment.config, 'encoder'))
    return checkpoint.model


def _fit_probe(experiment, model):
    config = experiment.config
    train = experiment.load_split('train-seen')
    reps = encode(model, experiment.render(train))
    probe = train_probe(
        reps, train.class_ids, experiment.scm.num_classes, RandomStream(config.seed, STREAM_PROBE),
        epochs=config.probe.epochs,
        batch_size=config.probe.batch_size,
        optimizer=_adam(config.probe.optimizer),
        trained_on=config_hash(config, 'encoder'),
    )
    files.save_checkpoint(
        experiment.path(files.PROBE_FILE), files.ProbeCheckpoint(config_hash(config, 'probe'), probe)
    )
    return probe


def _load_or_fit_probe(experiment, model):
    path = experiment.path(files.PROBE_FILE)
    if not path.exists():
        logger.info("No probe checkpoint in %s; training one", experiment.directory)
        return _fit_probe(experiment, model)
    checkpoint = files.load_checkpoint(path, 'probe')
    files.require_hash(path, checkpoint.config_hash, config_hash(experiment.config, 'probe'))
    return checkpoint.probe


def cmd_probe(config):
    directory = experiment_directory(config)
    with files.ExperimentLock(directory):
        experiment = open_experiment(config)
        probe = _fit_probe(experiment, _load_encoder(experiment))
    return {'directory': str(directory), 'missing_classes': probe.missing_classes}


# =============================================================================
# EVALUATE
# =============================================================================

@dataclass
class EvaluationInputs:
    model: object
    probe: object
    seen: object
    seen_reps: np.ndarray
    holdout: object
    holdout_reps: np.ndarray

    def encode(self, observations):
        return encode(self.model, observations)


def _evaluation_inputs(experiment):
    model = _load_encoder(experiment)
    probe = _load_or_fit_probe(experiment, model)
    seen = experiment.load_split('test-seen')
    holdout = experiment.load_split('test-holdout')
    return EvaluationInputs(
        model=model,
        probe=probe,
        seen=seen,
        seen_reps=encode(model, experiment.render(seen)),
        holdout=holdout,
        holdout_reps=encode(model, experiment.render(holdout)),
    )


def _fit_remedy_map(experiment, inputs, rs):
    config = experiment.config
    settings = config.stability.stable_map
    train = experiment.load_split('train-seen')
    count = min(len(train), settings.train_pairs)
    train = train[np.arange(count)]
    pairs = stable_map_training_pairs(
        train, encode(inputs.model, experiment.render(train)), inputs.holdout, inputs.holdout_reps,
        inputs.probe, experiment.context, rs.fork(0),
        num_neighbors=config.stability.num_neighbors,
        pair_mode=settings.pair_mode,
        variable_set=config.stability.variable_set,
        pool_encoder=inputs.encode,
    )
    stable_map = fit_stable_map(
        pairs.unstable_reps, pairs.stable_reps, rs.fork(1),
        epochs=settings.epochs,
        batch_size=settings.batch_size,
        optimizer=_adam(settings.optimizer),
        method=settings.method,
    )
    files.save_checkpoint(
        experiment.path(files.STABLE_MAP_FILE), files.StableMapCheckpoint(config_hash(config), stable_map)
    )
    return stable_map


def stability_sweep(experiment, inputs, stable_map, rs):
    """StabilityReport rows for n = 0 and every configured n, plus the with and without stable-map comparison rows"""
    config = experiment.config
    settings = config.stability
    report = StabilityReport(config.ssl.objective, config.geometry, config.seed)
    count = min(len(inputs.seen), settings.test_points)
    seen = inputs.seen[np.arange(count)]
    seen_reps = inputs.seen_reps[:count]
    map_rows = []

    for metric in METRICS:
        plain = per_sample_metric(inputs.probe, seen_reps, seen.class_ids, metric)
        report.add_pair_metrics(0, 'none', metric, plain, plain)
    report.add(0, 'none', 'sample_count', count)

    for n in settings.n_values:
        pairs = make_unstable_pairs(
            seen, seen_reps, inputs.holdout, inputs.holdout_reps, inputs.probe, n, experiment.context,
            rs.fork(n),
            num_neighbors=settings.num_neighbors,
            subsets=settings.subsets,
            variable_set=settings.variable_set,
            pool_encoder=inputs.encode,
        )
        mapped_stable = apply_stable_map(stable_map, pairs.stable_reps)
        mapped_unstable = apply_stable_map(stable_map, pairs.unstable_reps)
        for metric in METRICS:
            plain = pair_metrics(pairs, inputs.probe, metric)
            mapped = pair_metrics(pairs, inputs.probe, metric, mapped_stable, mapped_unstable)
            report.add_pair_metrics(n, 'none', metric, *plain)
            report.add_pair_metrics(n, 'stable_map', metric, *mapped)
            for k in settings.k_grid:
                robust = RobustDimsConfig(k, settings.ranking_source)
                report.add_pair_metrics(
                    n, robust_method_name(k), metric, *robust_pair_metrics(pairs, inputs.probe, robust, metric)
                )
            map_rows.append([
                config.ssl.objective, config.geometry, n, metric,
                float(plain[0].mean()), float(plain[1].mean()),
                float(mapped[0].mean()), float(mapped[1].mean()),
                config.seed,
            ])
        report.add(n, 'none', 'sample_count', len(pairs))
        logger.info(
            "n=%d: accuracy deterioration %.4f over %d pairs",
            n, report.value(n, 'none', 'accuracy_deterioration'), len(pairs),
        )
    return report, map_rows


def treatment_effects(experiment, inputs, rs):
    """ATE of do(variable) per eligible variable, for hold-out values and a seen-range control"""
    config = experiment.config
    count = min(len(inputs.seen), config.stability.test_points)
    seen = inputs.seen[np.arange(count)]
    seen_reps = inputs.seen_reps[:count]
    rows = []
    for number, name in enumerate(candidate_variables(experiment.scm, config.stability.variable_set)):
        for offset, value_range in enumerate(('holdout', 'seen')):
            stream = rs.fork(2 * number + offset)
            _, treated = intervention_pairs(seen, (name,), experiment.context, stream, value_range)
            treated_reps = encode(inputs.model, experiment.render(treated))
            result = ate_estimate(
                inputs.probe, seen_reps, treated_reps, seen.class_ids, stream.fork(0),
                resamples=config.stability.ate_resamples,
            )
            rows.append([name, value_range, result.estimate, result.low, result.high, result.count])
    return rows


def cmd_evaluate(config):
    directory = experiment_directory(config)
    with files.ExperimentLock(directory):
        experiment = open_experiment(config)
        inputs = _evaluation_inputs(experiment)
        rs = RandomStream(config.seed, STREAM_EVALUATE)

        stable_map = _fit_remedy_map(experiment, inputs, rs.fork(0))
        report, map_rows = stability_sweep(experiment, inputs, stable_map, rs.fork(1))
        files.write_csv(experiment.path(files.STABILITY_FILE), REPORT_HEADER, report.to_rows())
        files.write_csv(experiment.path(files.STABLE_MAP_REPORT_FILE), STABLE_MAP_HEADER, map_rows)
        write_plot_data(directory, report.rows)
        files.write_csv(experiment.path(ATE_FILE), ATE_HEADER, treatment_effects(experiment, inputs, rs.fork(2)))
        files.stamp_outputs(directory, REPORT_FILES, config_hash(config), sweep_hash(config))

        summary = identify_summary(experiment, inputs)
        files.write_json(experiment.path(files.IDENTIFY_FILE), summary)
    return {
        'directory': str(directory),
        'rows': len(report.rows),
        'mean_r2': summary['fit']['mean_r2'],
        'nullspace_ratio': summary['nullspace']['ratio'],
    }


# =============================================================================
# IDENTIFY
# =============================================================================

def holdout_directions(experiment, batch, rs):
    """Unit embedded-latent displacements of single-variable hold-out interventions"""
    names = experiment.scm.eligible_names
    choice = rs.integers(0, len(names), size=len(batch))
    directions = []
    for number, name in enumerate(names):
        rows = np.flatnonzero(choice == number)
        if not rows.size:
            continue
        control, treated = intervention_pairs(batch[rows], (name,), experiment.context, rs.fork(number))
        directions.append(embed_batch(treated, experiment.generator) - embed_batch(control, experiment.generator))
    directions = np.concatenate(directions)
    norms = np.linalg.norm(directions, axis=1)
    keep = norms > 1e-12
    return directions[keep] / norms[keep, None]


def identify_summary(experiment, inputs):
    config = experiment.config
    rs = RandomStream(config.seed, STREAM_IDENTIFY)
    latents = embed_batch(inputs.seen, experiment.generator)
    fit = fit_A(latents, inputs.seen_reps, config.identify.holdout_fraction, rs.fork(0))

    untrained = build_ssl_model(config.ssl, experiment.generator.latent_dim, RandomStream(config.seed, STREAM_MODEL))
    untrained_fit = fit_A(
        latents, encode(untrained, experiment.render(inputs.seen)), config.identify.holdout_fraction, rs.fork(0)
    )

    count = min(len(inputs.seen), config.identify.directions)
    subset = inputs.seen[np.arange(count)]
    source = DataSource(subset, experiment.scm, experiment.rule, experiment.generator)
    augmented = augmentation_directions(subset, source, _pair_policy(config), rs.fork(1))
    nullspace = nullspace_test(fit, augmented, holdout_directions(experiment, subset, rs.fork(2)))
    gap = seen_unseen_gap(
        inputs.probe, inputs.seen_reps, inputs.seen.class_ids, inputs.holdout_reps, inputs.holdout.class_ids
    )
    return {
        'schema_version': config.schema_version,
        'config_hash': config_hash(config),
        'fit': {**fit.summary(), 'r2': fit.r2.tolist()},
        'untrained_mean_r2': untrained_fit.mean_r2,
        'nullspace': nullspace.to_dict(),
        'seen_unseen_gap': gap.to_dict(),
    }


def cmd_identify(config):
    directory = experiment_directory(config)
    with files.ExperimentLock(directory):
        experiment = open_experiment(config)
        summary = identify_summary(experiment, _evaluation_inputs(experiment))
        files.write_json(experiment.path(files.IDENTIFY_FILE), summary)
    return {'directory': str(directory), 'mean_r2': summary['fit']['mean_r2']}


# =============================================================================
# REPORTS
# =============================================================================

def _robust_k(method):
    return float(method[len('robust_k'):])


def write_plot_data(directory, rows):
    """Metric-vs-n rows for the unmasked methods and metric-vs-k rows for Robust Dimensions"""
    by_n = [
        [r.objective, r.geometry, r.method, r.metric, r.n, r.value, r.stderr, r.seed]
        for r in rows if not r.method.startswith('robust_k')
    ]
    by_k = [
        [r.objective, r.geometry, r.n, _robust_k(r.method), r.metric, r.value, r.stderr, r.seed]
        for r in rows if r.method.startswith('robust_k')
    ]
    files.write_csv(Path(directory) / files.PLOT_N_FILE, PLOT_N_HEADER, by_n)
    files.write_csv(Path(directory) / files.PLOT_K_FILE, PLOT_K_HEADER, by_k)


def read_report(path, expected_hash=None):
    """StabilityReport from a stability.csv; with expected_hash the manifest entry must match it"""
    path = Path(path)
    if expected_hash is not None:
        files.require_output(path.parent, path.name, expected_hash)
    header, rows = files.read_csv(path)
    if header != REPORT_HEADER:
        raise DataError(f"{path}: unexpected report columns {header}")
    report = StabilityReport(objective='', geometry='', seed=None)
    for objective, geometry, n, method, metric, value, stderr, seed in rows:
        report.rows.append(ReportRow(objective, geometry, int(n), method, metric, float(value), float(stderr), seed))
    return report


def _sweep_of(directory):
    manifest = files.read_manifest(directory)
    if files.STABILITY_FILE not in manifest['files'] or 'sweep_hash' not in manifest:
        raise DataError(f"{directory} has no evaluated stability report in {files.MANIFEST_FILE}")
    return manifest['sweep_hash']


def cmd_aggregate(directories, output, expected_sweep=None):
    """
    Combine the stability.csv of every seed directory into aggregate and
    plot files under `output`. Every directory must come from the same
    sweep (the evaluation config up to the seed), and from `expected_sweep`
    when one is given.
    """
    output = Path(output)
    if not directories:
        raise DataError("nothing to aggregate")
    with files.ExperimentLock(output):
        reports = []
        for directory in map(Path, directories):
            sweep = _sweep_of(directory)
            expected_sweep = expected_sweep or sweep
            if sweep != expected_sweep:
                raise DataError(
                    f"{directory} was evaluated under sweep {sweep[:12]}, expected {expected_sweep[:12]}"
                )
            reports.append(read_report(directory / files.STABILITY_FILE))
        rows = aggregate_reports(reports)
        files.write_csv(output / files.AGGREGATE_FILE, REPORT_HEADER, [row.to_row() for row in rows])
        write_plot_data(output, rows)
        files.stamp_outputs(output, [files.AGGREGATE_FILE, files.PLOT_N_FILE, files.PLOT_K_FILE],
                            expected_sweep, expected_sweep)
    return {'directory': str(output), 'seeds': len(reports), 'rows': len(rows)}


# =============================================================================
# ROUND TRIP
# =============================================================================

@dataclass
class RoundtripResult:
    kind: str
    identical_bytes: bool
    identical_predictions: bool

    @property
    def passed(self):
        return self.identical_bytes and self.identical_predictions


def _predictions(checkpoint, batch_rs):
    if isinstance(checkpoint, files.EncoderCheckpoint):
        return encode(checkpoint.model, batch_rs.normal(size=(16, checkpoint.model.input_dim)))
    if isinstance(checkpoint, files.ProbeCheckpoint):
        return predict_scores(checkpoint.probe, batch_rs.normal(size=(16, checkpoint.probe.W.shape[0])))
    reps = batch_rs.normal(size=(16, checkpoint.stable_map.F.shape[0]))
    return apply_stable_map(checkpoint.stable_map, reps)


def cmd_checkpoint_roundtrip(path):
    """Load, save to a scratch file, reload; bytes and predictions on a fixed batch must match"""
    path = Path(path)
    original = files.load_checkpoint(path)
    with tempfile.TemporaryDirectory() as scratch:
        copy_path = Path(scratch) / path.name
        files.save_checkpoint(copy_path, original)
        identical_bytes = copy_path.read_bytes() == path.read_bytes()
        reloaded = files.load_checkpoint(copy_path)
    before = _predictions(original, RandomStream(0, STREAM_ROUNDTRIP))
    after = _predictions(reloaded, RandomStream(0, STREAM_ROUNDTRIP))
    kind = type(original).__name__
    return RoundtripResult(kind, identical_bytes, bool(np.array_equal(before, after)))
