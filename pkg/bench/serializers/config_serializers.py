"""
Experiment Configuration Serializers

This module validates experiment JSON payloads:
- every block is a StrictSerializer, so unknown fields are rejected
- field-level ranges live on the fields, cross-field rules in validate()
- build_experiment_config turns a payload into bench.config dataclasses
"""

from rest_framework import serializers

from bench.config import (
    SCHEMA_VERSION,
    DataConfig,
    ExperimentConfig,
    GeneratorConfig,
    IdentifyConfig,
    OptimizerConfig,
    ProbeConfig,
    StabilityConfig,
    StableMapConfig,
    TrainConfig,
)
from bench.encoders import OBJECTIVES, SslConfig
from bench.exceptions import ConfigurationError, SchemaVersionError
from bench.generator import KINDS
from bench.scm import GEOMETRY_BOX, GEOMETRY_SPHERE, ScmSpec
from bench.stability import RANKING_SOURCES, SELECTIONS, VARIABLE_SETS


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare"""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown field.'] for key in unknown})
        return super().to_internal_value(data)


# =============================================================================
# BLOCK SERIALIZERS
# =============================================================================

class OptimizerSerializer(StrictSerializer):
    """Serializer for Adam hyperparameters"""
    lr = serializers.FloatField(min_value=0.0, default=1e-4)
    weight_decay = serializers.FloatField(min_value=0.0, default=1e-5)


class DataSerializer(StrictSerializer):
    """Serializer for dataset sizes and the causal graph"""
    train_size = serializers.IntegerField(min_value=2, default=20_000)
    test_seen_size = serializers.IntegerField(min_value=1, default=4_000)
    test_holdout_size = serializers.IntegerField(min_value=1, default=4_000)
    num_classes = serializers.IntegerField(
        min_value=1,
        default=7,
        error_messages={'min_value': 'At least one class is required'}
    )
    threshold = serializers.FloatField(default=0.8)
    sigma = serializers.FloatField(default=0.5)
    scm = serializers.JSONField(required=False, allow_null=True, default=None)

    def validate_threshold(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError('Hold-out threshold must lie strictly between 0 and 1.')
        return value

    def validate_sigma(self, value):
        if value <= 0:
            raise serializers.ValidationError('Sigma must be positive.')
        return value

    def validate_scm(self, value):
        """Inline SCM description; parsed once here so a broken graph fails early"""
        if value is None:
            return None
        if not isinstance(value, dict):
            raise serializers.ValidationError('SCM must be an inline JSON object.')
        try:
            ScmSpec.from_dict(value)
        except (KeyError, TypeError, ValueError) as exc:
            raise serializers.ValidationError(f'Malformed SCM description: {exc}')
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        return value


class GeneratorSerializer(StrictSerializer):
    """Serializer for the mixing function"""
    kind = serializers.ChoiceField(choices=KINDS, default='invertible-mlp')
    class_embedding_dim = serializers.IntegerField(min_value=0, default=8)
    depth = serializers.IntegerField(min_value=1, default=3)
    slope = serializers.FloatField(default=0.2)
    condition_cap = serializers.FloatField(min_value=1.0, default=10.0)

    def validate_class_embedding_dim(self, value):
        if value == 1:
            raise serializers.ValidationError('Class embedding dimension must be 0 or at least 2.')
        return value

    def validate_slope(self, value):
        if not 0.0 < value <= 1.0:
            raise serializers.ValidationError('Leaky slope must lie in (0, 1].')
        return value


class SslSerializer(StrictSerializer):
    """Serializer for the SSL objective and encoder shape"""
    objective = serializers.ChoiceField(
        choices=OBJECTIVES,
        default='simclr',
        error_messages={'invalid_choice': '"{input}" is not a supported objective.'}
    )
    tau = serializers.FloatField(default=0.07)
    queue_size = serializers.IntegerField(min_value=1, default=4096)
    momentum = serializers.FloatField(default=0.99)
    barlow_lambda = serializers.FloatField(default=0.005)
    batch_size = serializers.IntegerField(min_value=2, default=128)
    hidden_dim = serializers.IntegerField(min_value=1, default=256)
    depth = serializers.IntegerField(min_value=1, default=3)
    slope = serializers.FloatField(default=0.2)
    output_dim = serializers.IntegerField(min_value=1, default=128)

    def validate_tau(self, value):
        if value <= 0:
            raise serializers.ValidationError('Temperature must be positive.')
        return value

    def validate_momentum(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError('EMA momentum must lie strictly between 0 and 1.')
        return value

    def validate_barlow_lambda(self, value):
        if value <= 0:
            raise serializers.ValidationError('Barlow lambda must be positive.')
        return value

    def validate(self, attrs):
        if attrs['queue_size'] < attrs['batch_size']:
            raise serializers.ValidationError({
                'queue_size': 'Queue size must be at least the batch size.'
            })
        return attrs


class TrainSerializer(StrictSerializer):
    """Serializer for encoder training"""
    epochs = serializers.IntegerField(min_value=1, default=20)
    kappa = serializers.FloatField(min_value=0.0, default=20.0)
    style_vars = serializers.ListField(
        child=serializers.CharField(),
        min_length=1,
        default=['hue_obj', 'hue_spl', 'hue_bg', 'pos_z']
    )
    optimizer = OptimizerSerializer(required=False)


class ProbeSerializer(StrictSerializer):
    """Serializer for linear probe training"""
    epochs = serializers.IntegerField(min_value=1, default=10)
    batch_size = serializers.IntegerField(min_value=1, default=128)
    optimizer = OptimizerSerializer(required=False)


class StableMapSerializer(StrictSerializer):
    """Serializer for Stable Inference Mapping"""
    method = serializers.ChoiceField(choices=('adam', 'lstsq'), default='adam')
    epochs = serializers.IntegerField(min_value=1, default=10)
    batch_size = serializers.IntegerField(min_value=1, default=128)
    pair_mode = serializers.ChoiceField(choices=SELECTIONS, default='random')
    train_pairs = serializers.IntegerField(min_value=1, default=4_000)
    optimizer = OptimizerSerializer(required=False)


class StabilitySerializer(StrictSerializer):
    """Serializer for the deterioration sweep and remedies"""
    n_values = serializers.ListField(
        child=serializers.IntegerField(min_value=1, max_value=8),
        min_length=1,
        default=[1, 2, 3, 4]
    )
    k_grid = serializers.ListField(
        child=serializers.FloatField(),
        min_length=1,
        default=[10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
    )
    num_neighbors = serializers.IntegerField(min_value=1, default=5)
    test_points = serializers.IntegerField(min_value=1, default=1_000)
    subsets = serializers.ChoiceField(choices=('all', 'random'), default='all')
    variable_set = serializers.ChoiceField(choices=VARIABLE_SETS, default='eligible')
    ranking_source = serializers.ChoiceField(choices=RANKING_SOURCES, default='true-class')
    ate_resamples = serializers.IntegerField(min_value=1, default=1_000)
    stable_map = StableMapSerializer(required=False)

    def validate_k_grid(self, value):
        for k in value:
            if not 0.0 < k <= 100.0:
                raise serializers.ValidationError('Every k must lie in (0, 100].')
        return value

    def validate_n_values(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError('n values must be distinct.')
        return sorted(value)

    def validate(self, attrs):
        if attrs['variable_set'] == 'children' and max(attrs['n_values']) > 5:
            raise serializers.ValidationError({
                'n_values': 'The children variable set has only 5 variables.'
            })
        return attrs


class IdentifySerializer(StrictSerializer):
    """Serializer for the identifiability fit"""
    holdout_fraction = serializers.FloatField(default=0.2)
    directions = serializers.IntegerField(min_value=1, default=2_000)

    def validate_holdout_fraction(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError('Hold-out fraction must lie strictly between 0 and 1.')
        return value


# =============================================================================
# EXPERIMENT
# =============================================================================

class ExperimentConfigSerializer(StrictSerializer):
    """
    Serializer for a complete experiment

    Every block is optional and falls back to the desk-scale defaults.
    """
    schema_version = serializers.IntegerField(
        required=True,
        error_messages={'required': 'schema_version is required'}
    )
    seed = serializers.IntegerField(min_value=0, default=0)
    geometry = serializers.ChoiceField(choices=(GEOMETRY_BOX, GEOMETRY_SPHERE), default=GEOMETRY_BOX)
    output_dir = serializers.CharField(allow_blank=True, default='')
    seeds = serializers.ListField(
        child=serializers.IntegerField(min_value=0),
        min_length=1,
        default=[0, 1, 2]
    )
    data = DataSerializer(required=False)
    generator = GeneratorSerializer(required=False)
    ssl = SslSerializer(required=False)
    train = TrainSerializer(required=False)
    probe = ProbeSerializer(required=False)
    stability = StabilitySerializer(required=False)
    identify = IdentifySerializer(required=False)

    def validate(self, attrs):
        generator = attrs.get('generator', {})
        if attrs['geometry'] == GEOMETRY_BOX and generator.get('class_embedding_dim', 8) == 0:
            raise serializers.ValidationError({
                'generator': 'Box geometry needs a class embedding; the class is otherwise invisible.'
            })
        return attrs


def _optimizer(block):
    return OptimizerConfig(**block) if block else OptimizerConfig()


def experiment_config_from(validated):
    """Build the frozen ExperimentConfig from serializer output"""
    train = dict(validated.get('train', {}))
    probe = dict(validated.get('probe', {}))
    stability = dict(validated.get('stability', {}))
    stable_map = dict(stability.pop('stable_map', {}) or {})

    if 'style_vars' in train:
        train['style_vars'] = tuple(train['style_vars'])
    train['optimizer'] = _optimizer(train.get('optimizer'))
    probe['optimizer'] = _optimizer(probe.get('optimizer'))
    stable_map['optimizer'] = _optimizer(stable_map.get('optimizer'))
    for key in ('n_values', 'k_grid'):
        if key in stability:
            stability[key] = tuple(stability[key])

    return ExperimentConfig(
        schema_version=validated['schema_version'],
        seed=validated['seed'],
        geometry=validated['geometry'],
        output_dir=validated['output_dir'],
        seeds=tuple(validated['seeds']),
        data=DataConfig(**validated.get('data', {})),
        generator=GeneratorConfig(**validated.get('generator', {})),
        ssl=SslConfig(**validated.get('ssl', {})),
        train=TrainConfig(**train),
        probe=ProbeConfig(**probe),
        stability=StabilityConfig(stable_map=StableMapConfig(**stable_map), **stability),
        identify=IdentifyConfig(**validated.get('identify', {})),
    )


def _flatten_errors(errors, prefix=''):
    messages = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            messages.extend(_flatten_errors(value, f'{prefix}{key}.'))
    elif isinstance(errors, list):
        for value in errors:
            messages.extend(_flatten_errors(value, prefix))
    else:
        messages.append(f'{prefix.rstrip(".") or "config"}: {errors}')
    return messages


def build_experiment_config(payload):
    """
    Validate a config payload and return an ExperimentConfig.

    Raises SchemaVersionError for a foreign schema_version and
    ConfigurationError listing every field error otherwise.
    """
    if not isinstance(payload, dict):
        raise ConfigurationError('experiment config must be a JSON object')
    version = payload.get('schema_version')
    if version is not None and version != SCHEMA_VERSION:
        raise SchemaVersionError(version, SCHEMA_VERSION)

    serializer = ExperimentConfigSerializer(data=payload)
    if not serializer.is_valid():
        raise ConfigurationError('; '.join(_flatten_errors(serializer.errors)))
    return experiment_config_from(serializer.validated_data)
