"""
Serializers Package for the sslbench testbed

This package contains the serializers that validate experiment
configuration payloads before they reach the library.
"""

from .config_serializers import (
    ExperimentConfigSerializer,
    StrictSerializer,
    build_experiment_config,
    experiment_config_from,
)
