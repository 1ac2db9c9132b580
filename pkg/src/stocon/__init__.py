"""Simulation and verification of contraction for randomly driven systems."""
from .core import (
    ContinuousSystem,
    DiscreteSystem,
    KernelSpec,
    Metric,
    NonFiniteError,
    VariationalState,
    make_metric_identity,
    state_vector,
    validate_system,
)
from .noise import Distribution, NoisePath, NoiseSpec, Partition, clipped_gaussian, constant, two_point, uniform

__version__ = "0.1.0"

__all__ = [
    "ContinuousSystem", "DiscreteSystem", "KernelSpec", "Metric", "NonFiniteError", "VariationalState",
    "make_metric_identity", "state_vector", "validate_system",
    "Distribution", "NoisePath", "NoiseSpec", "Partition", "clipped_gaussian", "constant", "two_point",
    "uniform",
]
