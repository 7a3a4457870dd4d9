"""Orthogonal residual operators, matched-capacity models and their benchmarks."""

from ._core import (
    DomainError,
    FormatError,
    GeoResidualError,
    InvalidConfig,
    InvalidInput,
    IoError,
    ShapeMismatch,
    ZeroDirection,
    cayley,
    cayley_from_skew,
    cli,
    config_text,
    count_params,
    forward,
    gate_penalty,
    generate,
    householder,
    iterative_cayley_retraction,
    negation_margin,
    orthogonality_report,
    read_dataset,
    reflection_diagnostic,
    train,
    verify,
)

__version__ = "0.1.0"

MODEL_KINDS = ("gpt", "ddl", "mhc", "jpmhc", "edelta")
DATASETS = ("gyroscope", "stability", "reflection", "near_pi_single", "near_pi_multi")

__all__ = [name for name in dir() if not name.startswith("_")]
