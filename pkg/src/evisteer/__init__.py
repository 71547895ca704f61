"""Evidential representation steering for a toy dual encoder, on a numpy autodiff core."""
from __future__ import annotations

from .data import DomainShift, LabeledExample, SyntheticTaskSpec, apply_domain_shift, generate_task, sample_few_shot
from .encoder import EncoderConfig, ModelParams, classify, encode, init_backbone, load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DomainError,
    EvaluationError,
    EviSteerError,
    NumericalError,
)
from .gradcheck import grad_check
from .harness import ExperimentConfig, RunRecord, harmonic_mean
from .steering import Components, SteeringConfig, adapter_forward, count_parameters
from .tensor import GradTape, Tensor, backward
from .train import TrainConfig

__version__ = "0.1.0"
