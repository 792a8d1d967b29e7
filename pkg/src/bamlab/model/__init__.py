"""Desk-scale decoder transformer with pluggable positional encodings."""

from .checkpoint import Checkpoint
from .config import PE_KINDS, THETA_NAMES, ConfigError, ModelConfig
from .inference import dump_attention, generate, sequence_logits
from .network import Transformer, build_model, count_parameters
from .training import OptimizerSettings, TokenSequence, grad_check, loss, pack_batch, train

__all__ = [
    "Checkpoint",
    "ConfigError",
    "ModelConfig",
    "OptimizerSettings",
    "PE_KINDS",
    "THETA_NAMES",
    "TokenSequence",
    "Transformer",
    "build_model",
    "count_parameters",
    "dump_attention",
    "generate",
    "grad_check",
    "loss",
    "pack_batch",
    "sequence_logits",
    "train",
]
