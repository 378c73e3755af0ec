"""Discrete absorbing-diffusion sequence-to-sequence toolkit.

Two interchangeable backbones (transformer with cross-attention, and a
state-space model with scan-based cross-conditioning), two noising
schedules (uniform and semantic), plus training, iterative denoising
sampling, evaluation, and benchmarking.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    SeqDiffError,
    ShapeError,
)
from .tensor import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "SeqDiffError",
    "ShapeError",
    "ContractError",
    "ConfigError",
    "DataError",
    "NumericError",
    "CheckpointError",
    "__version__",
]
