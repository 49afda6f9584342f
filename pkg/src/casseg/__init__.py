"""Class-agnostic segmentation losses, a small numpy network stack, and experiments."""

from .errors import (
    CassegError,
    ConfigError,
    DataError,
    GenerationError,
    LabelError,
    NumericError,
    ParameterError,
    ParseError,
    ShapeError,
    StateError,
)
from .losses import CasConfig, LossBreakdown, cace_loss, cas_backward, cas_bounds, cas_forward, ce_loss
from .partition import RegionPartition
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "CasConfig",
    "CassegError",
    "ConfigError",
    "DataError",
    "GenerationError",
    "LabelError",
    "LossBreakdown",
    "NumericError",
    "ParameterError",
    "ParseError",
    "RegionPartition",
    "ShapeError",
    "StateError",
    "Tensor",
    "cace_loss",
    "cas_backward",
    "cas_bounds",
    "cas_forward",
    "ce_loss",
]
