from .config import ModelConfig
from .params import Param, Parameters
from .transformer import (
    TransformerModel,
    cross_entropy_loss,
    cross_entropy_sum,
)
from .layers import sinusoidal_table

__all__ = [
    "ModelConfig",
    "Param",
    "Parameters",
    "TransformerModel",
    "cross_entropy_loss",
    "cross_entropy_sum",
    "sinusoidal_table",
]
