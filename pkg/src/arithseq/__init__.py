"""Sequence models for integer mathematics, end to end.

Integer problems (gcd, modular arithmetic, fractions, matrix rank) are
generated, tokenized as sign + base-B digit sequences, and learned by
small encoder-decoder transformers trained with exact hand-derived
gradients.  The package covers the full loop: data generation and
corpus files, the model and optimizer, the trainer with checkpointing,
the evaluator with problem-aware verification, and a CLI.
"""

__version__ = "1.0.0"

from .errors import ArithseqError
from .generators import TaskSpec, make_task
from .model import ModelConfig, TransformerModel
from .rng import RngStream
from .vocab import build_vocabulary

__all__ = [
    "ArithseqError",
    "ModelConfig",
    "RngStream",
    "TaskSpec",
    "TransformerModel",
    "build_vocabulary",
    "make_task",
    "__version__",
]
