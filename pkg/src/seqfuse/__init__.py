"""seqfuse: sequential recommendation with frozen-text-embedding fusion.

An autoregressive gated-attention encoder over item sequences whose item
representations add a trainable ID embedding to a projected frozen text
embedding, trained with sampled softmax over text-aware uniform negatives,
and evaluated with leave-one-out HR@K / NDCG@K / MRR.
"""

__version__ = "0.1.0"

from .errors import CheckpointError, ConfigError, DataError, EngineError, ParseError

__all__ = [
    "__version__",
    "EngineError",
    "ParseError",
    "DataError",
    "ConfigError",
    "CheckpointError",
]
