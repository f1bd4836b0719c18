from .init import (
    HEADS,
    KAIMING,
    XAVIER,
    XAVIER_SCALED,
    InitSpec,
    init_parameter,
    init_std,
    round_half_up,
    scaled_sizes,
)
from .layers import (
    MAX_SEGMENTS,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    SegmentEmbedding,
    set_dropout_rng,
    sinusoidal_encoding,
)
from .module import Module

__all__ = [
    "HEADS",
    "KAIMING",
    "MAX_SEGMENTS",
    "XAVIER",
    "XAVIER_SCALED",
    "Embedding",
    "FeedForward",
    "InitSpec",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "SegmentEmbedding",
    "init_parameter",
    "init_std",
    "round_half_up",
    "scaled_sizes",
    "set_dropout_rng",
    "sinusoidal_encoding",
]
