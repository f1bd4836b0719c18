"""Transformer building blocks."""
from __future__ import annotations

import math

import numpy as np

from ..tensor import Tensor, default_dtype, ops
from .init import HEADS, KAIMING, XAVIER, XAVIER_SCALED, InitSpec, init_parameter, ones_parameter, zeros_parameter
from .module import Module

LAYER_NORM_EPS = 1e-5
MAX_SEGMENTS = 32


class DropoutMixin:
    rate: float = 0.0
    rng: np.random.Generator | None = None

    def drop(self, x: Tensor) -> Tensor:
        if not self.training or self.rate <= 0.0 or self.rng is None:
            return x
        return ops.dropout(x, 1.0 - self.rate, self.rng)


def set_dropout_rng(root: Module, rng: np.random.Generator | None) -> None:
    for m in root.modules():
        if isinstance(m, DropoutMixin):
            m.rng = rng


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, init: InitSpec = XAVIER, bias: bool = True):
        self.weight = init_parameter(init, (d_in, d_out), rng)
        self.bias = zeros_parameter((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = LAYER_NORM_EPS):
        self.gain = ones_parameter((d,))
        self.bias = zeros_parameter((d,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, vocab_size: int, d: int, rng: np.random.Generator):
        self.table = init_parameter(XAVIER, (vocab_size, d), rng)

    def __call__(self, ids) -> Tensor:
        return ops.embedding(self.table, ids)


class FeedForward(Module, DropoutMixin):
    """Position-wise ``linear -> ReLU -> linear``; residual and norm live at the call site."""

    def __init__(self, d: int, d_inner: int, rng: np.random.Generator, dropout: float = 0.0):
        self.inner = Linear(d, d_inner, rng, init=KAIMING)
        self.outer = Linear(d_inner, d, rng, init=XAVIER_SCALED)
        self.rate = dropout

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(self.drop(ops.relu(self.inner(x))))


class MultiHeadAttention(Module, DropoutMixin):
    """Scaled dot-product attention with separate query-side and key/value-side widths.

    Queries are projected from ``d_query`` and keys/values from ``d_kv``; the
    concatenated heads are projected back to ``d_query``.
    """

    def __init__(
        self,
        d_query: int,
        d_kv: int,
        rng: np.random.Generator,
        heads: int = HEADS,
        d_key: int = 64,
        d_value: int = 64,
        dropout: float = 0.0,
    ):
        if min(d_query, d_kv, heads, d_key, d_value) < 1:
            raise ValueError("attention widths must be positive")
        self.heads, self.d_key, self.d_value = heads, d_key, d_value
        self.query = Linear(d_query, heads * d_key, rng)
        self.key = Linear(d_kv, heads * d_key, rng)
        self.value = Linear(d_kv, heads * d_value, rng)
        self.out = Linear(heads * d_value, d_query, rng, init=XAVIER_SCALED)
        self.rate = dropout
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor, width: int) -> Tensor:
        b, n, _ = x.shape
        return ops.transpose(ops.reshape(x, (b, n, self.heads, width)), (0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """``mask[..., i, j]`` is True where query ``i`` may attend to key ``j``."""
        unbatched = q_in.ndim == 2
        if unbatched:
            q_in = ops.reshape(q_in, (1,) + q_in.shape)
            kv_in = ops.reshape(kv_in, (1,) + kv_in.shape)
        b, nq, _ = q_in.shape
        nk = kv_in.shape[1]
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape[-2:] != (nq, nk):
                raise ValueError(f"attention mask shape {mask.shape} does not match ({nq}, {nk})")
            if not mask.any(axis=-1).all():
                raise ValueError("attention: a query row has no permitted key (pad mask bug upstream?)")
            # broadcast over heads
            mask = mask[..., None, :, :] if mask.ndim == 3 else mask
        q = self._split(self.query(q_in), self.d_key)
        k = self._split(self.key(kv_in), self.d_key)
        v = self._split(self.value(kv_in), self.d_value)
        scores = ops.mul(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(self.d_key))
        weights = ops.softmax(scores, axis=-1, mask=mask)
        self.last_weights = weights.data
        ctx = ops.matmul(self.drop(weights), v)
        ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, nq, self.heads * self.d_value))
        out = self.out(ctx)
        return ops.reshape(out, out.shape[1:]) if unbatched else out


def sinusoidal_encoding(n: int, d: int) -> np.ndarray:
    if d % 2:
        raise ValueError(f"sinusoidal encoding needs an even width, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates)
    return pe.astype(default_dtype())


class SegmentEmbedding(Module):
    """Learned per-utterance-index row; indices past the table are clamped to the last row."""

    def __init__(self, d: int, rng: np.random.Generator, max_segments: int = MAX_SEGMENTS):
        self.table = init_parameter(XAVIER, (max_segments, d), rng)

    def __call__(self, segment_ids) -> Tensor:
        ids = np.asarray(segment_ids)
        if ids.size and ids.min() < 0:
            raise ValueError("segment ids must be non-negative")
        return ops.embedding(self.table, np.minimum(ids, self.table.shape[0] - 1))
