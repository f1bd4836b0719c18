"""Complete sequence-to-sequence models: U-Net Transformer, ablations, vanilla Transformer, GRU S2SA."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
from typing import Sequence

import numpy as np

from .encoder import Encoder, LayerSpec, build_schedule, key_mask, pad_room, zero_pads
from .nn import (
    HEADS,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    SegmentEmbedding,
    init_parameter,
    scaled_sizes,
    sinusoidal_encoding,
)
from .nn.init import XAVIER, zeros_parameter
from .nn.layers import DropoutMixin, MAX_SEGMENTS
from .tensor import Tensor, ops

PAD, UNK, BOS, EOS = 0, 1, 2, 3

VARIANTS = ("unet", "unet_no_downup", "unet_no_downup_no_conv", "transformer", "s2sa")
# row order of the ablation table, hourglass first
ABLATION_VARIANTS = ("unet", "unet_no_downup", "unet_no_downup_no_conv", "transformer")
VARIANT_LABELS = {
    "unet": "UNET",
    "unet_no_downup": "UNET - DOWN/UP",
    "unet_no_downup_no_conv": "UNET - DOWN/UP - CONV",
    "transformer": "TRANSFORMER",
    "s2sa": "S2SA",
}
_ALIASES = {
    "UNET": "unet",
    "UNET_NO_DOWNUP": "unet_no_downup",
    "UNET_NO_DOWNUP_NO_CONV": "unet_no_downup_no_conv",
    "TRANSFORMER": "transformer",
    "S2SA": "s2sa",
}


def normalize_variant(name: str) -> str:
    key = name.strip()
    key = _ALIASES.get(key.upper(), key.lower().replace("-", "_"))
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; valid variants: {', '.join(VARIANTS)}")
    return key


@dataclass
class ModelConfig:
    variant: str = "unet"
    src_vocab: int = 20000
    tgt_vocab: int = 20000
    d_model: int = 256
    n_layers: int = 6
    n_down: int = 3
    heads: int = HEADS
    dropout: float = 0.0
    mode: str = "dialogue"
    segment_embeddings: bool | None = None  # None: on in dialogue mode
    per_layer_cross_attention: bool = False
    max_segments: int = MAX_SEGMENTS

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.mode not in ("dialogue", "translation"):
            raise ValueError(f"mode must be 'dialogue' or 'translation', got {self.mode!r}")
        if self.d_model % 2:
            raise ValueError("d_model must be even (sinusoidal positions)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.per_layer_cross_attention and self.variant != "unet":
            raise ValueError("per_layer_cross_attention is only defined for the unet variant")

    @property
    def use_segments(self) -> bool:
        return self.mode == "dialogue" if self.segment_embeddings is None else self.segment_embeddings

    def schedule(self) -> list[LayerSpec]:
        if self.variant == "unet":
            return build_schedule(self.d_model, self.n_down)
        conv = self.variant == "unet_no_downup"
        skips = self.variant != "transformer"
        return build_schedule(self.d_model, 0, self.n_layers, conv=conv, skips=skips)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass
class Memory:
    """Encoder results consumed by a decoder; ``levels[i] = (tensor, pad)``, last entry final."""

    levels: list[tuple[Tensor, np.ndarray]]
    state: Tensor | None = None  # final recurrent state (S2SA)

    @property
    def final(self) -> tuple[Tensor, np.ndarray]:
        return self.levels[-1]

    def take(self, rows: Sequence[int]) -> "Memory":
        rows = np.asarray(rows)
        levels = [(Tensor(x.data[rows], dtype=x.dtype), p[rows]) for x, p in self.levels]
        state = None if self.state is None else Tensor(self.state.data[rows], dtype=self.state.dtype)
        return Memory(levels, state)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


class DecoderLayer(Module, DropoutMixin):
    def __init__(self, d: int, d_memory: int, rng: np.random.Generator, heads: int = HEADS, dropout: float = 0.0):
        inner, key, value = scaled_sizes(d)
        self.self_attention = MultiHeadAttention(d, d, rng, heads, key, value, dropout)
        self.norm1 = LayerNorm(d)
        self.cross_attention = MultiHeadAttention(d, d_memory, rng, heads, key, value, dropout)
        self.norm2 = LayerNorm(d)
        self.ff = FeedForward(d, inner, rng, dropout)
        self.norm3 = LayerNorm(d)
        self.rate = dropout

    def __call__(self, x: Tensor, self_mask: np.ndarray, memory: Tensor, memory_mask: np.ndarray) -> Tensor:
        x = self.norm1(ops.add(x, self.drop(self.self_attention(x, x, self_mask))))
        x = self.norm2(ops.add(x, self.drop(self.cross_attention(x, memory, memory_mask))))
        return self.norm3(ops.add(x, self.drop(self.ff(x))))


class Seq2SeqModel(Module, DropoutMixin):
    """Transformer-family encoder (per variant) with the shared post-norm decoder."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.config = cfg
        d = cfg.d_model
        self.rate = cfg.dropout
        self.src_embed = Embedding(cfg.src_vocab, d, rng)
        self.segment_embed = SegmentEmbedding(d, rng, cfg.max_segments) if cfg.use_segments else None
        self.encoder = Encoder(cfg.schedule(), rng, cfg.heads, cfg.dropout)
        if cfg.per_layer_cross_attention and cfg.n_layers != len(self.encoder.schedule):
            raise ValueError("per-layer cross-attention needs equal encoder and decoder depth")
        memory_widths = (
            [s.d_out for s in self.encoder.schedule] if cfg.per_layer_cross_attention else [d] * cfg.n_layers
        )
        self.tgt_embed = Embedding(cfg.tgt_vocab, d, rng)
        self.decoder = [DecoderLayer(d, w, rng, cfg.heads, cfg.dropout) for w in memory_widths]
        self.generator = Linear(d, cfg.tgt_vocab, rng)

    def embed_source(self, src: np.ndarray, segments: np.ndarray | None = None) -> Tensor:
        src = np.asarray(src)
        x = ops.add(self.src_embed(src), sinusoidal_encoding(src.shape[-1], self.config.d_model))
        if self.segment_embed is not None:
            seg = np.zeros_like(src) if segments is None else np.asarray(segments)
            x = ops.add(x, self.segment_embed(seg))
        return self.drop(x)

    def encode(self, src: np.ndarray, segments: np.ndarray | None = None) -> Memory:
        src = np.atleast_2d(np.asarray(src))
        room = pad_room(self.encoder.schedule)
        if room:
            src = np.pad(src, ((0, 0), (0, room)), constant_values=PAD)
            if segments is not None:
                segments = np.pad(np.atleast_2d(segments), ((0, 0), (0, room)))
        pad = src == PAD
        _, _, levels = self.encoder.forward_levels(self.embed_source(src, segments), pad)
        return Memory(levels)

    def decode(self, tgt_in: np.ndarray, memory: Memory) -> Tensor:
        """Teacher-forced logits ``[B, T, V]``; position t sees targets <= t only."""
        tgt_in = np.atleast_2d(np.asarray(tgt_in))
        t = tgt_in.shape[-1]
        x = ops.add(self.tgt_embed(tgt_in), sinusoidal_encoding(t, self.config.d_model))
        x = self.drop(x)
        self_mask = causal_mask(t)[None] & ~(tgt_in == PAD)[:, None, :]
        self_mask[:, :, 0] = True  # the first target slot (bos) is never pad
        for i, layer in enumerate(self.decoder):
            mem, mem_pad = self.memory_for_layer(memory, i)
            x = layer(x, self_mask, mem, key_mask(mem_pad, t))
        return self.generator(x)

    def memory_for_layer(self, memory: Memory, i: int) -> tuple[Tensor, np.ndarray]:
        if self.config.per_layer_cross_attention:
            return memory.levels[i + 1]
        return memory.final

    def __call__(self, src, tgt_in, segments=None) -> Tensor:
        return self.decode(tgt_in, self.encode(src, segments))


class GRUCell(Module):
    """``h' = (1 - z) * h + z * tanh(W_n x + U_n (r * h))``."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_hidden = d_hidden
        self.w_x = init_parameter(XAVIER, (d_in, 3 * d_hidden), rng)
        self.b_x = zeros_parameter((3 * d_hidden,))
        self.w_h = init_parameter(XAVIER, (d_hidden, 2 * d_hidden), rng)
        self.w_hn = init_parameter(XAVIER, (d_hidden, d_hidden), rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        k = self.d_hidden
        gx = ops.add(ops.matmul(x, self.w_x), self.b_x)
        gh = ops.matmul(h, self.w_h)
        z = ops.sigmoid(ops.add(gx[..., :k], gh[..., :k]))
        r = ops.sigmoid(ops.add(gx[..., k:2 * k], gh[..., k:]))
        cand = ops.tanh(ops.add(gx[..., 2 * k:], ops.matmul(ops.mul(r, h), self.w_hn)))
        return ops.add(h, ops.mul(z, ops.sub(cand, h)))


class S2SAModel(Module, DropoutMixin):
    """One-layer GRU encoder/decoder; each decoder step queries the encoder states
    with the same multi-head attention block the Transformer uses."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.config = cfg
        d = cfg.d_model
        self.rate = cfg.dropout
        _, key, value = scaled_sizes(d)
        self.src_embed = Embedding(cfg.src_vocab, d, rng)
        self.tgt_embed = Embedding(cfg.tgt_vocab, d, rng)
        self.encoder_cell = GRUCell(d, d, rng)
        self.decoder_cell = GRUCell(d, d, rng)
        self.attention = MultiHeadAttention(d, d, rng, cfg.heads, key, value, cfg.dropout)
        self.generator = Linear(2 * d, cfg.tgt_vocab, rng)

    def encode(self, src: np.ndarray, segments: np.ndarray | None = None) -> Memory:
        src = np.atleast_2d(np.asarray(src))
        pad = src == PAD
        if pad.all(axis=-1).any():
            raise ValueError("every sequence needs at least one non-pad position")
        x = self.drop(self.src_embed(src))
        h = Tensor(np.zeros((src.shape[0], self.config.d_model), dtype=x.dtype))
        states = []
        for t in range(src.shape[1]):
            valid = ~pad[:, t:t + 1]
            h_new = self.encoder_cell(x[:, t, :], h)
            h = ops.add(ops.where(valid, h_new, 0.0), ops.where(~valid, h, 0.0))
            states.append(ops.where(valid, h_new, 0.0))
        return Memory([(ops.stack(states, axis=1), pad)], state=h)

    def decode(self, tgt_in: np.ndarray, memory: Memory) -> Tensor:
        tgt_in = np.atleast_2d(np.asarray(tgt_in))
        enc, enc_pad = memory.final
        y = self.drop(self.tgt_embed(tgt_in))
        h = memory.state
        mask = key_mask(enc_pad, 1)
        outputs = []
        for t in range(tgt_in.shape[1]):
            h = self.decoder_cell(y[:, t, :], h)
            query = ops.reshape(h, (h.shape[0], 1, h.shape[1]))
            ctx = self.attention(query, enc, mask)
            outputs.append(ops.concat([h, ops.reshape(ctx, h.shape)], axis=-1))
        return self.generator(self.drop(ops.stack(outputs, axis=1)))

    def __call__(self, src, tgt_in, segments=None) -> Tensor:
        return self.decode(tgt_in, self.encode(src, segments))


def build_model(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    if cfg.variant == "s2sa":
        return S2SAModel(cfg, rng)
    return Seq2SeqModel(cfg, rng)


STRUCTURE_FIELDS = ("role", "resample", "conv", "skip", "mirror", "len_div", "d_in", "d_out", "d_inner", "d_key", "d_value")
SCHEDULE_FIELDS = frozenset({"resample", "len_div", "d_in", "d_out", "d_inner", "d_key", "d_value"})


def describe_structure(model: Module) -> dict:
    """Structural summary used to diff ablation variants."""
    if isinstance(model, S2SAModel):
        return {"encoder": "gru", "decoder": "gru+attention", "parameters": model.num_parameters()}
    layers = [{k: getattr(s, k) for k in STRUCTURE_FIELDS} for s in model.encoder.schedule]
    decoder = [
        {name: p.shape for name, p in layer.named_parameters()} for layer in model.decoder
    ]
    return {"encoder": layers, "decoder": decoder, "parameters": model.num_parameters()}


def structure_diff(a: dict, b: dict) -> set[str]:
    """Names of per-layer encoder fields that differ; ``decoder`` if the decoders differ."""
    diff: set[str] = set()
    if len(a["encoder"]) != len(b["encoder"]):
        diff.add("depth")
    for la, lb in zip(a["encoder"], b["encoder"]):
        diff |= {k for k in STRUCTURE_FIELDS if la[k] != lb[k]}
    if a["decoder"] != b["decoder"]:
        diff.add("decoder")
    return diff
