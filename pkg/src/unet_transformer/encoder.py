"""Hourglass (U-Net) Transformer encoder and its flat ablation relatives.

Layer widths for the default schedule are ``[256, 362, 512, 362, 256, 256]``:
the first down layer halves the length at the base width, the next two grow
width by sqrt(2) per halving, and the up layers mirror back. Each up layer
adds the down-path output of the same length and width after its
deconvolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention, init_parameter, round_half_up, scaled_sizes
from .nn.init import HEADS, XAVIER, zeros_parameter
from .tensor import Tensor, ops


@dataclass(frozen=True)
class LayerSpec:
    index: int  # 1-based layer number
    role: str  # "down" | "up"
    resample: str | None  # "pool" | "deconv" | None
    conv: bool
    len_div: int  # output length = ceil(N / len_div) along the pooling chain
    d_in: int
    d_out: int
    d_inner: int
    d_key: int
    d_value: int
    mirror: int | None  # level (0 = embeddings) whose length/pad this up layer restores
    skip: bool  # add the mirror level's output after resampling

    def as_dict(self) -> dict:
        return asdict(self)


def build_schedule(
    d_base: int = 256,
    n_down: int = 3,
    n_layers: int = 6,
    conv: bool = True,
    skips: bool = True,
) -> list[LayerSpec]:
    """Per-layer geometry.

    ``n_down > 0`` gives a ``2 * n_down`` layer hourglass; ``n_down == 0`` gives
    ``n_layers`` length-preserving layers at ``d_base`` whose second half takes
    mirror skips (emb -> last, L1 -> second to last, ...).
    """
    if n_down < 0:
        raise ValueError("n_down must be >= 0")
    specs: list[LayerSpec] = []
    if n_down == 0:
        half = n_layers // 2
        for i in range(1, n_layers + 1):
            up = i > n_layers - half
            inner, key, value = scaled_sizes(d_base)
            specs.append(LayerSpec(
                i, "up" if up else "down", None, conv, 1, d_base, d_base, inner, key, value,
                mirror=n_layers - i if up else None, skip=skips and up,
            ))
        return specs

    down_widths = [round_half_up(d_base * math.sqrt(2) ** i) for i in range(n_down)]
    d_prev = d_base
    for i, d in enumerate(down_widths, start=1):
        specs.append(LayerSpec(i, "down", "pool", conv, 2 ** i, d_prev, d, *scaled_sizes(d), mirror=None, skip=False))
        d_prev = d
    for j in range(1, n_down + 1):
        mirror = n_down - j
        d = down_widths[mirror - 1] if mirror > 0 else d_base
        specs.append(LayerSpec(
            n_down + j, "up", "deconv", conv, 2 ** mirror, d_prev, d, *scaled_sizes(d), mirror=mirror, skip=skips,
        ))
        d_prev = d
    return specs


def propagate_pad(pad: np.ndarray) -> np.ndarray:
    """Pad flags ``[..., N] -> [..., ceil(N/2)]``.

    An output is pad iff every input in its k=3 stride-2 window is pad, with the
    positions beyond either end counting as pad.
    """
    pad = np.asarray(pad, dtype=bool)
    n = pad.shape[-1]
    n_out = -(-n // 2)
    padded = np.pad(pad, [(0, 0)] * (pad.ndim - 1) + [(1, 1)], constant_values=True)
    span = 2 * n_out - 1
    out = padded[..., 0:span:2] & padded[..., 1:span + 1:2] & padded[..., 2:span + 2:2]
    if out.all(axis=-1).any():
        raise ValueError("pad propagation left a sequence with no non-pad positions")
    return out


def key_mask(pad: np.ndarray, n_query: int) -> np.ndarray:
    """Attention permissions ``[..., n_query, N]``: every query may see every non-pad key."""
    valid = ~np.asarray(pad, dtype=bool)
    return np.broadcast_to(valid[..., None, :], valid.shape[:-1] + (n_query, valid.shape[-1]))


def zero_pads(x: Tensor, pad: np.ndarray) -> Tensor:
    return ops.where(~np.asarray(pad, dtype=bool)[..., None], x, 0.0)


class EncoderLayer(Module):
    """One encoder layer described by a :class:`LayerSpec`.

    Down role: optional conv (d_in -> d_out), optional stride-2 max pool, then
    attention with the post-conv tokens as queries over the pre-conv tokens.
    Up role: deconv / conv / identity resampling, optional skip add, then
    self-attention. Both finish with a feed-forward sub-layer; every sub-layer
    is wrapped in residual + layer norm, and pad rows are zeroed on output.
    """

    def __init__(self, spec: LayerSpec, rng: np.random.Generator, heads: int = HEADS, dropout: float = 0.0):
        self.spec = spec
        if spec.conv or spec.resample == "deconv":
            self.conv_w = init_parameter(XAVIER, (3, spec.d_in, spec.d_out), rng)
            self.conv_b = zeros_parameter((spec.d_out,))
        elif spec.d_in != spec.d_out:
            raise ValueError(f"layer {spec.index}: width change {spec.d_in}->{spec.d_out} needs a conv")
        kv_width = spec.d_in if spec.role == "down" else spec.d_out
        self.attention = MultiHeadAttention(spec.d_out, kv_width, rng, heads, spec.d_key, spec.d_value, dropout)
        self.norm1 = LayerNorm(spec.d_out)
        self.ff = FeedForward(spec.d_out, spec.d_inner, rng, dropout)
        self.norm2 = LayerNorm(spec.d_out)

    def _drop(self, x: Tensor) -> Tensor:
        # shares the attention module's dropout stream
        return self.attention.drop(x)

    def _finish(self, h: Tensor, attended: Tensor, pad: np.ndarray) -> Tensor:
        y = self.norm1(ops.add(h, self._drop(attended)))
        y = self.norm2(ops.add(y, self._drop(self.ff(y))))
        return zero_pads(y, pad)

    def down(self, x: Tensor, pad: np.ndarray) -> tuple[Tensor, np.ndarray]:
        x = zero_pads(x, pad)
        h = ops.conv1d(x, self.conv_w, self.conv_b) if self.spec.conv else x
        if self.spec.resample == "pool":
            h = ops.max_pool1d(h, ~pad)
            out_pad = propagate_pad(pad)
        else:
            out_pad = pad
        h = zero_pads(h, out_pad)
        attended = self.attention(h, x, key_mask(pad, h.shape[-2]))
        return self._finish(h, attended, out_pad), out_pad

    def up(self, x: Tensor, pad: np.ndarray, skip: Tensor | None) -> Tensor:
        """``pad`` is the mask of the level being restored (its length is the target length)."""
        target_len = pad.shape[-1]
        if self.spec.resample == "deconv":
            m = x.shape[-2]
            if target_len not in (2 * m - 1, 2 * m):
                raise ValueError(f"up layer {self.spec.index}: cannot restore length {target_len} from {m}")
            h = ops.deconv1d(x, self.conv_w, self.conv_b)
            if target_len != 2 * m:
                h = ops.getitem(h, (Ellipsis, slice(0, target_len), slice(None)))
        elif self.spec.conv:
            h = ops.conv1d(x, self.conv_w, self.conv_b)
        else:
            h = x
        if skip is not None:
            if skip.shape != h.shape:
                raise ValueError(f"skip shape {skip.shape} does not match up-path shape {h.shape}")
            h = ops.add(h, skip)
        h = zero_pads(h, pad)
        attended = self.attention(h, h, key_mask(pad, target_len))
        return self._finish(h, attended, pad)


class Encoder(Module):
    """Stack of :class:`EncoderLayer` with mirror wiring between levels."""

    def __init__(self, schedule: list[LayerSpec], rng: np.random.Generator, heads: int = HEADS, dropout: float = 0.0):
        self.schedule = list(schedule)
        self.layers = [EncoderLayer(s, rng, heads, dropout) for s in self.schedule]

    def __call__(self, emb: Tensor, pad: np.ndarray) -> tuple[Tensor, np.ndarray]:
        out, out_pad, _ = self.forward_levels(emb, pad)
        return out, out_pad

    def forward_levels(self, emb: Tensor, pad: np.ndarray):
        """Returns the final output, its pad mask and every level ``[(tensor, pad), ...]``.

        Level 0 is the (pad-zeroed) input embedding; level ``i`` is layer ``i``'s output.
        """
        pad = np.asarray(pad, dtype=bool)
        if pad.all(axis=-1).any():
            raise ValueError("every sequence needs at least one non-pad position")
        x = zero_pads(emb, pad)
        levels = [(x, pad)]
        p = pad
        for spec, layer in zip(self.schedule, self.layers):
            if spec.role == "down":
                x, p = layer.down(x, p)
            else:
                mirror_x, mirror_pad = levels[spec.mirror] if spec.mirror is not None else (None, p)
                x = layer.up(x, mirror_pad, mirror_x if spec.skip else None)
                p = mirror_pad
            levels.append((x, p))
        return x, p, levels


def pad_room(schedule: list[LayerSpec]) -> int:
    """Trailing pads needed so pooled pad structure no longer depends on extra padding.

    With the all-pad pooling rule an even-length sequence keeps one more pooled token
    when at least one pad follows it, so a sequence's hierarchy would otherwise change
    with the width of the batch it lands in. ``2**k - 1`` pads (k pooling layers) put
    every sequence in the padded regime at every level.
    """
    return 2 ** sum(spec.resample == "pool" for spec in schedule) - 1


def level_lengths(schedule: list[LayerSpec], n: int) -> list[int]:
    """Sequence length after each layer for an input of length ``n`` (input first)."""
    lengths = [n]
    for spec in schedule:
        if spec.resample == "pool":
            lengths.append(-(-lengths[-1] // 2))
        elif spec.mirror is not None:
            lengths.append(lengths[spec.mirror])
        else:
            lengths.append(lengths[-1])
    return lengths


def layer_cost(spec: LayerSpec, n_in: int, n_out: int, heads: int = HEADS) -> dict[str, int]:
    """Multiply-accumulate estimate for one layer, split into the N*d^2 and N^2*d parts."""
    n_kv = n_in if spec.role == "down" else n_out
    d_kv = spec.d_in if spec.role == "down" else spec.d_out
    d = spec.d_out
    linear = (
        n_out * d * heads * spec.d_key  # queries
        + n_kv * d_kv * heads * (spec.d_key + spec.d_value)  # keys, values
        + n_out * heads * spec.d_value * d  # output projection
        + 2 * n_out * d * spec.d_inner  # feed-forward
    )
    if spec.conv or spec.resample == "deconv":
        linear += 3 * n_in * spec.d_in * spec.d_out
    quadratic = n_out * n_kv * heads * (spec.d_key + spec.d_value)
    return {"nd2": linear, "n2d": quadratic, "total": linear + quadratic}


def schedule_costs(schedule: list[LayerSpec], n: int) -> list[dict[str, int]]:
    lengths = level_lengths(schedule, n)
    return [layer_cost(s, lengths[i], lengths[i + 1]) for i, s in enumerate(schedule)]
