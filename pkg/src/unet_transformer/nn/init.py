"""Weight initialisation schemes and proportional layer sizing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor, default_dtype, parameter

BASE_WIDTH = 256
BASE_INNER = 1024
BASE_KEY = 64
HEADS = 8
OUTPUT_GAIN = 1 / 100

SCHEMES = ("xavier", "kaiming", "xavier_scaled")


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "xavier"
    gain: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.gain <= 0:
            raise ValueError("gain must be positive")


XAVIER = InitSpec("xavier")
KAIMING = InitSpec("kaiming")
XAVIER_SCALED = InitSpec("xavier_scaled", OUTPUT_GAIN)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def fans(shape: tuple[int, ...]) -> tuple[int, int]:
    # conv kernels are [k, d_in, d_out]; the receptive field multiplies both fans
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 3:
        return shape[0] * shape[1], shape[0] * shape[2]
    raise ValueError(f"cannot infer fans for shape {shape}")


def init_std(spec: InitSpec, shape: tuple[int, ...]) -> float:
    fan_in, fan_out = fans(shape)
    if spec.scheme == "kaiming":
        return spec.gain * math.sqrt(2.0 / fan_in)
    return spec.gain * math.sqrt(2.0 / (fan_in + fan_out))


def init_parameter(spec: InitSpec, shape, rng: np.random.Generator, name: str | None = None) -> Tensor:
    shape = tuple(shape)
    std = init_std(spec, shape)
    data = rng.standard_normal(shape) * std
    return parameter(data.astype(default_dtype()), name=name)


def zeros_parameter(shape, name: str | None = None) -> Tensor:
    return parameter(np.zeros(shape, dtype=default_dtype()), name=name)


def ones_parameter(shape, name: str | None = None) -> Tensor:
    return parameter(np.ones(shape, dtype=default_dtype()), name=name)


def scaled_sizes(d: int) -> tuple[int, int, int]:
    """(inner, key, value) widths scaled in proportion to ``d`` from the 256-wide base."""
    if d < 1:
        raise ValueError("width must be positive")
    inner = round_half_up(BASE_INNER * d / BASE_WIDTH)
    key = max(1, round_half_up(BASE_KEY * d / BASE_WIDTH))
    return inner, key, key
