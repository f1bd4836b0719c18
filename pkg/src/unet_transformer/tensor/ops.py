"""Differentiable primitives.

Every function takes :class:`Tensor` (or array-like constants where noted) and
returns a new :class:`Tensor`. Sequence ops work on the last two axes
``[..., N, d]`` so the same code serves single sequences and batches.
"""
from __future__ import annotations

import numpy as np

from .core import Tensor, as_tensor, make_result

KERNEL = 3


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype), dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype), dtype=b.dtype)
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, "mul")


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return make_result(np.where(keep, x.data, 0).astype(x.dtype), (x,), lambda g: (g * keep,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1 + np.tanh(0.5 * x.data))
    return make_result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2 * g * x.data,), "square")


# ---------------------------------------------------------------- reductions & shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return make_result(np.asarray(y, dtype=x.dtype), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def getitem(x: Tensor, index) -> Tensor:
    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return make_result(x.data[index], (x,), bw, "getitem")


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bw, "concat")


def stack(xs: list[Tensor], axis: int = 0) -> Tensor:
    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return make_result(np.stack([x.data for x in xs], axis=axis), tuple(xs), bw, "stack")


def where(cond: np.ndarray, x: Tensor, fill: float = 0.0) -> Tensor:
    """``x`` where ``cond`` is true, constant ``fill`` elsewhere."""
    cond = np.asarray(cond, dtype=bool)
    y = np.where(cond, x.data, np.asarray(fill, dtype=x.dtype))
    return make_result(y, (x,), lambda g: (_unbroadcast(np.where(cond, g, 0), x.shape),), "where")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _operands(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # activations @ weight: one flat GEMM each way instead of a batched loop
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def bw_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return make_result((a2 @ b.data).reshape(lead + (b.shape[1],)), (a, b), bw_flat, "matmul")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


# ---------------------------------------------------------------- normalisers

def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get weight exactly 0."""
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a slice is fully masked (every key is padding)")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    s = np.exp(y)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return make_result(y, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat
    if gain is not None:
        y = y * gain.data
    if bias is not None:
        y = y + bias.data
    parents = [x] + [t for t in (gain, bias) if t is not None]

    def bw(g):
        gx_hat = g * gain.data if gain is not None else g
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        out = [gx]
        if gain is not None:
            out.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            out.append(_unbroadcast(g, bias.shape))
        return out

    return make_result(y.astype(x.dtype, copy=False), parents, bw, "layer_norm")


# ---------------------------------------------------------------- stochastic / lookup

def dropout(x: Tensor, keep: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors scaled by ``1/keep``. Identity when keep == 1."""
    if keep >= 1.0 or rng is None:
        return x
    if not 0.0 < keep <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {keep}")
    scale = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)].flat[0])
        raise ValueError(f"token id {bad} out of range for vocabulary of size {vocab}")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return make_result(table.data[ids], (table,), bw, "embedding")


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over positions where ``mask`` holds."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    weights = np.ones(targets.shape, dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype)
    count = weights.sum()
    if count <= 0:
        raise ValueError("cross_entropy: no non-pad target positions")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * weights).sum() / count

    def bw(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], axis=-1) - 1, axis=-1)
        return (p * (weights / count)[..., None] * g,)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), bw, "cross_entropy")


def cross_entropy_row(logits: Tensor, target: int) -> Tensor:
    return cross_entropy(logits, np.asarray(target))


# ---------------------------------------------------------------- sequence kernels

def _conv_windows(xp: np.ndarray, n_out: int, stride: int) -> np.ndarray:
    # xp is padded by one position on each end; window r of output j reads xp[stride*j + r]
    span = stride * (n_out - 1) + 1
    return np.concatenate([xp[..., r:r + span:stride, :] for r in range(KERNEL)], axis=-1)


def _pad_seq(x: np.ndarray, value=0.0) -> np.ndarray:
    widths = [(0, 0)] * (x.ndim - 2) + [(1, 1), (0, 0)]
    return np.pad(x, widths, constant_values=value)


def conv1d_backward_input(g: np.ndarray, w: np.ndarray, n_in: int, stride: int) -> np.ndarray:
    """Gradient of a same-padded k=3 conv w.r.t. its input, given the output gradient."""
    n_out = g.shape[-2]
    d_in = w.shape[1]
    gcols = g @ w.reshape(KERNEL * d_in, -1).T
    gxp = np.zeros(g.shape[:-2] + (n_in + 2, d_in), dtype=g.dtype)
    span = stride * (n_out - 1) + 1
    for r in range(KERNEL):
        gxp[..., r:r + span:stride, :] += gcols[..., r * d_in:(r + 1) * d_in]
    return gxp[..., 1:n_in + 1, :]


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded kernel-3 convolution over the sequence axis.

    ``y[t] = sum_r x[stride*t + r - 1] @ w[r] + bias`` with out-of-range ``x`` read
    as zero. Output length is ``ceil(N / stride)``.
    """
    if w.ndim != 3 or w.shape[0] != KERNEL:
        raise ValueError(f"conv1d supports kernel size {KERNEL} only, got weight shape {w.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv1d stride must be 1 or 2, got {stride}")
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"conv1d channel mismatch: input {x.shape}, weight {w.shape}")
    n = x.shape[-2]
    if n < 1:
        raise ValueError("conv1d needs at least one position")
    n_out = -(-n // stride)
    d_in, d_out = w.shape[1], w.shape[2]
    cols = _conv_windows(_pad_seq(x.data), n_out, stride)
    wf = w.data.reshape(KERNEL * d_in, d_out)
    y = cols @ wf
    if bias is not None:
        y = y + bias.data
    parents = [x, w] + ([bias] if bias is not None else [])

    def bw(g):
        gx = conv1d_backward_input(g, w.data, n, stride) if x.requires_grad else None
        gw = (cols.reshape(-1, KERNEL * d_in).T @ g.reshape(-1, d_out)).reshape(w.shape)
        out = [gx, gw]
        if bias is not None:
            out.append(g.reshape(-1, d_out).sum(axis=0))
        return out

    return make_result(y, parents, bw, "conv1d")


def deconv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-2 transposed convolution: ``[..., M, d_in] -> [..., 2M, d_out]``.

    Scatters ``x[j] @ w[r]`` into position ``2j + r - 1`` and keeps ``[0, 2M)``;
    this is exactly the input-gradient of ``conv1d(..., stride=2)`` whose weight
    is ``w`` with its channel axes swapped.
    """
    if w.ndim != 3 or w.shape[0] != KERNEL:
        raise ValueError(f"deconv1d supports kernel size {KERNEL} only, got weight shape {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"deconv1d channel mismatch: input {x.shape}, weight {w.shape}")
    m = x.shape[-2]
    d_in, d_out = w.shape[1], w.shape[2]
    wf = np.transpose(w.data, (1, 0, 2)).reshape(d_in, KERNEL * d_out)
    z = x.data @ wf  # [..., M, 3*d_out]
    yp = np.zeros(x.shape[:-2] + (2 * m + 2, d_out), dtype=z.dtype)
    for r in range(KERNEL):
        yp[..., r:r + 2 * m - 1:2, :] += z[..., r * d_out:(r + 1) * d_out]
    y = yp[..., 1:2 * m + 1, :]
    if bias is not None:
        y = y + bias.data
    parents = [x, w] + ([bias] if bias is not None else [])

    def bw(g):
        gp = _pad_seq(g)
        gz = np.concatenate([gp[..., r:r + 2 * m - 1:2, :] for r in range(KERNEL)], axis=-1)
        gx = gz @ wf.T if x.requires_grad else None
        gwf = x.data.reshape(-1, d_in).T @ gz.reshape(-1, KERNEL * d_out)
        gw = np.transpose(gwf.reshape(d_in, KERNEL, d_out), (1, 0, 2))
        out = [gx, gw]
        if bias is not None:
            out.append(g.reshape(-1, d_out).sum(axis=0))
        return out

    return make_result(np.ascontiguousarray(y), parents, bw, "deconv1d")


def max_pool1d(x: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Kernel-3 stride-2 max pool over the sequence axis, output length ``ceil(N/2)``.

    Edge positions and positions where ``valid`` is False act as ``-inf``.
    Windows with no valid input produce 0. Gradient goes to the lowest-index
    maximum of each window.
    """
    n = x.shape[-2]
    n_out = -(-n // 2)
    data = x.data
    if valid is not None:
        data = np.where(np.asarray(valid, dtype=bool)[..., None], data, -np.inf)
    xp = _pad_seq(data, -np.inf)
    span = 2 * (n_out - 1) + 1
    windows = np.stack([xp[..., r:r + span:2, :] for r in range(KERNEL)], axis=-2)  # [..., n_out, 3, d]
    arg = np.argmax(windows, axis=-2)
    y = np.take_along_axis(windows, arg[..., None, :], axis=-2)[..., 0, :]
    empty = np.isneginf(y)
    y = np.where(empty, 0, y).astype(x.dtype)

    def bw(g):
        g = np.where(empty, 0, g)
        gxp = np.zeros(x.shape[:-2] + (n + 2, x.shape[-1]), dtype=g.dtype)
        for r in range(KERNEL):
            gxp[..., r:r + span:2, :] += np.where(arg == r, g, 0)
        return (gxp[..., 1:n + 1, :],)

    return make_result(y, (x,), bw, "max_pool1d")
