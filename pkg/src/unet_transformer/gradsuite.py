"""Central-difference gradient checks for every primitive and the main blocks (64-bit)."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .encoder import Encoder, EncoderLayer, build_schedule
from .models import GRUCell
from .nn import FeedForward
from .tensor import GradReport, Tensor, grad_check, make_rng, ops, parameter, precision

Case = Callable[[np.random.Generator], tuple[list[Tensor], Callable[[], Tensor]]]


def _p(rng, *shape) -> Tensor:
    return parameter(rng.standard_normal(shape))


def _elementwise(op):
    def case(rng):
        x = _p(rng, 3, 4)
        return [x], lambda: op(x)
    return case


def _positive(op):
    def case(rng):
        x = parameter(rng.uniform(0.5, 2.0, (3, 4)))
        return [x], lambda: op(x)
    return case


def _binary(op, shape_b=(3, 4)):
    def case(rng):
        a, b = _p(rng, 3, 4), _p(rng, *shape_b)
        return [a, b], lambda: op(a, b)
    return case


def _masked_softmax(rng):
    x = _p(rng, 2, 3, 5)
    mask = rng.random((2, 3, 5)) < 0.6
    mask[..., 0] = True
    return [x], lambda: ops.softmax(x, mask=mask)


def _layer_norm(rng):
    x, g, b = _p(rng, 2, 3, 6), _p(rng, 6), _p(rng, 6)
    return [x, g, b], lambda: ops.layer_norm(x, g, b)


def _conv(stride):
    def case(rng):
        x, w, b = _p(rng, 2, 7, 3), _p(rng, 3, 3, 4), _p(rng, 4)
        return [x, w, b], lambda: ops.conv1d(x, w, b, stride=stride)
    return case


def _deconv(rng):
    x, w, b = _p(rng, 2, 4, 3), _p(rng, 3, 3, 2), _p(rng, 2)
    return [x, w, b], lambda: ops.deconv1d(x, w, b)


def _max_pool(rng):
    x = _p(rng, 2, 7, 3)
    valid = np.ones((2, 7), dtype=bool)
    valid[1, 5:] = False
    return [x], lambda: ops.max_pool1d(x, valid)


def _embedding(rng):
    table = _p(rng, 6, 3)
    return [table], lambda: ops.embedding(table, np.array([[0, 5, 5], [2, 1, 0]]))


def _cross_entropy(rng):
    logits = _p(rng, 2, 3, 5)
    targets = np.array([[0, 4, 2], [1, 1, 3]])
    mask = np.array([[1, 1, 0], [1, 0, 1]], dtype=bool)
    return [logits], lambda: ops.cross_entropy(logits, targets, mask)


def _dropout(rng):
    x = _p(rng, 4, 5)
    return [x], lambda: ops.dropout(x, 0.7, make_rng(3))


def _structural(rng):
    a, b = _p(rng, 2, 3), _p(rng, 2, 3)
    cond = rng.random((2, 3)) < 0.5

    def f():
        s = ops.stack([a, ops.where(cond, b, 0.0)], axis=0)
        c = ops.concat([ops.transpose(s, (0, 2, 1)), ops.reshape(a, (1, 3, 2))], axis=0)
        return ops.add(ops.getitem(c, (slice(None), slice(0, 2))), ops.mean(c, axis=0, keepdims=True)[:, :2])
    return [a, b], f


PRIMITIVES: dict[str, Case] = {
    "add": _binary(ops.add, (4,)),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul, (1, 4)),
    "matmul": _binary(ops.matmul, (4, 2)),
    "batched_matmul": lambda r: (lambda a, b: ([a, b], lambda: ops.matmul(a, b)))(_p(r, 2, 3, 4), _p(r, 2, 4, 5)),
    "relu": _elementwise(ops.relu),
    "tanh": _elementwise(ops.tanh),
    "sigmoid": _elementwise(ops.sigmoid),
    "exp": _elementwise(ops.exp),
    "log": _positive(ops.log),
    "square": _elementwise(ops.square),
    "sum": _elementwise(lambda x: ops.sum(x, axis=1)),
    "mean": _elementwise(lambda x: ops.mean(x, axis=0)),
    "softmax": _elementwise(ops.softmax),
    "masked_softmax": _masked_softmax,
    "log_softmax": _elementwise(ops.log_softmax),
    "layer_norm": _layer_norm,
    "conv1d": _conv(1),
    "conv1d_stride2": _conv(2),
    "deconv1d": _deconv,
    "max_pool1d": _max_pool,
    "embedding": _embedding,
    "cross_entropy": _cross_entropy,
    "dropout": _dropout,
    "reshape_concat_stack_where": _structural,
}


def _feed_forward(rng):
    ff = FeedForward(6, 10, rng)
    x = _p(rng, 2, 4, 6)
    return [x, *ff.parameters()], lambda: ff(x)


def _pad_mask(b: int, n: int, pads: int) -> np.ndarray:
    pad = np.zeros((b, n), dtype=bool)
    if pads:
        pad[-1, n - pads:] = True
    return pad


def _down_layer(rng):
    spec = build_schedule(8, 3)[1]
    layer = EncoderLayer(spec, rng)
    x = _p(rng, 2, 7, spec.d_in)
    pad = _pad_mask(2, 7, 2)
    return [x, *layer.parameters()], lambda: layer.down(x, pad)[0]


def _up_layer(rng):
    spec = build_schedule(8, 3)[4]
    layer = EncoderLayer(spec, rng)
    x = _p(rng, 2, 3, spec.d_in)
    skip = _p(rng, 2, 6, spec.d_out)
    pad = _pad_mask(2, 6, 2)
    return [x, skip, *layer.parameters()], lambda: layer.up(x, pad, skip)


def _unet_encoder(rng):
    enc = Encoder(build_schedule(8, 3), rng)
    x = _p(rng, 2, 6, 8)
    pad = _pad_mask(2, 6, 1)
    return [x, *enc.parameters()], lambda: enc(x, pad)[0]


def _gru_unroll(rng):
    cell = GRUCell(3, 4, rng)
    xs = _p(rng, 3, 2, 3)

    def f():
        h = Tensor(np.zeros((2, 4)))
        outs = []
        for t in range(3):
            h = cell(xs[t], h)
            outs.append(h)
        return ops.stack(outs)
    return [xs, *cell.parameters()], f


BLOCKS: dict[str, Case] = {
    "feed_forward": _feed_forward,
    "down_layer": _down_layer,
    "up_layer": _up_layer,
    "unet_encoder": _unet_encoder,
    "gru_unroll_3": _gru_unroll,
}

SUITE: dict[str, Case] = {**PRIMITIVES, **BLOCKS}

# entries checked per tensor; the full encoder has ~14k parameters
SAMPLED = {"unet_encoder": 40}


def check_case(name: str, seed: int = 0, eps: float = 1e-5, tol: float = 1e-4) -> GradReport:
    """Check one case; the loss is a fixed random projection of the output."""
    rng = make_rng([seed, len(name)] + [ord(c) for c in name])
    with precision(np.float64):
        inputs, f = SUITE[name](rng)
        weights = rng.standard_normal(f().shape)
        return grad_check(
            lambda: ops.sum(ops.mul(f(), weights)), inputs, eps=eps, tol=tol,
            max_entries=SAMPLED.get(name), seed=seed,
        )


def run_suite(names=None, seed: int = 0, tol: float = 1e-4, report=print) -> bool:
    ok = True
    t0 = time.perf_counter()
    for name in names or SUITE:
        result = check_case(name, seed, tol=tol)
        ok &= result.passed
        if report:
            report(f"{'PASS' if result.passed else 'FAIL'}  {name:28s} max rel err {result.max_rel_error:.2e}")
    if report:
        report(f"{'all passed' if ok else 'FAILURES'} in {time.perf_counter() - t0:.1f}s")
    return ok
