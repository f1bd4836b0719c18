"""Central-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward


@dataclass
class GradReport:
    errors: list[float]  # max relative error per input
    tol: float
    names: list[str] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max(self.errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self) -> str:
        rows = [f"{n or i}: {e:.3e}" for i, (n, e) in enumerate(zip(self.names, self.errors))]
        return ("PASS" if self.passed else "FAIL") + f" (tol {self.tol:g}) " + ", ".join(rows)


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor_scale: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradReport:
    """Compare analytic gradients of scalar ``fn()`` against central differences.

    ``fn`` closes over ``inputs`` (float64 leaves with ``requires_grad``) and must
    be deterministic. Each input is perturbed in place, element by element.

    Denominators are floored at ``floor_scale`` times the largest analytic
    gradient magnitude, so entries that are exactly zero (a key bias under
    softmax, say) are not judged on finite-difference roundoff alone.

    ``max_entries`` checks a seeded random subset of at most that many entries
    per input instead of all of them.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check needs float64 inputs; build them under precision(np.float64)")
        t.grad = None
    loss = fn()
    backward(loss, inputs)
    analytic = [t.grad.copy() for t in inputs]

    scale = max((float(np.abs(a).max()) for a in analytic if a.size), default=0.0)
    floor = max(1e-8, floor_scale * scale)
    pick = np.random.default_rng(seed)
    errors = []
    for t, a in zip(inputs, analytic):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(pick.choice(flat.size, max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn().data)
            flat[i] = orig - eps
            f_minus = float(fn().data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (f_plus - f_minus) / (2 * eps)
        err = relative_error(a.reshape(-1)[idx], numeric.reshape(-1)[idx], floor)
        errors.append(float(err.max()) if err.size else 0.0)
    for t in inputs:
        t.grad = None
    return GradReport(errors, tol, [t.name or "" for t in inputs])
