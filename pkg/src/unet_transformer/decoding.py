"""Greedy and beam-search decoding."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .models import BOS, EOS, UNK
from .tensor import no_grad

StepFn = Callable[[list[list[int]]], np.ndarray]


def length_cap(src_len: int) -> int:
    return 2 * src_len + 5


def token_preference(vocab_size: int) -> np.ndarray:
    """Tie-break rank per token id: non-reserved ids ascending, then eos, then unk.

    pad and bos are never generated (rank = vocab_size).
    """
    rank = np.full(vocab_size, vocab_size, dtype=np.int64)
    order = list(range(4, vocab_size)) + [EOS, UNK]
    rank[order] = np.arange(len(order))
    return rank


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def model_step_fn(model, src: np.ndarray, segments: np.ndarray | None = None) -> StepFn:
    """Next-token log-probabilities for equal-length prefixes of one source."""
    src = np.asarray(src)[None]
    seg = None if segments is None else np.asarray(segments)[None]
    with no_grad():
        memory = model.encode(src, seg)

    def step(prefixes: list[list[int]]) -> np.ndarray:
        with no_grad():
            mem = memory.take(np.zeros(len(prefixes), dtype=np.int64))
            logits = model.decode(np.asarray(prefixes, dtype=np.int64), mem).data[:, -1, :]
        return _log_softmax(logits)

    return step


def greedy_search(step: StepFn, vocab_size: int, cap: int) -> tuple[list[int], float]:
    rank = token_preference(vocab_size)
    prefix, score = [BOS], 0.0
    for _ in range(cap):
        logp = step([prefix])[0]
        allowed = rank < vocab_size
        best = logp[allowed].max()
        tok = int(np.argmin(np.where(allowed & (logp == best), rank, vocab_size + 1)))
        score += float(logp[tok])
        if tok == EOS:
            break
        prefix.append(tok)
    return prefix[1:], score


def beam_search_fn(step: StepFn, vocab_size: int, cap: int, beam: int = 3) -> tuple[list[int], float]:
    """Beam search over summed log-probabilities, no length normalisation.

    Hypotheses that emit eos retire; the search stops when no live hypothesis can
    beat the best retired one (scores only decrease) or at ``cap`` tokens, where
    live hypotheses are retired as they stand.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    rank = token_preference(vocab_size)
    allowed = np.flatnonzero(rank < vocab_size)
    alive: list[tuple[list[int], float]] = [([BOS], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for _ in range(cap):
        logp = step([p for p, _ in alive])
        cands = []
        for i, (prefix, score) in enumerate(alive):
            for tok in allowed:
                if np.isfinite(logp[i, tok]):
                    cands.append((score + float(logp[i, tok]), i, int(rank[tok]), int(tok)))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_alive = []
        for score, i, _, tok in cands[:beam]:
            if tok == EOS:
                finished.append((alive[i][0][1:], score))
            else:
                next_alive.append((alive[i][0] + [tok], score))
        alive = next_alive
        if not alive:
            break
        if finished and max(s for _, s in finished) >= max(s for _, s in alive):
            alive = []
            break
    finished.extend((p[1:], s) for p, s in alive)
    best_i = max(range(len(finished)), key=lambda k: (finished[k][1], -k))
    return finished[best_i]


def exhaustive_search(step: StepFn, vocab_size: int, cap: int) -> tuple[list[int], float]:
    """Brute-force best output under the same termination rules (small vocabularies only)."""
    rank = token_preference(vocab_size)
    allowed = [int(t) for t in np.flatnonzero(rank < vocab_size)]
    best: tuple[list[int], float] | None = None

    def visit(prefix: list[int], score: float):
        nonlocal best
        if len(prefix) - 1 == cap:
            if best is None or score > best[1]:
                best = (prefix[1:], score)
            return
        logp = step([prefix])[0]
        for tok in allowed:
            if not np.isfinite(logp[tok]):
                continue
            s = score + float(logp[tok])
            if tok == EOS:
                if best is None or s > best[1]:
                    best = (prefix[1:], s)
            else:
                visit(prefix + [tok], s)

    visit([BOS], 0.0)
    return best


def _vocab_size(model) -> int:
    return model.config.tgt_vocab


def greedy_decode(model, src: Sequence[int], segments=None, cap: int | None = None) -> list[int]:
    src = np.asarray(src)
    step = model_step_fn(model, src, segments)
    return greedy_search(step, _vocab_size(model), cap or length_cap(len(src)))[0]


def beam_search(model, src: Sequence[int], beam: int = 3, segments=None, cap: int | None = None) -> list[int]:
    src = np.asarray(src)
    step = model_step_fn(model, src, segments)
    return beam_search_fn(step, _vocab_size(model), cap or length_cap(len(src)), beam)[0]


def sequence_log_prob(model, src: Sequence[int], output: Sequence[int], cap: int | None = None) -> float:
    """Total log-probability of ``output`` (plus eos unless it hit the cap)."""
    src = np.asarray(src)
    cap = cap or length_cap(len(src))
    step = model_step_fn(model, src)
    full = [BOS] + list(output)
    score = 0.0
    for i in range(1, len(full)):
        score += float(step([full[:i]])[0][full[i]])
    if len(output) < cap:
        score += float(step([full])[0][EOS])
    return score
