"""Perplexity and corpus BLEU."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

MAX_ORDER = 4


def perplexity(ce: float) -> float:
    """exp of mean per-token cross-entropy (nats)."""
    if not math.isfinite(ce):
        raise ValueError(f"cross-entropy must be finite, got {ce}")
    return math.exp(ce)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _split(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def bleu_stats(hypotheses, references) -> dict:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _split(hyp), _split(ref)
        if not ref:
            raise ValueError("empty reference")
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu(hypotheses, references) -> float:
    """Corpus BLEU-4 in [0, 100] over space-separated tokens; no smoothing.

    Any zero n-gram precision (including an empty hypothesis corpus) yields 0.
    """
    s = bleu_stats(hypotheses, references)
    if any(m == 0 for m in s["matches"]):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(s["matches"], s["totals"])) / MAX_ORDER
    c, r = s["hyp_len"], s["ref_len"]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return 100.0 * bp * math.exp(log_p)


def clipped_precision(hypothesis, reference, n: int) -> tuple[int, int]:
    s = bleu_stats([hypothesis], [reference])
    return s["matches"][n - 1], s["totals"][n - 1]
