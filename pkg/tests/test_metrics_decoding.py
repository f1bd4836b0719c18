import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unet_transformer.decoding import (
    beam_search,
    beam_search_fn,
    exhaustive_search,
    greedy_decode,
    greedy_search,
    length_cap,
    sequence_log_prob,
    token_preference,
)
from unet_transformer.metrics import bleu, bleu_stats, clipped_precision, perplexity
from unet_transformer.models import EOS, ModelConfig, build_model
from unet_transformer.tensor import make_rng


# ---------------------------------------------------------------- metrics

def test_perplexity_examples():
    assert perplexity(0.0) == 1.0
    assert perplexity(math.log(20000)) == pytest.approx(20000, rel=1e-12)
    assert perplexity(3.847) == pytest.approx(46.85, abs=0.01)


def test_bleu_identity_and_empty():
    refs = [["the", "cat", "sat", "on", "the", "mat"], ["a", "b", "c", "d", "e"]]
    assert bleu(refs, refs) == pytest.approx(100.0)
    assert bleu([[], []], refs) == 0.0


def test_clipped_unigram_precision():
    hyp = "the the the the the the the".split()
    ref = "the cat is on the mat".split()
    assert clipped_precision(hyp, ref, 1) == (2, 7)
    assert bleu([hyp], [ref]) == 0.0  # no bigram matches


def test_bleu_hand_computed_with_brevity_penalty():
    hyp = "the cat sat on the".split()
    ref = "the cat sat on the mat".split()
    stats = bleu_stats([hyp], [ref])
    precisions = [m / t for m, t in zip(stats["matches"], stats["totals"])]
    assert precisions == [1.0, 1.0, 1.0, 1.0]
    assert bleu([hyp], [ref]) == pytest.approx(100 * math.exp(1 - 6 / 5))


def test_bleu_rejects_bad_input():
    with pytest.raises(ValueError):
        bleu([["a"]], [[]])
    with pytest.raises(ValueError):
        bleu([["a"]], [["a"], ["b"]])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), min_size=1, max_size=4),
       st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), min_size=1, max_size=4))
def test_bleu_in_range(hyps, refs):
    n = min(len(hyps), len(refs))
    assert 0.0 <= bleu(hyps[:n], refs[:n]) <= 100.0 + 1e-9


# ---------------------------------------------------------------- decoding on toy LMs

def table_lm(table, vocab_size: int):
    """Step function from a prefix -> {token: prob} lookup (bos stripped)."""
    lookup = table if callable(table) else table.__getitem__

    def step(prefixes):
        out = np.full((len(prefixes), vocab_size), -np.inf)
        for i, p in enumerate(prefixes):
            for tok, prob in lookup(tuple(p[1:])).items():
                out[i, tok] = math.log(prob)
        return out
    return step


A, B, C = 4, 5, 6
TOY = {
    (): {A: 0.5, B: 0.4, EOS: 0.1},
    (A,): {A: 0.4, B: 0.3, EOS: 0.3},
    (B,): {A: 0.1, B: 0.1, EOS: 0.8},
    (A, A): {A: 0.5, B: 0.3, EOS: 0.2},
    (A, B): {A: 0.2, B: 0.2, EOS: 0.6},
    (B, A): {A: 0.3, B: 0.3, EOS: 0.4},
    (B, B): {A: 0.3, B: 0.3, EOS: 0.4},
}
for _p in [(x, y, z) for x in (A, B) for y in (A, B) for z in (A, B)]:
    TOY[_p] = {EOS: 1.0}


def test_beam_recovers_exhaustive_argmax_on_toy_lm():
    step = table_lm(TOY, 7)
    best = exhaustive_search(step, 7, 3)
    assert best[0] == [B] and best[1] == pytest.approx(math.log(0.32))
    greedy = greedy_search(step, 7, 3)
    assert greedy[0] == [A, A, A] and greedy[1] == pytest.approx(math.log(0.1))
    beam = beam_search_fn(step, 7, 3, beam=3)
    assert beam[0] == best[0] and beam[1] == pytest.approx(best[1])


def test_beam_can_drop_the_greedy_path():
    # the greedy first token spreads its mass over three continuations, so every
    # prefix through it falls out of a width-3 beam at the second step
    def lm(prefix):
        if not prefix:
            return {A: 0.4, B: 0.3, C: 0.3}
        if prefix[0] == A:
            return {EOS: 1.0} if len(prefix) > 1 else {A: 0.34, B: 0.33, C: 0.33}
        if len(prefix) == 1:
            return {A: 0.5, B: 0.5}
        return {A: 0.3, B: 0.3, C: 0.3, EOS: 0.1}

    step = table_lm(lm, 7)
    greedy = greedy_search(step, 7, 3)
    beam = beam_search_fn(step, 7, 3, beam=3)
    assert greedy[0] == [A, A] and greedy[1] == pytest.approx(math.log(0.4 * 0.34))
    assert beam[0][0] != A and beam[1] < greedy[1]
    assert exhaustive_search(step, 7, 3)[1] >= greedy[1]


def test_greedy_tie_break_and_reserved_tokens():
    rank = token_preference(8)
    assert list(np.argsort(rank)[:6]) == [4, 5, 6, 7, 3, 1]
    uniform = lambda prefixes: np.zeros((len(prefixes), 8))
    assert greedy_search(uniform, 8, 5)[0] == [4] * 5
    eos_first = lambda prefixes: np.where(np.arange(8) == EOS, 0.0, -5.0)[None].repeat(len(prefixes), 0)
    assert greedy_search(eos_first, 8, 5)[0] == []


def test_length_cap():
    assert length_cap(10) == 25


def random_lm(seed, vocab_size):
    def step(prefixes):
        rows = []
        for p in prefixes:
            z = np.random.default_rng([seed] + list(p)).standard_normal(vocab_size) * 2
            rows.append(z - np.log(np.exp(z).sum()))
        return np.array(rows)
    return step


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 9), st.integers(1, 6))
def test_beam_one_equals_greedy_and_exhaustive_bounds_both(seed, vocab_size, cap):
    step = random_lm(seed, vocab_size)
    greedy = greedy_search(step, vocab_size, cap)
    assert beam_search_fn(step, vocab_size, cap, beam=1) == greedy
    if cap <= 3:
        best = exhaustive_search(step, vocab_size, cap)[1]
        assert best >= beam_search_fn(step, vocab_size, cap, beam=3)[1] - 1e-12
        assert best >= greedy[1] - 1e-12


def test_beam_rejects_zero_width():
    with pytest.raises(ValueError):
        beam_search_fn(random_lm(0, 6), 6, 3, beam=0)


# ---------------------------------------------------------------- decoding with models

@pytest.fixture(scope="module")
def random_model():
    cfg = ModelConfig(variant="unet", src_vocab=12, tgt_vocab=12, d_model=16, mode="translation")
    return build_model(cfg, make_rng(7))


def test_model_beam_one_matches_greedy_on_20_inputs(random_model):
    rng = make_rng(8)
    for _ in range(20):
        src = list(rng.integers(4, 12, int(rng.integers(1, 6))))
        assert beam_search(random_model, src, beam=1) == greedy_decode(random_model, src)


def test_model_decode_scores_are_consistent(random_model):
    src = [5, 6, 7]
    out = greedy_decode(random_model, src)
    assert len(out) <= length_cap(len(src))
    beam_out = beam_search(random_model, src, beam=3)
    assert sequence_log_prob(random_model, src, beam_out) >= sequence_log_prob(random_model, src, out) - 1e-4


def test_uniform_model_emits_lowest_non_reserved_token():
    cfg = ModelConfig(variant="transformer", src_vocab=10, tgt_vocab=10, d_model=8, mode="translation")
    model = build_model(cfg, make_rng(0))
    for p in model.generator.parameters():
        p.data[...] = 0
    assert greedy_decode(model, [5, 6]) == [4] * length_cap(2)
