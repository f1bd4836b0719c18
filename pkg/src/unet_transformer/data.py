"""Vocabularies, corpus ingestion, synthetic tasks and padded batches."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .models import BOS, EOS, PAD, UNK
from .tensor import make_rng

RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
DIALOGUE_MAX_LEN = 150
TRANSLATION_MAX_LEN = 50
DIALOGUE_VOCAB = 20000
TRANSLATION_VOCAB = 32000


class DataError(ValueError):
    """Malformed corpus, data spec or vocabulary."""


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    return (text.lower() if lowercase else text).split()


class Vocab:
    """Token <-> id bijection with ``<pad>=0, <unk>=1, <bos>=2, <eos>=3``."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (PAD, BOS):
                continue
            if strip and i == EOS:
                break
            out.append(self.itos[i] if 0 <= i < len(self.itos) else RESERVED[UNK])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls([line for line in Path(path).read_text(encoding="utf-8").split("\n") if line])


def build_vocab(tokens: Iterable[str], cap: int) -> Vocab:
    """Reserved ids plus the ``cap - 4`` most frequent tokens; frequency ties go lexicographically."""
    if cap < len(RESERVED) + 1:
        raise DataError(f"vocabulary cap must be >= {len(RESERVED) + 1}, got {cap}")
    counts = Counter(t for t in tokens if t not in RESERVED)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([t for t, _ in ranked[: cap - len(RESERVED)]])


@dataclass
class Example:
    src: list[int]
    tgt: list[int]  # bos ... eos
    segments: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.segments:
            self.segments = [0] * len(self.src)
        if len(self.segments) != len(self.src):
            raise DataError("segment ids must align with source tokens")


def make_dialogue_example(
    history: Sequence[str | Sequence[str]],
    response: str | Sequence[str],
    vocab: Vocab,
    max_len: int = DIALOGUE_MAX_LEN,
) -> Example:
    """Join history utterances with ``<eos>``, keep the last ``max_len`` tokens.

    Utterance indices are renumbered so the oldest retained utterance is 0.
    """
    if not history:
        raise DataError("dialogue example needs at least one history utterance")
    src: list[str] = []
    seg: list[int] = []
    for i, utt in enumerate(history):
        toks = tokenize(utt) if isinstance(utt, str) else list(utt)
        if i:
            src.append(RESERVED[EOS])
            seg.append(i - 1)
        src.extend(toks)
        seg.extend([i] * len(toks))
    src, seg = src[-max_len:], seg[-max_len:]
    if not src:
        raise DataError("dialogue history is empty after tokenization")
    first = seg[0]
    resp = tokenize(response) if isinstance(response, str) else list(response)
    return Example(vocab.encode(src), [BOS] + vocab.encode(resp) + [EOS], [s - first for s in seg])


def make_translation_example(
    src_line: str | Sequence[str],
    tgt_line: str | Sequence[str],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    max_len: int = TRANSLATION_MAX_LEN,
) -> Example | None:
    """Truncate both sides to ``max_len`` tokens; ``None`` when either side is empty."""
    src = tokenize(src_line) if isinstance(src_line, str) else list(src_line)
    tgt = tokenize(tgt_line) if isinstance(tgt_line, str) else list(tgt_line)
    if not src or not tgt:
        return None
    return Example(src_vocab.encode(src[:max_len]), [BOS] + tgt_vocab.encode(tgt[:max_len]) + [EOS])


# ---------------------------------------------------------------- synthetic tasks

SYNTH_KINDS = ("copy", "reverse", "nested")
BRACKETS = ("()", "[]", "{}", "<>")


def bracket_depths(tokens: Sequence[str]) -> list[int]:
    """Nesting depth after each bracket token: ``( ( ) ) ( )`` -> ``1 2 1 0 1 0``."""
    depth, out = 0, []
    for t in tokens:
        if any(t == b[0] for b in BRACKETS):
            depth += 1
        elif any(t == b[1] for b in BRACKETS):
            depth -= 1
        else:
            raise DataError(f"not a bracket token: {t!r}")
        out.append(depth)
    return out


def synth_target(kind: str, seq: Sequence) -> list:
    if kind == "copy":
        return list(seq)
    if kind == "reverse":
        return list(seq)[::-1]
    if kind == "nested":
        return bracket_depths(seq)
    raise DataError(f"unknown synthetic task {kind!r}; expected one of {SYNTH_KINDS}")


def _random_brackets(rng: np.random.Generator, n_pairs: int, n_types: int) -> list[str]:
    out: list[str] = []
    stack: list[str] = []
    opened = 0
    while opened < n_pairs or stack:
        if opened < n_pairs and (not stack or rng.random() < 0.5):
            b = BRACKETS[int(rng.integers(n_types))]
            out.append(b[0])
            stack.append(b[1])
            opened += 1
        else:
            out.append(stack.pop())
    return out


@dataclass
class SynthTask:
    kind: str
    vocab: Vocab
    examples: list[Example]


def synth_vocab(kind: str, vocab_size: int, max_len: int, n_types: int = 2) -> Vocab:
    if kind == "nested":
        symbols = [c for b in BRACKETS[:n_types] for c in b]
        return Vocab(symbols + [f"d{i}" for i in range(max_len // 2 + 1)])
    if vocab_size <= len(RESERVED) + 1:
        raise DataError("synthetic vocab must leave at least two symbols")
    return Vocab([f"w{i}" for i in range(vocab_size - len(RESERVED))])


def synth_task(
    kind: str,
    n_examples: int,
    lengths: tuple[int, int] = (1, 10),
    vocab_size: int = 20,
    seed: int = 0,
    n_types: int = 2,
) -> SynthTask:
    """Deterministic synthetic corpus.

    copy / reverse: random symbols, target is the source (reversed).
    nested: random balanced brackets over ``n_types`` kinds, target is the depth sequence.
    ``lengths`` bounds the source length (inclusive).
    """
    if kind not in SYNTH_KINDS:
        raise DataError(f"unknown synthetic task {kind!r}; expected one of {SYNTH_KINDS}")
    lo, hi = lengths
    rng = make_rng([seed, SYNTH_KINDS.index(kind)])
    vocab = synth_vocab(kind, vocab_size, hi, n_types)
    examples = []
    for _ in range(n_examples):
        if kind == "nested":
            pairs = int(rng.integers(max(1, lo // 2), max(1, hi // 2) + 1))
            toks = _random_brackets(rng, pairs, n_types)
            tgt = [f"d{d}" for d in bracket_depths(toks)]
            examples.append(Example(vocab.encode(toks), [BOS] + vocab.encode(tgt) + [EOS]))
        else:
            n = int(rng.integers(lo, hi + 1))
            ids = [int(i) for i in rng.integers(len(RESERVED), len(vocab), size=n)]
            examples.append(Example(ids, [BOS] + synth_target(kind, ids) + [EOS]))
    return SynthTask(kind, vocab, examples)


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    src: np.ndarray  # [B, N] right-padded ids
    tgt: np.ndarray  # [B, T] bos ... eos, right-padded
    segments: np.ndarray  # [B, N]

    @property
    def src_pad(self) -> np.ndarray:
        return self.src == PAD

    @property
    def tgt_in(self) -> np.ndarray:
        return self.tgt[:, :-1]

    @property
    def tgt_out(self) -> np.ndarray:
        return self.tgt[:, 1:]

    @property
    def tgt_mask(self) -> np.ndarray:
        """True on target positions that count towards the loss."""
        return self.tgt_out != PAD

    def __len__(self) -> int:
        return self.src.shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.src, self.tgt, self.segments):
            h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
            h.update(str(a.shape).encode())
        return h.hexdigest()


def make_batch(examples: Sequence[Example], pad_to: tuple[int, int] | None = None) -> Batch:
    if not examples:
        raise DataError("cannot batch zero examples")
    n = max(len(e.src) for e in examples)
    t = max(len(e.tgt) for e in examples)
    if pad_to is not None:
        n, t = max(n, pad_to[0]), max(t, pad_to[1])
    src = np.full((len(examples), n), PAD, dtype=np.int64)
    tgt = np.full((len(examples), t), PAD, dtype=np.int64)
    seg = np.zeros((len(examples), n), dtype=np.int64)
    for i, e in enumerate(examples):
        if not e.src or PAD in e.src:
            raise DataError("example source must be non-empty and pad-free")
        src[i, : len(e.src)] = e.src
        tgt[i, : len(e.tgt)] = e.tgt
        seg[i, : len(e.segments)] = e.segments
    return Batch(src, tgt, seg)


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return make_rng([seed, 1, epoch]).permutation(n)


def batch_at(examples: Sequence[Example], batch_size: int, seed: int, step: int, shuffle: bool = True) -> Batch:
    """The batch consumed at training ``step`` (0-based): a pure function of (seed, step).

    Each epoch is a fresh seeded permutation, cut into ``ceil(n / batch_size)``
    batches; the last batch of an epoch may be short.
    """
    n = len(examples)
    per_epoch = -(-n // batch_size)
    epoch, k = divmod(step, per_epoch)
    order = epoch_order(n, seed, epoch, shuffle)
    idx = order[k * batch_size:(k + 1) * batch_size]
    return make_batch([examples[i] for i in idx])


def iterate_batches(examples: Sequence[Example], batch_size: int) -> Iterator[Batch]:
    """Fixed-order evaluation batches."""
    for i in range(0, len(examples), batch_size):
        yield make_batch(examples[i:i + batch_size])


# ---------------------------------------------------------------- corpora & data specs

@dataclass
class Dataset:
    """Train/valid/test splits with their vocabularies."""

    train: list[Example]
    valid: list[Example]
    test: list[Example]
    src_vocab: Vocab
    tgt_vocab: Vocab
    spec: str
    skipped: int = 0


def read_pairs(src_path: str | Path, tgt_path: str | Path | None = None) -> list[tuple[str, str]]:
    """Tab-separated ``source<TAB>target`` lines, or two line-aligned files."""
    try:
        src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
        if tgt_path is None:
            pairs = []
            for no, line in enumerate(src_lines, start=1):
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise DataError(f"{src_path}:{no}: expected 'source<TAB>target'")
                s, t = line.split("\t", 1)
                pairs.append((s, t))
            return pairs
        tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(str(exc)) from exc
    if len(src_lines) != len(tgt_lines):
        raise DataError(f"line counts differ: {len(src_lines)} vs {len(tgt_lines)}")
    return list(zip(src_lines, tgt_lines))


def split_history(source: str) -> list[list[str]]:
    """Dialogue source field: utterances separated by a literal ``<eos>`` token."""
    utterances, cur = [], []
    for tok in tokenize(source):
        if tok == RESERVED[EOS]:
            utterances.append(cur)
            cur = []
        else:
            cur.append(tok)
    utterances.append(cur)
    return [u for u in utterances if u]


def load_corpus(
    pairs: Sequence[tuple[str, str]],
    mode: str,
    vocab_cap: int | None = None,
    spec: str = "",
    holdout: float = 0.05,
) -> Dataset:
    """Build vocabularies on the training split and convert every pair.

    The last ``holdout`` fraction (at least one example each) becomes test, the
    one before it validation.
    """
    n = len(pairs)
    if n < 3:
        raise DataError("corpus needs at least 3 examples (train/valid/test)")
    n_hold = max(1, int(round(n * holdout)))
    train_pairs = pairs[: n - 2 * n_hold]
    valid_pairs = pairs[n - 2 * n_hold: n - n_hold]
    test_pairs = pairs[n - n_hold:]
    if mode == "dialogue":
        cap = vocab_cap or DIALOGUE_VOCAB
        vocab = build_vocab((t for s, r in train_pairs for t in tokenize(s) + tokenize(r)), cap)
        src_vocab = tgt_vocab = vocab
    elif mode == "translation":
        cap = vocab_cap or TRANSLATION_VOCAB
        src_vocab = build_vocab((t for s, _ in train_pairs for t in tokenize(s)), cap)
        tgt_vocab = build_vocab((t for _, r in train_pairs for t in tokenize(r)), cap)
    else:
        raise DataError(f"unknown mode {mode!r}")

    skipped = 0

    def convert(part):
        nonlocal skipped
        out = []
        for s, r in part:
            if mode == "dialogue":
                history = split_history(s)
                if not history or not tokenize(r):
                    skipped += 1
                    continue
                out.append(make_dialogue_example(history, r, src_vocab))
            else:
                ex = make_translation_example(s, r, src_vocab, tgt_vocab)
                if ex is None:
                    skipped += 1
                    continue
                out.append(ex)
        return out

    train, valid, test = convert(train_pairs), convert(valid_pairs), convert(test_pairs)
    if not train or not valid or not test:
        raise DataError("a split is empty after skipping empty examples")
    return Dataset(train, valid, test, src_vocab, tgt_vocab, spec, skipped)


def parse_data_spec(spec: str) -> tuple[str, dict]:
    """``synth:<kind>[:len=..][:n=..][:vocab=..]`` or ``file:<src>[,<tgt>]``."""
    kind, _, rest = spec.partition(":")
    if kind == "synth":
        parts = rest.split(":")
        opts: dict = {"kind": parts[0]}
        for p in parts[1:]:
            key, eq, value = p.partition("=")
            if not eq or key not in ("len", "n", "vocab", "types"):
                raise DataError(f"bad synthetic option {p!r} in {spec!r}")
            opts[key] = int(value)
        if opts["kind"] not in SYNTH_KINDS:
            raise DataError(f"unknown synthetic task {opts['kind']!r}; expected one of {SYNTH_KINDS}")
        return "synth", opts
    if kind == "file":
        paths = rest.split(",")
        if not rest or len(paths) > 2:
            raise DataError(f"bad file spec {spec!r}; expected file:<src>[,<tgt>]")
        return "file", {"paths": paths}
    raise DataError(f"bad data spec {spec!r}; expected synth:<kind>... or file:<src>[,<tgt>]")


def load_data(spec: str, mode: str = "translation", seed: int = 0, vocab_cap: int | None = None) -> Dataset:
    source, opts = parse_data_spec(spec)
    if source == "synth":
        max_len = opts.get("len", 10)
        n = opts.get("n", 64)
        vocab_size = opts.get("vocab", 20)
        kw = dict(lengths=(1, max_len), vocab_size=vocab_size, n_types=opts.get("types", 2))
        train = synth_task(opts["kind"], n, seed=seed, **kw)
        valid = synth_task(opts["kind"], max(16, n // 4), seed=seed + 10_000, **kw)
        test = synth_task(opts["kind"], max(16, n // 4), seed=seed + 20_000, **kw)
        return Dataset(train.examples, valid.examples, test.examples, train.vocab, train.vocab, spec)
    pairs = read_pairs(*opts["paths"])
    return load_corpus(pairs, mode, vocab_cap, spec)
