"""Optimisation, masked loss, evaluation and the training loop."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .data import Dataset, Example, Vocab, batch_at, iterate_batches
from .metrics import perplexity
from .models import ModelConfig, build_model
from .nn import Module, set_dropout_rng
from .tensor import Tensor, backward, make_rng, no_grad, ops


class NumericalError(RuntimeError):
    """Non-finite loss or gradient."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    schedule: str = "constant"  # "constant" | "noam"
    warmup: int = 4000
    noam_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 2000
    batch_size: int = 64
    eval_interval: int = 100
    eval_batch_size: int = 64
    patience: int = 10
    clip_norm: float = 1.0
    seed: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if self.schedule not in ("constant", "noam"):
            raise ValueError(f"schedule must be 'constant' or 'noam', got {self.schedule!r}")
        if self.lr <= 0 or self.warmup < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("lr, warmup, batch_size and eval_interval must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def noam_lr(step: int, d_model: int = 256, warmup: int = 4000, scale: float = 1.0) -> float:
    if step < 1:
        raise ValueError("noam schedule is defined for step >= 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def learning_rate(cfg: TrainConfig, step: int, d_model: int) -> float:
    if cfg.schedule == "noam":
        return noam_lr(step, d_model, cfg.warmup, cfg.noam_scale)
    return cfg.lr


class Adam:
    """Bias-corrected Adam keyed by parameter name."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in parameter {name}")
            grads[name] = g
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for k, p in self.params.items():
            self.m[k] = tensors[f"adam.m.{k}"].astype(p.data.dtype, copy=True)
            self.v[k] = tensors[f"adam.v.{k}"].astype(p.data.dtype, copy=True)
        self.t = t


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return total


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean NLL over positions where ``mask`` (non-pad target) holds."""
    return ops.cross_entropy(logits, targets, mask)


def batch_loss(model: Module, batch) -> Tensor:
    logits = model(batch.src, batch.tgt_in, batch.segments)
    return masked_cross_entropy(logits, batch.tgt_out, batch.tgt_mask)


def evaluate(model: Module, examples: Sequence[Example], batch_size: int = 64) -> float:
    """Token-weighted mean cross-entropy, dropout off."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    try:
        with no_grad():
            for batch in iterate_batches(examples, batch_size):
                n = int(batch.tgt_mask.sum())
                total += float(batch_loss(model, batch).data) * n
                count += n
    finally:
        model.train(was_training)
    if count == 0:
        raise ValueError("no target tokens to evaluate")
    return total / count


METRIC_FIELDS = ("step", "split", "ce", "ppl", "lr", "wall_ms")


class MetricsLog:
    """Append-only ``metrics.csv`` with a ``metrics.jsonl`` mirror."""

    def __init__(self, directory: str | Path | None, record_wall_time: bool = False):
        self.rows: list[dict] = []
        self.record_wall_time = record_wall_time
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            csv_path = self.directory / "metrics.csv"
            if not csv_path.exists():
                with open(csv_path, "w", newline="") as fh:
                    csv.writer(fh).writerow(METRIC_FIELDS)

    def log(self, step: int, split: str, ce: float, lr: float | None, wall_ms: float | None) -> dict:
        row = {
            "step": step,
            "split": split,
            "ce": ce,
            "ppl": perplexity(ce) if math.isfinite(ce) else float("nan"),
            "lr": lr,
            "wall_ms": round(wall_ms, 1) if (wall_ms is not None and self.record_wall_time) else None,
        }
        self.rows.append(row)
        if self.directory is not None:
            with open(self.directory / "metrics.csv", "a", newline="") as fh:
                csv.writer(fh).writerow(["" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k] for k in METRIC_FIELDS])
            mirror = dict(row, wall_ms=wall_ms)
            with open(self.directory / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(mirror) + "\n")
        return row


@dataclass
class TrainResult:
    steps: int
    best_valid: float
    best_step: int
    stopped_early: bool
    batch_digest: str
    metrics: list[dict] = field(default_factory=list)


def checkpoint_payload(model: Module, adam: Adam) -> dict[str, np.ndarray]:
    tensors = {f"param.{k}": v for k, v in model.state_dict().items()}
    tensors.update(adam.state())
    return tensors


def save_training_checkpoint(
    directory: Path,
    model: Module,
    adam: Adam,
    train_cfg: TrainConfig,
    state: dict,
    vocabs: tuple[Vocab, Vocab] | None,
) -> None:
    model_cfg = model.config.to_dict()
    manifest = {
        "config_hash": config_hash({"model": model_cfg, "train": asdict(train_cfg)}),
        "model_config": model_cfg,
        "train_config": asdict(train_cfg),
        "step": state["step"],
        "adam_t": adam.t,
        "metrics": {"best_valid": state["best_valid"], "best_step": state["best_step"], "bad_evals": state["bad_evals"]},
        "rng": {"seed": train_cfg.seed, "step": state["step"], "generator": "PCG64"},
        "batch_digest": state["digest"],
        "data_spec": state.get("data_spec", ""),
    }
    extra = {}
    if vocabs is not None:
        extra = {
            "src_vocab.txt": "".join(t + "\n" for t in vocabs[0].itos[4:]),
            "tgt_vocab.txt": "".join(t + "\n" for t in vocabs[1].itos[4:]),
        }
    save_checkpoint(directory, checkpoint_payload(model, adam), manifest, extra)


def load_model(directory: str | Path) -> tuple[Module, dict, tuple[Vocab, Vocab] | None]:
    """Rebuild a model from a checkpoint directory; returns (model, manifest, vocabs)."""
    tensors, manifest = load_checkpoint(directory)
    cfg = ModelConfig(**manifest["model_config"])
    model = build_model(cfg, make_rng(0))
    model.load_state_dict({k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")})
    directory = Path(directory)
    vocabs = None
    if (directory / "src_vocab.txt").exists():
        vocabs = (Vocab.load(directory / "src_vocab.txt"), Vocab.load(directory / "tgt_vocab.txt"))
    return model, manifest, vocabs


def train_loop(
    model: Module,
    data: Dataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    on_eval: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train with Adam, evaluating on ``data.valid`` every ``cfg.eval_interval`` steps.

    Keeps ``last.ckpt`` and ``best.ckpt`` under ``out_dir``; stops early after
    ``cfg.patience`` evaluations without improvement. The batch at each step is a
    function of (seed, step), so resuming reproduces an uninterrupted run.
    """
    if model.config.src_vocab < len(data.src_vocab) or model.config.tgt_vocab < len(data.tgt_vocab):
        raise ValueError("model vocabulary is smaller than the data vocabulary")
    out = Path(out_dir) if out_dir is not None else None
    log = MetricsLog(out, cfg.record_wall_time)
    named = dict(model.named_parameters())
    adam = Adam(named, cfg.beta1, cfg.beta2, cfg.eps)
    d_model = model.config.d_model
    vocabs = (data.src_vocab, data.tgt_vocab)
    state = {"step": 0, "best_valid": math.inf, "best_step": 0, "bad_evals": 0,
             "digest": hashlib.sha256(b"batches").hexdigest(), "data_spec": data.spec}

    if resume_from is not None:
        tensors, manifest = load_checkpoint(resume_from)
        model.load_state_dict({k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")})
        adam.load_state(tensors, manifest["adam_t"])
        state.update(step=manifest["step"], digest=manifest["batch_digest"], **manifest["metrics"])

    t0 = time.perf_counter()

    def wall() -> float:
        return (time.perf_counter() - t0) * 1000.0

    def run_eval(step: int, lr: float | None) -> bool:
        valid_ce = evaluate(model, data.valid, cfg.eval_batch_size)
        row = log.log(step, "valid", valid_ce, lr, wall())
        if on_eval:
            on_eval(row)
        if not math.isfinite(valid_ce):
            raise NumericalError(f"validation cross-entropy is {valid_ce} at step {step}")
        improved = valid_ce < state["best_valid"]
        if improved:
            state.update(best_valid=valid_ce, best_step=step, bad_evals=0)
        else:
            state["bad_evals"] += 1
        if out is not None:
            save_training_checkpoint(out / "last.ckpt", model, adam, cfg, state, vocabs)
            if improved:
                save_training_checkpoint(out / "best.ckpt", model, adam, cfg, state, vocabs)
        return state["bad_evals"] >= cfg.patience

    stopped = False
    if state["step"] == 0:
        stopped = run_eval(0, None)
    model.train()
    interval_loss, interval_n = 0.0, 0
    while not stopped and state["step"] < cfg.steps:
        step = state["step"]
        batch = batch_at(data.train, cfg.batch_size, cfg.seed, step)
        state["digest"] = hashlib.sha256((state["digest"] + batch.digest()).encode()).hexdigest()
        set_dropout_rng(model, make_rng([cfg.seed, 2, step]))
        model.zero_grad()
        loss = batch_loss(model, batch)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError(f"training cross-entropy is {value} at step {step + 1}")
        backward(loss, list(named.values()))
        clip_grad_norm(list(named.values()), cfg.clip_norm)
        lr = learning_rate(cfg, step + 1, d_model)
        adam.step(lr)
        state["step"] = step + 1
        interval_loss += value
        interval_n += 1
        if state["step"] % cfg.eval_interval == 0 or state["step"] == cfg.steps:
            row = log.log(state["step"], "train", interval_loss / interval_n, lr, wall())
            if on_eval:
                on_eval(row)
            interval_loss, interval_n = 0.0, 0
            stopped = run_eval(state["step"], lr)
            model.train()
    set_dropout_rng(model, None)
    model.eval()
    return TrainResult(state["step"], state["best_valid"], state["best_step"], stopped, state["digest"], log.rows)
