import math

import numpy as np
import pytest

from unet_transformer.checkpoint import CheckpointError, load_checkpoint, read_tensor, save_checkpoint, write_tensor
from unet_transformer.data import load_data
from unet_transformer.models import VARIANTS, ModelConfig, build_model
from unet_transformer.tensor import Tensor, make_rng
from unet_transformer.train import (
    Adam,
    NumericalError,
    TrainConfig,
    clip_grad_norm,
    evaluate,
    load_model,
    masked_cross_entropy,
    noam_lr,
    train_loop,
)


def test_adam_first_step_is_lr_times_sign():
    p = Tensor(np.array([1.0, -2.0, 3.0], dtype=np.float32))
    p.grad = np.array([0.5, -7.0, 0.0], dtype=np.float32)
    adam = Adam({"p": p})
    adam.step(1e-4)
    np.testing.assert_allclose(p.data - [1.0, -2.0, 3.0], [-1e-4, 1e-4, 0.0], rtol=1e-3, atol=1e-9)


def test_adam_rejects_non_finite_gradient_by_name():
    p = Tensor(np.zeros(2, dtype=np.float32))
    p.grad = np.array([1.0, np.nan], dtype=np.float32)
    with pytest.raises(NumericalError, match="decoder.0.weight"):
        Adam({"decoder.0.weight": p}).step(1e-3)


def test_noam_schedule():
    assert noam_lr(4000, 256, 4000) == pytest.approx(9.882e-4, rel=1e-3)
    assert noam_lr(1000, 256, 4000) / noam_lr(2000, 256, 4000) == pytest.approx(0.5)
    peak = noam_lr(4000, 256, 4000)
    assert all(noam_lr(s, 256, 4000) <= peak for s in (1, 100, 3999, 4001, 10000))
    with pytest.raises(ValueError):
        noam_lr(0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(schedule="cosine")
    with pytest.raises(ValueError):
        TrainConfig(lr=0)


def test_clip_grad_norm():
    a, b = Tensor(np.zeros(2)), Tensor(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum()) == pytest.approx(1.0, rel=1e-5)


def test_masked_cross_entropy_uniform_and_padding_invariant():
    logits = Tensor(np.zeros((2, 3, 4)))
    targets = np.array([[1, 2, 0], [3, 0, 0]])
    mask = targets != 0
    assert masked_cross_entropy(logits, targets, mask).item() == pytest.approx(math.log(4))
    rng = make_rng(0)
    raw = rng.standard_normal((2, 3, 4))
    base = masked_cross_entropy(Tensor(raw), targets, mask).item()
    raw[~mask] = rng.standard_normal(((~mask).sum(), 4)) * 50
    assert masked_cross_entropy(Tensor(raw), targets, mask).item() == pytest.approx(base, rel=1e-12)


DATA = "synth:copy:len=5:n=48:vocab=12"


def tiny_setup(variant="unet", seed=0):
    data = load_data(DATA, seed=seed)
    cfg = ModelConfig(variant=variant, src_vocab=len(data.src_vocab), tgt_vocab=len(data.tgt_vocab), d_model=16, dropout=0.1)
    return data, build_model(cfg, make_rng([seed, 0]))


def test_zero_steps_logs_only_initial_evaluation(tmp_path):
    data, model = tiny_setup()
    result = train_loop(model, data, TrainConfig(steps=0, eval_interval=2), tmp_path)
    assert result.steps == 0
    assert [(r["step"], r["split"]) for r in result.metrics] == [(0, "valid")]
    assert (tmp_path / "best.ckpt" / "manifest.json").exists()


def test_training_reduces_loss_and_is_deterministic(tmp_path):
    cfg = TrainConfig(steps=6, eval_interval=3, batch_size=8, lr=3e-3)
    runs = []
    for name in ("a", "b"):
        data, model = tiny_setup()
        train_loop(model, data, cfg, tmp_path / name)
        runs.append((tmp_path / name / "metrics.csv").read_bytes())
    assert runs[0] == runs[1]
    lines = runs[0].decode().splitlines()
    assert lines[0] == "step,split,ce,ppl,lr,wall_ms"
    valid = [float(l.split(",")[2]) for l in lines[1:] if ",valid," in l]
    assert valid[-1] < valid[0]


def test_resume_reproduces_uninterrupted_run(tmp_path):
    full_cfg = TrainConfig(steps=8, eval_interval=4, batch_size=8, lr=3e-3)
    data, model = tiny_setup()
    full = train_loop(model, data, full_cfg, tmp_path / "full")

    data, first = tiny_setup()
    train_loop(first, data, TrainConfig(steps=4, eval_interval=4, batch_size=8, lr=3e-3), tmp_path / "half")
    data, resumed = tiny_setup(seed=0)
    out = train_loop(resumed, data, full_cfg, tmp_path / "half", resume_from=tmp_path / "half" / "last.ckpt")
    assert out.batch_digest == full.batch_digest
    for (name, a), (_, b) in zip(model.named_parameters(), resumed.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)


def test_checkpoint_round_trip_is_bit_identical(tmp_path):
    data, model = tiny_setup()
    train_loop(model, data, TrainConfig(steps=2, eval_interval=2, batch_size=8), tmp_path)
    loaded, manifest, vocabs = load_model(tmp_path / "last.ckpt")
    assert manifest["step"] == 2 and vocabs[0] == data.src_vocab
    for (name, a), (_, b) in zip(model.named_parameters(), loaded.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)
    batch = data.valid[:4]
    assert evaluate(model, batch) == evaluate(loaded, batch)


def test_corrupt_checkpoints_are_rejected(tmp_path):
    path = tmp_path / "t.bin"
    write_tensor(path, np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(read_tensor(path), np.arange(6.0).reshape(2, 3))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        read_tensor(path)
    path.write_bytes(b"JUNK" + b"\0" * 12)
    with pytest.raises(CheckpointError, match="not a tensor"):
        read_tensor(path)

    ckpt = save_checkpoint(tmp_path / "c", {"w": np.ones((2, 2))}, {"step": 1})
    assert load_checkpoint(ckpt)[1]["step"] == 1
    (ckpt / "manifest.json").write_text("{")
    with pytest.raises(CheckpointError):
        load_checkpoint(ckpt)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")


@pytest.mark.parametrize("variant", VARIANTS)
def test_evaluation_is_batch_size_invariant(variant):
    data, model = tiny_setup(variant)
    examples = data.valid[:12]
    assert evaluate(model, examples, 1) == pytest.approx(evaluate(model, examples, 32), abs=1e-5)


def test_nan_loss_raises(tmp_path):
    data, model = tiny_setup()
    for p in model.generator.parameters():
        p.data[...] = np.nan
    with pytest.raises(NumericalError):
        train_loop(model, data, TrainConfig(steps=1, eval_interval=1), tmp_path)
