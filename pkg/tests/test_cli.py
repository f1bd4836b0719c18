import json
import subprocess
import sys

import pytest

from unet_transformer.cli import main
from unet_transformer.config import ConfigError, RunConfig, from_dict, load_config, parse_override

TINY = """\
[model]
d_model = 16
dropout = 0.0

[train]
steps = 4
eval_interval = 2
batch_size = 8
lr = 0.003

[data]
spec = "synth:copy:len=4:n=32:vocab=10"
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


# ---------------------------------------------------------------- config

def test_config_defaults_and_overrides(tiny_config):
    cfg = load_config(tiny_config, ["train.seed=7", "model.variant=transformer", "data.spec=synth:reverse"])
    assert cfg.model.d_model == 16 and cfg.train.steps == 4
    assert cfg.train.seed == 7 and cfg.model.variant == "transformer"
    assert cfg.data.spec == "synth:reverse"


def test_config_rejects_unknown_and_derived_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict({"train": {"learning_rate": 1.0}})
    with pytest.raises(ConfigError, match="section"):
        from_dict({"optim": {}})
    with pytest.raises(ConfigError, match="src_vocab"):
        from_dict({"model": {"src_vocab": 100}})
    with pytest.raises(ConfigError):
        from_dict({"train": {"schedule": "cosine"}})
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")


def test_config_toml_round_trip(tmp_path):
    cfg = load_config(None, ["model.variant=s2sa", "train.lr=0.5", "data.vocab_cap=300"])
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml())
    assert load_config(path) == cfg
    assert load_config(None) == RunConfig()


# ---------------------------------------------------------------- commands

def test_schedule_command(capsys):
    assert main(["schedule", "--n", "150"]) == 0
    out = capsys.readouterr().out
    assert "lengths 150/75/38/19/38/75/150" in out
    assert "widths 256,362,512,362,256,256" in out


def test_unknown_variant_exits_2_listing_variants(capsys, tmp_path):
    assert main(["train", "--variant", "resnet", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "unet_no_downup_no_conv" in err and "s2sa" in err


def test_bad_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[train]\nlearning_rate = 1\n")
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "r")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_missing_checkpoint_exits_3(tmp_path):
    assert main(["eval", str(tmp_path / "nope")]) == 3
    assert main(["decode", str(tmp_path / "nope")]) == 3


def test_bad_usage_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--seed", "abc"])
    assert exc.value.code == 2


def test_gradcheck_subset(capsys):
    assert main(["gradcheck", "--only", "matmul", "layer_norm"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
    assert main(["gradcheck", "--only", "nonexistent"]) == 2


def test_train_writes_artifacts_deterministically(tiny_config, tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(tiny_config), "--variant", "unet", "--seed", "3", "--out", str(out)]) == 0
        for artifact in ("metrics.csv", "metrics.jsonl", "config.toml", "run.json", "best.ckpt", "last.ckpt"):
            assert (out / artifact).exists(), artifact
        runs.append(out)
    assert (runs[0] / "metrics.csv").read_bytes() == (runs[1] / "metrics.csv").read_bytes()
    summary = json.loads((runs[0] / "run.json").read_text())
    assert summary["variant"] == "unet" and summary["seed"] == 3 and summary["steps"] == 4

    # resume from the last checkpoint of a finished run is a no-op on the weights
    assert main(["train", "--config", str(tiny_config), "--seed", "3", "--out", str(runs[1]),
                 "--resume", str(runs[1] / "last.ckpt")]) == 0

    assert main(["eval", str(runs[0] / "best.ckpt"), "--split", "valid", "--bleu"]) == 0
    out = capsys.readouterr().out
    assert "valid ce" in out and "valid bleu" in out


def test_decode_reads_stdin(tiny_config, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
    vocab = (out / "best.ckpt" / "src_vocab.txt").read_text().split()
    lines = f"{vocab[0]} {vocab[1]}\n\n{vocab[2]}\n"

    def decode(*extra):
        res = subprocess.run([sys.executable, "-m", "unet_transformer", "decode", str(out / "best.ckpt"), *extra],
                             input=lines, capture_output=True, text=True, check=True)
        return res.stdout.split("\n")

    greedy, beam1 = decode(), decode("--beam", "1")
    assert greedy == beam1
    assert len(greedy) == 4 and greedy[1] == ""
    decode("--beam", "3")


def test_runs_root_env(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv("UNET_TRANSFORMER_RUNS", str(tmp_path / "root"))
    assert main(["train", "--config", str(tiny_config), "--variant", "transformer", "--seed", "1"]) == 0
    assert (tmp_path / "root" / "transformer-seed1" / "run.json").exists()


def test_ablate_runs_four_variants_on_identical_batches(tiny_config, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(tiny_config), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    table = (out / "ablation.txt").read_text().splitlines()
    assert len(table) == 6
    assert [l.split()[0] for l in table[2:]] == ["UNET", "UNET", "UNET", "TRANSFORMER"]
    digests = {json.loads((out / v / "run.json").read_text())["batch_digest"]
               for v in ("unet", "unet_no_downup", "unet_no_downup_no_conv", "transformer")}
    assert len(digests) == 1
    assert "warning" not in captured.err
    assert "-> " in captured.out and ": conv" in captured.out and ": skip" in captured.out
