"""Run configuration: TOML file with [model], [train] and [data] sections plus overrides."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .models import ModelConfig
from .train import TrainConfig

# vocabulary sizes always come from the data
DERIVED_MODEL_KEYS = {"src_vocab", "tgt_vocab"}


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    spec: str = "synth:copy"
    vocab_cap: int | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        model = {k: v for k, v in asdict(self.model).items() if k not in DERIVED_MODEL_KEYS}
        data = {k: v for k, v in asdict(self.data).items() if v is not None}
        model = {k: v for k, v in model.items() if v is not None}
        return {"model": model, "train": asdict(self.train), "data": data}

    def to_toml(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_toml_value(v)}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return repr(v)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


def _allowed(section: str) -> set[str]:
    names = {f.name for f in fields(_SECTIONS[section])}
    return names - DERIVED_MODEL_KEYS if section == "model" else names


def _check_keys(raw: dict) -> None:
    for section, values in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]; expected one of {sorted(_SECTIONS)}")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(values) - _allowed(section)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def from_dict(raw: dict) -> RunConfig:
    _check_keys(raw)
    try:
        return RunConfig(
            model=ModelConfig(**raw.get("model", {})),
            train=TrainConfig(**raw.get("train", {})),
            data=DataConfig(**raw.get("data", {})),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_override(text: str) -> tuple[str, str, object]:
    """``section.key=value`` with a TOML-typed value (bare words are taken as strings)."""
    path, eq, value = text.partition("=")
    section, dot, key = path.strip().partition(".")
    if not eq or not dot:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return section, key, parsed


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for text in overrides or []:
        section, key, value = parse_override(text)
        raw.setdefault(section, {})[key] = value
    return from_dict(raw)


def with_vocab(cfg: ModelConfig, src_vocab: int, tgt_vocab: int) -> ModelConfig:
    return replace(cfg, src_vocab=src_vocab, tgt_vocab=tgt_vocab)
