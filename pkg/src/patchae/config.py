"""Run configuration: one YAML file, one section per pipeline stage.

Parsing is strict (unknown keys are rejected) and round-trips: parse ->
serialize -> parse yields an equal RunConfig. Every field has a default, so
an empty file is a valid configuration.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .defects import AugmentationConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .loss import LossConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataSection:
    root: str = "data"
    class_name: str = "toy"
    work_dir: str = "runs/default"

    @property
    def class_dir(self) -> Path:
        return Path(self.root) / self.class_name


@dataclass(frozen=True)
class DecoderSection:
    hidden: int | None = None  # default: 2 * c3, resolved at build time

    def __post_init__(self):
        if self.hidden is not None and self.hidden <= 0:
            raise ConfigError(f"decoder hidden width must be positive, got {self.hidden}")


@dataclass(frozen=True)
class BankSection:
    coreset_fraction: float = 1.0
    coreset_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.coreset_fraction <= 1.0:
            raise ConfigError(
                f"coreset_fraction must be in (0, 1], got {self.coreset_fraction}"
            )
        if self.coreset_seed < 0:
            raise ConfigError(f"coreset_seed must be >= 0, got {self.coreset_seed}")


@dataclass(frozen=True)
class EvalSection:
    reweight: bool = False
    reweight_neighborhood: int = 3

    def __post_init__(self):
        if self.reweight_neighborhood < 1:
            raise ConfigError(
                f"reweight_neighborhood must be >= 1, got {self.reweight_neighborhood}"
            )


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    bank: BankSection = field(default_factory=BankSection)
    evaluation: EvalSection = field(default_factory=EvalSection)


def _coerce(value, target_type, where: str):
    origin = typing.get_origin(target_type)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(target_type) if a is not type(None)]
        if value is None:
            if type(None) in typing.get_args(target_type):
                return None
            raise ConfigError(f"{where}: null is not allowed")
        return _coerce(value, args[0], where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        args = typing.get_args(target_type)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, where) for v, a in zip(value, args))
    if dataclasses.is_dataclass(target_type):
        return _from_dict(target_type, value, where)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 treats bare scientific notation like 1e-4 as a string
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{where}: expected a number, got {value!r}") from None
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported config field type {target_type}")


def _from_dict(cls, payload, where: str):
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(payload).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {
        name: _coerce(payload[name], known[name], f"{where}.{name}")
        for name in payload
    }
    return cls(**kwargs)


def _to_plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value


def run_config_from_dict(payload: dict | None) -> RunConfig:
    return _from_dict(RunConfig, payload, "config")


def run_config_to_dict(config: RunConfig) -> dict:
    return _to_plain(config)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return run_config_from_dict(payload)


def save_run_config(config: RunConfig, path: str | Path) -> None:
    text = yaml.safe_dump(run_config_to_dict(config), sort_keys=False)
    Path(path).write_text(text, encoding="utf-8")
