"""Run configuration file (YAML) with dotted-path command-line overrides."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from .diffusion import NOISE_MODES, SamplerConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class DataSection:
    dataset: Optional[str] = None
    vocab: Optional[str] = None
    skeleton: Optional[str] = None


@dataclass
class ModelSection:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    max_positions: int = 64
    dropout_rate: float = 0.0
    cross_attention: bool = True
    condition_bias: bool = True


@dataclass
class ScheduleSection:
    kind: str = "cosine"
    T: int = 1000
    s: float = 0.008


@dataclass
class LossSection:
    lambda_bone: float = 0.1


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    max_steps: int = 2000
    checkpoint_interval: int = 500
    log_interval: int = 50
    grad_clip: Optional[float] = 1.0


@dataclass
class SamplerSection:
    iterations: int = 5
    noise_mode: str = "fresh"
    timesteps: Optional[List[int]] = None


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    base_dir: Path = field(default=Path("."), repr=False)

    def resolve(self, value: Optional[str]) -> Optional[Path]:
        """Resolve a path relative to the config file's directory."""
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def train_config(self) -> TrainConfig:
        t = self.train
        try:
            return TrainConfig(learning_rate=t.learning_rate, beta1=t.beta1, beta2=t.beta2,
                               adam_eps=t.adam_eps, batch_size=t.batch_size, max_steps=t.max_steps,
                               seed=self.seed, checkpoint_interval=t.checkpoint_interval,
                               log_interval=t.log_interval, grad_clip=t.grad_clip,
                               lambda_bone=self.loss.lambda_bone)
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from exc

    def sampler_config(self) -> SamplerConfig:
        s = self.sampler
        return SamplerConfig(s.iterations, s.noise_mode, s.timesteps)


def _coerce(value: Any, hint, where: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if origin in (list, List):
        (item,) = typing.get_args(hint)
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        # PyYAML reads "1e-3" as a string
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if hint is str:
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return str(value)
    return value


def _build(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.name != "base_dir"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix + '.' if prefix else ''}{unknown[0]}: unknown field")
    kwargs = {}
    for name in names & set(data):
        where = f"{prefix}.{name}" if prefix else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, data[name], where)
        else:
            kwargs[name] = _coerce(data[name], hint, where)
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    m = cfg.model
    for name in ("num_layers", "num_heads", "model_dim", "ffn_dim", "max_positions"):
        if getattr(m, name) < 1:
            raise ConfigError(f"model.{name}: must be positive")
    if m.model_dim % m.num_heads:
        raise ConfigError("model.model_dim: must be divisible by model.num_heads")
    if m.model_dim % 2:
        raise ConfigError("model.model_dim: must be even")
    if not 0.0 <= m.dropout_rate < 1.0:
        raise ConfigError("model.dropout_rate: must lie in [0, 1)")
    if cfg.schedule.kind != "cosine":
        raise ConfigError(f"schedule.kind: {cfg.schedule.kind!r} is not implemented (only 'cosine')")
    if cfg.schedule.T < 1:
        raise ConfigError("schedule.T: must be a positive integer")
    if not cfg.schedule.s > 0:
        raise ConfigError("schedule.s: must be positive")
    if cfg.loss.lambda_bone < 0:
        raise ConfigError("loss.lambda_bone: must be >= 0")
    t = cfg.train
    for name in ("learning_rate", "adam_eps"):
        if not getattr(t, name) > 0:
            raise ConfigError(f"train.{name}: must be positive")
    for name in ("beta1", "beta2"):
        if not 0.0 <= getattr(t, name) < 1.0:
            raise ConfigError(f"train.{name}: must lie in [0, 1)")
    for name in ("batch_size", "checkpoint_interval", "log_interval"):
        if getattr(t, name) < 1:
            raise ConfigError(f"train.{name}: must be positive")
    if t.max_steps < 0:
        raise ConfigError("train.max_steps: must be >= 0")
    if t.grad_clip is not None and not t.grad_clip > 0:
        raise ConfigError("train.grad_clip: must be positive or null")
    s = cfg.sampler
    if s.iterations < 1 or s.iterations > cfg.schedule.T:
        raise ConfigError(f"sampler.iterations: must lie in [1, {cfg.schedule.T}]")
    if s.noise_mode not in NOISE_MODES:
        raise ConfigError(f"sampler.noise_mode: must be one of {list(NOISE_MODES)}")
    if s.timesteps is not None:
        try:
            cfg.sampler_config().resolve(cfg.schedule.T)
        except ValueError as exc:
            raise ConfigError(f"sampler.timesteps: {exc}") from exc


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``section.key=value`` overrides; values are parsed as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {part} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def parse_config(data: Any, base_dir=".") -> RunConfig:
    cfg = _build(RunConfig, data, "")
    cfg.base_dir = Path(base_dir)
    _validate(cfg)
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(apply_overrides(data, overrides), path.parent)
