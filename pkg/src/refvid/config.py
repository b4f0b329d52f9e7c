"""Run configuration: documented defaults, plain-text key=value files, and
dotted-path overrides. Unknown keys are rejected so experiment records stay
trustworthy."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints

from .datapipe import PipelineConfig
from .errors import ConfigError
from .latents import LatentCodec
from .sprites import SpriteConfig
from .training import FlowSettings

ENV_CONFIG_VAR = "REFVID_CONFIG"


@dataclass(frozen=True)
class CodecSettings:
    spatial_factor: int = 8
    temporal_factor: int = 1

    def build(self) -> LatentCodec:
        return LatentCodec(self.spatial_factor, self.temporal_factor)


@dataclass(frozen=True)
class ModelSettings:
    blocks: int = 2
    width: int = 64
    heads: int = 4
    text_dim: int = 32
    mask_channels: int = 4
    alpha: float = 1.0
    ff_mult: int = 2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    codec: CodecSettings = field(default_factory=CodecSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    flow: FlowSettings = field(default_factory=FlowSettings)
    sprites: SpriteConfig = field(default_factory=SpriteConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def model_config(self):
        from .denoiser import ModelConfig

        codec = self.codec.build()
        return ModelConfig(latent_channels=codec.latent_channels(3),
                           mask_channels=self.model.mask_channels,
                           blocks=self.model.blocks, width=self.model.width,
                           heads=self.model.heads, text_dim=self.model.text_dim,
                           ff_mult=self.model.ff_mult, alpha=self.model.alpha)


_CASTS = {int: int, float: float, str: str}


def _cast(raw: str, target: type):
    if target is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot read {raw!r} as a boolean", op="parse")
    if target in _CASTS:
        try:
            return _CASTS[target](raw.strip())
        except ValueError as exc:
            raise ConfigError(f"cannot read {raw!r} as {target.__name__}", op="parse") from exc
    raise ConfigError(f"unsupported config field type {target}", op="parse")


def apply_override(config, dotted_key: str, raw_value: str):
    """Return a copy of `config` with the dotted key replaced."""
    head, _, rest = dotted_key.partition(".")
    hints = get_type_hints(type(config))
    if head not in {f.name for f in dataclasses.fields(config)}:
        raise ConfigError(f"unknown config key {dotted_key!r}", op="apply_override")
    if rest:
        child = getattr(config, head)
        if not dataclasses.is_dataclass(child):
            raise ConfigError(f"{head!r} has no sub-keys", op="apply_override")
        return dataclasses.replace(config, **{head: apply_override(child, rest, raw_value)})
    target = hints[head]
    if dataclasses.is_dataclass(target):
        raise ConfigError(f"{dotted_key!r} is a section, not a value", op="apply_override")
    return dataclasses.replace(config, **{head: _cast(raw_value, target)})


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    config = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}", op="parse")
        key, _, value = stripped.partition("=")
        config = apply_override(config, key.strip(), value.strip())
    return config


def load_config(path: str | Path | None, overrides: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    """Layer: defaults < config file < --set overrides < --seed."""
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist", op="load_config")
        config = parse_config_text(path.read_text(), config)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}", op="load_config")
        key, _, value = item.partition("=")
        config = apply_override(config, key.strip(), value.strip())
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    return config


def dump_config(config, prefix: str = "") -> str:
    """Render a config as the same key=value text it can be parsed from."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            lines.append(dump_config(value, prefix=f"{key}."))
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines)
