"""Run configuration: defaults, then a JSON file, then command-line overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import VARIANTS, WITH_VALVES
from .decode import DecodeConfig
from .decoder import DecoderConfig
from .encoder import ConfigError, EncoderConfig
from .model import ModelConfig
from .train import TrainConfig, desk_config, full_config

RUN_CONFIG_FILE = "run_config.json"
PRESETS = ("desk", "full")


@dataclass
class DataConfig:
    n: int = 1000
    seed: int = 0
    variant: str = WITH_VALVES
    fractions: tuple = (0.8, 0.1, 0.1)

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("data.n must be at least 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"data.variant must be one of {VARIANTS}, got {self.variant!r}")
        f = tuple(self.fractions)
        if len(f) != 3 or any(x < 0 for x in f) or abs(sum(f) - 1.0) > 1e-9:
            raise ConfigError("data.fractions must be three non-negative numbers summing to 1")


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.encoder, self.decoder)

    def validate(self, model: bool = True) -> None:
        if model:
            self.encoder.validate()
            # vocab_size and d_node are filled in from the data
            dec = dataclasses.replace(self.decoder, vocab_size=max(self.decoder.vocab_size, 5))
            dec.validate()
        self.train.validate()
        self.decode.validate()
        self.data.validate()

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, directory) -> Path:
        path = Path(directory) / RUN_CONFIG_FILE
        path.write_text(self.to_json())
        return path


_SECTIONS = {"encoder": EncoderConfig, "decoder": DecoderConfig, "train": TrainConfig,
             "decode": DecodeConfig, "data": DataConfig}


def preset(name: str = "desk", arch: str = "combined") -> RunConfig:
    if name == "full":
        mc, tc = full_config(arch)
    elif name == "desk":
        mc, tc = desk_config(arch), TrainConfig()
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return RunConfig(mc.encoder, mc.decoder, tc)


def _coerce(cls, key: str, value):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigError(f"unknown config key {cls.__name__}.{key}")
    default = getattr(cls(), key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        return tuple(value)
    return value


def merge(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{"section": {...}}`` or ``{"section.key": value}`` overrides."""
    out = dataclasses.replace(cfg, **{s: dataclasses.replace(getattr(cfg, s)) for s in _SECTIONS})
    flat = {}
    for key, value in overrides.items():
        if isinstance(value, dict):
            if key not in _SECTIONS:
                raise ConfigError(f"unknown config section {key!r}")
            flat.update({f"{key}.{k}": v for k, v in value.items()})
        else:
            flat[key] = value
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(out, section)
        setattr(obj, name, _coerce(_SECTIONS[section], name, value))
    return out


def load(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def resolve(config_file=None, overrides: dict | None = None, preset_name: str = "desk",
            arch: str | None = None) -> RunConfig:
    """Defaults <- config file <- flag overrides, validated."""
    file_data = load(config_file) if config_file else {}
    if arch is None:
        arch = (overrides or {}).get("encoder.arch") or file_data.get("encoder", {}).get("arch") or "combined"
    cfg = merge(preset(preset_name, arch), file_data)
    cfg = merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})
    cfg.validate()
    return cfg
