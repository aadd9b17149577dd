"""Run configuration and ``key = value`` config files.

Config files are line-oriented with optional ``[section]`` headers, e.g.::

    [train]
    epochs = 40
    mode = sparse

    [synth]
    num_blocks = 5

Unknown keys raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import configparser
import dataclasses
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    epochs: int = 40
    balancing_epochs: int | None = None
    batch_size: int = 128
    embedding_dim: int = 128
    layer_count: int = 2
    fanout: int = 10
    k: int = 3
    gamma: float = 1.0
    delta: float = 5.0
    p: float = 0.05
    mode: str = "sparse"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "embedding_dim", "layer_count", "fanout", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.balancing_epochs is not None and self.balancing_epochs < 0:
            raise ConfigError("balancing_epochs must be >= 0")
        if not 0 < self.p < 1:
            raise ConfigError("p must lie in (0, 1)")
        if self.gamma < 0 or self.delta < 0:
            raise ConfigError("gamma and delta must be nonnegative")
        if self.mode not in ("dense", "sparse"):
            raise ConfigError(f"mode must be dense or sparse, got {self.mode!r}")

    def balancing_for(self, task_kind: str) -> int:
        if self.balancing_epochs is not None:
            return self.balancing_epochs
        return 10 if task_kind == "class" else 5

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def rng_stream(seed: int, *purpose) -> np.random.Generator:
    """Independent generator for ``purpose`` derived from the run seed."""
    tag = "/".join(str(p) for p in purpose).encode()
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag)]))


def _coerce(value: str, typ, key: str):
    typ = str(typ)
    try:
        if "int" in typ and "float" not in typ:
            return None if value.lower() == "none" else int(value)
        if "float" in typ:
            return float(value)
        if "bool" in typ:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value {value!r} for key {key!r}") from None


def read_config_file(path) -> dict[str, dict[str, str]]:
    """Parse into ``{section: {key: value}}``; keys before any header go to ``""``."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    out = {}
    for sec in parser.sections():
        name = "" if sec == "__top__" else sec
        out[name] = {k: v.strip() for k, v in parser.items(sec)}
    return out


def build_dataclass(cls, values: dict[str, str], base=None, exclude=()):
    """Instantiate ``cls`` from string values; keys in ``exclude`` count as unknown."""
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init and f.name not in exclude}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(raw, fields[key].type, key)
    try:
        if base is not None:
            return dataclasses.replace(base, **kwargs)
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_train_config(path, section: str = "train") -> TrainConfig:
    sections = read_config_file(path)
    values = dict(sections.get("", {}))
    values.update(sections.get(section, {}))
    return build_dataclass(TrainConfig, values)
