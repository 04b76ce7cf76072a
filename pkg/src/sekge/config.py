"""Flat ``key=value`` training configuration."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .exceptions import ConfigError

REQUIRED = ("n",)
# Manifest entries under this prefix describe a checkpoint, not a run.
RESERVED_PREFIX = "checkpoint."


@dataclass
class TrainConfig:
    n: int = 200
    layers: int = 2
    composition: str = "mul"
    activation: str = "tanh"
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 500
    label_smoothing: float = 0.1
    edge_removal_rate: float = 0.2
    leakage_removal: bool = True
    message_dropout: float = 0.1
    input_dropout: float = 0.2
    feature_dropout: float = 0.2
    hidden_dropout: float = 0.3
    conv_channels: int = 32
    kernel_size: int = 3
    reshape_rows: int = 0
    bn_momentum: float = 0.1
    seed: int = 0
    eval_every: int = 1
    patience: int = 10
    eval_batch_size: int = 512
    dtype: str = "float32"
    data_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n <= 0:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if not 0 <= self.edge_removal_rate < 1:
            raise ConfigError(f"edge_removal_rate must be in [0, 1), got {self.edge_removal_rate}")
        for name in ("message_dropout", "input_dropout", "feature_dropout", "hidden_dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.reshape_rows and self.n % self.reshape_rows:
            raise ConfigError(f"reshape_rows={self.reshape_rows} does not divide n={self.n}")
        if self.batch_size < 1 or self.eval_every < 1 or self.patience < 0 or self.epochs < 0:
            raise ConfigError("batch_size and eval_every must be >= 1; patience and epochs >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_lines(self) -> list[str]:
        return [f"{f.name}={_fmt(getattr(self, f.name))}" for f in fields(self)]

    def signature(self) -> str:
        """Hash of every field except ``data_dir``; identical runs share it."""
        lines = [x for x in self.to_lines() if not x.startswith("data_dir=")]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None


FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
DEFAULTS = {f.name: f.default for f in fields(TrainConfig)}


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(entries: dict[str, str], overrides: dict[str, str] | None = None,
                 require=REQUIRED) -> TrainConfig:
    """Merge file entries with overrides, reject unknown keys, coerce types."""
    merged = {k: v for k, v in entries.items() if not k.startswith(RESERVED_PREFIX)}
    merged.update(overrides or {})
    unknown = sorted(set(merged) - set(FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    missing = [k for k in require if k not in merged]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    values = {k: _coerce(k, v, FIELD_TYPES[k]) for k, v in merged.items()}
    return TrainConfig(**values)


def load_config(path, overrides=None, require=REQUIRED) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return build_config(parse_lines(path.read_text(encoding="utf-8").splitlines()),
                        overrides, require)


def describe_defaults() -> str:
    width = max(map(len, DEFAULTS))
    rows = []
    for k, v in DEFAULTS.items():
        note = "  (required)" if k in REQUIRED else ""
        rows.append(f"  {k.ljust(width)}  {_fmt(v)}{note}")
    return "\n".join(rows)
