"""Run configuration: defaults, validation, and key=value (de)serialization."""

import dataclasses
from dataclasses import dataclass

from .errors import ConfigurationError
from .networks import DEFAULT_CHANNELS

FILTER_VARIANTS = ("single_kernel", "shallow_dip")


@dataclass(frozen=True)
class SeparationConfig:
    """Everything a separation run needs, serializable to plain text.

    The text form is the reproducibility contract: a run directory stores it
    verbatim, and parsing it back yields an equal configuration.
    """

    input1: str = ""
    input2: str = ""
    gamma_excl: float = 0.2
    epochs: int = 2000
    filter_mode: str = "single_kernel"
    lowpass_slice: int = 2
    learning_rate: float = 1e-3
    seed: int = 0
    out_dir: str = ""
    depth: int = 4
    channels: tuple = DEFAULT_CHANNELS
    skip_channels: int = 4
    checkpoint_interval: int = 500

    def __post_init__(self):
        if self.gamma_excl < 0:
            raise ConfigurationError(f"gamma_excl must be >= 0, got {self.gamma_excl}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.filter_mode not in FILTER_VARIANTS:
            raise ConfigurationError(
                f"filter_mode must be one of {FILTER_VARIANTS}, got {self.filter_mode!r}"
            )
        if self.lowpass_slice not in (1, 2):
            raise ConfigurationError(
                f"lowpass_slice must be 1 or 2, got {self.lowpass_slice}"
            )
        if self.learning_rate <= 0:
            raise ConfigurationError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != self.depth:
            raise ConfigurationError(
                f"channels lists {len(self.channels)} levels for depth {self.depth}"
            )
        if any(c < 1 for c in self.channels):
            raise ConfigurationError(f"channels must be positive, got {self.channels}")
        if self.skip_channels < 1:
            raise ConfigurationError(
                f"skip_channels must be >= 1, got {self.skip_channels}"
            )
        if self.checkpoint_interval < 1:
            raise ConfigurationError(
                f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}"
            )


def config_to_text(cfg):
    """Serialize in declaration order, one key=value per line."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def _coerce(name, raw, default):
    try:
        if isinstance(default, bool):
            raise ConfigurationError(f"unsupported field type for {name}")
        if isinstance(default, tuple):
            return tuple(int(part) for part in raw.split(",") if part.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from exc


def config_from_text(text, overrides=None):
    """Parse key=value lines; `overrides` (e.g. CLI flags) win over the text."""
    fields = {f.name: f for f in dataclasses.fields(SeparationConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno} is not key=value: {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        values[key] = _coerce(key, raw.strip(), fields[key].default)
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in fields:
                raise ConfigurationError(f"unknown configuration key {key!r}")
            if isinstance(value, str):
                value = _coerce(key, value, fields[key].default)
            values[key] = value
    return SeparationConfig(**values)


def config_from_file(path, overrides=None):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration file {path}: {exc}") from exc
    return config_from_text(text, overrides)
