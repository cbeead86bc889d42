"""Run configuration: flat ``key=value`` text, overridable from the command line."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """A configuration invariant does not hold."""

    def __init__(self, invariant: str, message: str):
        super().__init__(message)
        self.invariant = invariant


@dataclass
class RunConfig:
    height: int = 64
    width: int = 192
    stages: int = 4
    window: int = 5
    channels: tuple[int, ...] = (16, 32, 64, 128)
    ssim_weight: float = 0.85
    smoothness_weight: float = 1e-3
    learning_rate: float = 1e-4
    steps: int = 2000
    seed: int = 0
    frozen_seed: int = 1
    automask: bool = True
    train_scenes: int = 64
    max_translation: float = 0.3
    max_rotation: float = 0.01
    output_dir: str = "runs/default"
    data_dir: str = ""
    paths: list[str] = field(default_factory=list)

    def validate(self) -> RunConfig:
        if self.stages < 2:
            raise ConfigError("k>=2", f"stage count must be at least 2, got {self.stages}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError("d_odd", f"window must be a positive odd integer, got {self.window}")
        if len(self.channels) != self.stages:
            raise ConfigError("channels==k", f"channel plan {self.channels} does not have {self.stages} entries")
        if self.height % 2**self.stages or self.width % 2**self.stages:
            raise ConfigError("size_divisible", f"image size {self.height}x{self.width} not divisible by 2**{self.stages}")
        if self.learning_rate < 0:
            raise ConfigError("lr>=0", f"learning rate must be non-negative, got {self.learning_rate}")
        for p in self.paths + ([self.data_dir] if self.data_dir else []):
            if not Path(p).exists():
                raise ConfigError("path_exists", f"path does not exist: {p}")
        return self

    # -- text form -------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def update(self, pairs: dict[str, str]) -> RunConfig:
        kinds = {f.name: f for f in dataclasses.fields(self)}
        values = {}
        for key, raw in pairs.items():
            if key not in kinds:
                raise ConfigError("known_key", f"unknown config key {key!r}")
            current = getattr(self, key)
            values[key] = _coerce(raw, current, key)
        return dataclasses.replace(self, **values)

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        pairs = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("key=value", f"line {n}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
        return cls().update(pairs)

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_text(Path(path).read_text())


def _coerce(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.split(",") if v)
        if isinstance(current, list):
            return [v for v in raw.split(",") if v]
        return raw
    except ValueError as exc:
        raise ConfigError("typed_value", f"bad value for {key}: {raw!r}") from exc
