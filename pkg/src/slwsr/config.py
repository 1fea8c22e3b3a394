"""Declarative model configuration and its ``key = value`` text format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError

POOL_MODES = ("normal", "none", "former_all")
ACTIVATION_KEEP = ("rare", "third", "half", "two_thirds", "all")
DIV2K_RGB_MEAN = (0.4488, 0.4371, 0.4040)

# 9 bunches of 3 blocks, the last bunch without its middle block: 26 blocks.
DEFAULT_LAYOUT = (3, 3, 3, 3, 3, 3, 3, 3, 2)


@dataclass(frozen=True)
class ModelConfig:
    n_feats: int = 16
    scale: int = 4
    n_bunches: int = 9
    blocks_per_bunch: tuple = DEFAULT_LAYOUT
    pool_mode: str = "normal"
    residual_scale: float = 1.0
    compress_set: tuple = ()
    expansion: int = 2
    activation_keep: str = "half"
    out_channels: int = 3
    in_channels: int = 3
    pool_weight: float = 0.5
    skip_weight: float = 0.5
    normalize: bool = True
    rgb_mean: tuple = DIV2K_RGB_MEAN

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_bunch", tuple(int(b) for b in self.blocks_per_bunch))
        object.__setattr__(self, "compress_set", tuple(sorted({int(i) for i in self.compress_set})))
        object.__setattr__(self, "rgb_mean", tuple(float(m) for m in self.rgb_mean))
        self.validate()

    @property
    def n_blocks(self):
        return sum(self.blocks_per_bunch)

    @property
    def n_former(self):
        return (self.n_bunches + 1) // 2

    def validate(self):
        if self.n_feats < 1:
            raise ConfigurationError(f"n_feats must be positive, got {self.n_feats}")
        if self.scale < 1:
            raise ConfigurationError(f"scale must be positive, got {self.scale}")
        if not _tail_factors(self.scale):
            raise ConfigurationError(f"scale {self.scale} is not a product of 2s or a single 3")
        if self.n_bunches < 1 or len(self.blocks_per_bunch) != self.n_bunches:
            raise ConfigurationError(
                f"blocks_per_bunch has {len(self.blocks_per_bunch)} entries for {self.n_bunches} bunches")
        if any(b not in (1, 2, 3) for b in self.blocks_per_bunch):
            raise ConfigurationError(f"each bunch holds 1 to 3 blocks, got {self.blocks_per_bunch}")
        if self.pool_mode not in POOL_MODES:
            raise ConfigurationError(f"pool_mode must be one of {POOL_MODES}, got {self.pool_mode!r}")
        if self.activation_keep not in ACTIVATION_KEEP:
            raise ConfigurationError(
                f"activation_keep must be one of {ACTIVATION_KEEP}, got {self.activation_keep!r}")
        bad = [i for i in self.compress_set if not 0 <= i < self.n_blocks]
        if bad:
            raise ConfigurationError(f"compress_set indices {bad} outside 0..{self.n_blocks - 1}")
        if self.expansion < 1:
            raise ConfigurationError(f"expansion must be >= 1, got {self.expansion}")
        if self.out_channels < 1 or self.in_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if len(self.rgb_mean) != self.in_channels:
            raise ConfigurationError(f"rgb_mean needs {self.in_channels} entries")
        if self.pool_mode == "normal":
            if self.n_former < 5:
                raise ConfigurationError("pool_mode normal taps the first five bunches; need n_bunches >= 9")
            if self.blocks_per_bunch[4] < 2:
                raise ConfigurationError("pool_mode normal taps the second block of bunch 5")
        if self.pool_mode == "former_all" and sum(self.blocks_per_bunch[:self.n_former]) < 10:
            raise ConfigurationError("pool_mode former_all needs 10 blocks in the first half")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # ----------------------------------------------------------- text format

    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, strict=True):
        values = parse_key_values(text)
        return cls.from_dict(values, strict=strict)

    @classmethod
    def from_dict(cls, values, strict=True):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                if strict:
                    raise ConfigurationError(f"unknown config key {key!r}")
                continue
            kwargs[key] = _coerce(key, raw, known[key].default)
        if kwargs.get("compress_set") == "all":
            layout = kwargs.get("blocks_per_bunch", cls.blocks_per_bunch)
            kwargs["compress_set"] = tuple(range(sum(layout)))
        return cls(**kwargs)

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


def parse_key_values(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        values[key] = value
    return values


def _tail_factors(scale):
    if scale == 1:
        return []
    if scale == 3:
        return [3]
    factors = []
    s = scale
    while s > 1 and s % 2 == 0:
        factors.append(2)
        s //= 2
    return factors if s == 1 else None


def tail_factors(scale):
    """Sub-pixel stages for an upscaling factor: 4 -> [2, 2], 3 -> [3]."""
    factors = _tail_factors(scale)
    if factors is None:
        raise ConfigurationError(f"unsupported scale {scale}")
    return factors


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if key == "compress_set" and raw.strip().lower() == "all":
                return "all"
            items = [p.strip() for p in raw.split(",") if p.strip()]
            cast = float if key == "rgb_mean" else int
            return tuple(cast(p) for p in items)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    return raw
