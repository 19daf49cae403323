"""Run configuration: defaults, `key = value` config files, flag overrides.

Unknown keys in a config file are an error (typos must not silently become
defaults); CLI flags take precedence over file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import ConfigError
from .fusion import FUSION_MODES


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    n_negatives: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    temperature: float = 0.05
    seed: int = 0
    fusion_mode: str = "add"
    attn_kind: str = "pointwise"
    eval_every: int = 1
    d: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    max_len: int = 200
    dropout: float = 0.1
    rel_clip: int = 64
    absolute_positions: bool = True
    deterministic: bool = False
    per_position_negatives: bool = False
    vary_sampling_across_epochs: bool = False
    freeze: str = ""  # comma-separated parameter names excluded from the optimizer

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.n_negatives < 1:
            raise ConfigError(f"n_negatives must be >= 1, got {self.n_negatives}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError(f"dropout must be in [0, 1], got {self.dropout}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")

    def np_dtype(self):
        return np.float64 if self.deterministic else np.float32

    def encoder_config(self):
        from .encoder import EncoderConfig

        return EncoderConfig(
            d=self.d,
            n_blocks=self.n_blocks,
            n_heads=self.n_heads,
            max_len=self.max_len,
            rel_clip=self.rel_clip,
            attn_kind=self.attn_kind,
            absolute_positions=self.absolute_positions,
        )

    def frozen_names(self) -> set:
        return {name.strip() for name in self.freeze.split(",") if name.strip()}

    def to_dict(self) -> Dict[str, object]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> "TrainConfig":
        cfg = cls()
        for key, raw in values.items():
            _set_field(cfg, key, raw)
        cfg.validate()
        return cfg


_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _set_field(cfg: TrainConfig, key: str, raw: object) -> None:
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(cfg, key)
    if isinstance(current, bool):
        if isinstance(raw, bool):
            value = raw
        elif str(raw).lower() in ("true", "1", "yes"):
            value = True
        elif str(raw).lower() in ("false", "0", "no"):
            value = False
        else:
            raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")
    elif isinstance(current, int):
        try:
            value = int(str(raw))
        except ValueError:
            raise ConfigError(f"config key {key!r}: expected an integer, got {raw!r}") from None
    elif isinstance(current, float):
        try:
            value = float(str(raw))
        except ValueError:
            raise ConfigError(f"config key {key!r}: expected a number, got {raw!r}") from None
    else:
        value = str(raw)
    setattr(cfg, key, value)


def load_config_file(path: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse UTF-8 `key = value` lines; blank lines and #-comments allowed."""
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected `key = value`")
            key, _, value = line.partition("=")
            try:
                _set_field(cfg, key.strip(), value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    cfg.validate()
    return cfg
