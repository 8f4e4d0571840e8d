"""Model/training hyperparameters and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .data import TASK_KINDS
from .errors import ConfigError


@dataclass
class ModelConfig:
    task: str = "classification"
    max_len: int = 10
    d: int = 64
    layers: int = 2
    heads: int = 4
    graph_layers: int = 2
    graph_encoder: str = "gcn"
    experts: int = 4
    top_k: int = 2
    omega_imp: float = 0.1
    load_weight: float = 1.0
    slope: float = 0.01
    attn_scale: str = "dk"
    d_k: float = 0.0           # 0 means "use d"
    use_cra: bool = True
    use_moe: bool = True
    init_std: float = 0.02
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def scale_dk(self) -> float:
        return float(self.d_k) if self.d_k > 0 else float(self.d)

    def validate(self) -> None:
        if self.task not in TASK_KINDS:
            raise ConfigError(f"task must be one of {TASK_KINDS}, got {self.task!r}")
        if self.d <= 0 or self.d % 2:
            raise ConfigError(f"d must be a positive even integer, got {self.d}")
        if self.heads <= 0 or self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.max_len < 1 or self.layers < 0 or self.graph_layers < 1:
            raise ConfigError("max_len and graph_layers must be >= 1, layers >= 0")
        if self.graph_encoder not in ("gcn", "sage"):
            raise ConfigError(f"graph_encoder must be 'gcn' or 'sage', got {self.graph_encoder!r}")
        if not 1 <= self.top_k <= self.experts:
            raise ConfigError(f"top_k={self.top_k} must lie in [1, experts={self.experts}]")
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"slope must lie in (0, 1), got {self.slope}")
        if self.attn_scale not in ("dk", "sqrt"):
            raise ConfigError(f"attn_scale must be 'dk' or 'sqrt', got {self.attn_scale!r}")
        if self.d_k < 0:
            raise ConfigError(f"d_k must be positive (or 0 for d), got {self.d_k}")
        if self.omega_imp < 0 or self.load_weight < 0:
            raise ConfigError("omega_imp and load_weight must be non-negative")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.init_std <= 0:
            raise ConfigError(f"init_std must be positive, got {self.init_std}")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_pairs(self) -> list[tuple[str, str]]:
        return [(f.name, _format(getattr(self, f.name))) for f in fields(self)]

    @classmethod
    def from_pairs(cls, pairs, source: str = "config") -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in pairs:
            if key not in types:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key], source)
        return cls(**kwargs)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, kind: str, source: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{source}: bad value {raw!r} for config key {key!r} ({kind})") from None


def parse_config_text(text: str, source: str = "config") -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path, **overrides) -> ModelConfig:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        pairs = parse_config_text(fh.read(), source=path)
    cfg = ModelConfig.from_pairs(pairs, source=path)
    return cfg.replace(**overrides) if overrides else cfg


def dump_config(cfg: ModelConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_pairs())
