"""Run configuration: a flat dataclass read from / written to ``key=value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError

PRESETS = ("fb15k", "wn18", "nell995", "planted")


@dataclass
class Config:
    # model
    k: int = 100
    learning_rate: float = 0.001
    margin_triple: float = 1.0
    margin_path: float = 1.0
    tradeoff: float = 1.0
    norm: str = "l1"
    converter: str = "ec2"
    normalize_type_sum: bool = False
    # optimization
    epochs: int = 100
    batch_size: int = 1024
    l1_reg: float = 1e-5
    grad_clip: float | None = 5.0
    relation_negatives: int = 1
    seed: int = 0
    workers: int = 1
    # paths and rules
    max_path_len: int = 2
    max_paths: int = 20
    exclude_direct: bool = True
    pqa_exclude_direct: bool = True
    min_rule_confidence: float = 0.7
    amie_confidence_column: int = 3
    # data
    data_dir: str = ""
    train_path: str = "train.txt"
    valid_path: str = "valid.txt"
    test_path: str = "test.txt"
    type_path: str = ""
    rule_path: str = ""
    column_order: str = "HRT"
    record_timing: bool = False

    def validate(self) -> "Config":
        if self.k <= 0:
            raise ConfigError("k must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.margin_triple <= 0 or self.margin_path <= 0:
            raise ConfigError("margins must be positive")
        if self.tradeoff < 0:
            raise ConfigError("tradeoff must be non-negative")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size > 0")
        if self.norm not in ("l1", "l2"):
            raise ConfigError(f"norm must be l1 or l2, got {self.norm!r}")
        if self.converter not in ("ec1", "ec2"):
            raise ConfigError(f"converter must be ec1 or ec2, got {self.converter!r}")
        if not 1 <= self.max_path_len <= 3:
            raise ConfigError("max_path_len must be 1, 2 or 3")
        if self.max_paths <= 0 or self.relation_negatives <= 0 or self.workers <= 0:
            raise ConfigError("max_paths, relation_negatives and workers must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or none")
        if self.column_order.upper() not in ("HRT", "HTR"):
            raise ConfigError(f"column_order must be HRT or HTR, got {self.column_order!r}")
        return self

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes).validate()

    def resolve(self, name: str) -> Path | None:
        """Path for a data file field, relative to ``data_dir`` when not absolute."""
        value = getattr(self, name)
        if not value:
            return None
        p = Path(value)
        if not p.is_absolute() and self.data_dir:
            p = Path(self.data_dir) / p
        return p

    # -- key=value text ----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                value = "none"
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_mapping(cls, values: dict, base: "Config | None" = None) -> "Config":
        cfg = dataclasses.replace(base) if base is not None else cls()
        known = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(known[key], raw))
        return cfg.validate()

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None, source: str = "<config>") -> "Config":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls.from_mapping(values, base)

    @classmethod
    def load(cls, path, base: "Config | None" = None) -> "Config":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base, source=str(path))

    @classmethod
    def preset(cls, name: str) -> "Config":
        name = name.lower().replace("-", "")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
        text = resources.files("pathkg.configs").joinpath(f"{name}.cfg").read_text(encoding="utf-8")
        return cls.from_text(text, source=f"preset:{name}")


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("float | None"):
            return None if raw.lower() in ("none", "") else float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {f.name} ({kind})") from None
    return raw
