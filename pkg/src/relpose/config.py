"""Model/training configuration and its line-oriented file format.

Config files are UTF-8 `key = value` lines with `#` comments.  Unknown keys
are errors.  Serialization is deterministic so configs embedded in
checkpoints round-trip byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

ABLATIONS = ("no_jre", "no_jrpsp", "no_init")


class ConfigError(ValueError):
    """A config file or value violates the schema."""


@dataclass
class ModelConfig:
    """Every hyperparameter the network and training loop depend on."""

    K: int = 13               # joints
    T: int = 5                # frames per sample
    H: int = 64               # input height
    W: int = 64               # input width
    stride: int = 4           # input pixels per heatmap cell
    sigma: float = 2.0        # ground-truth Gaussian width, heatmap cells
    C_f: int = 32             # feature channels out of the trunk
    C: int = 32               # aggregated pose-semantics channels
    lr: float = 0.0005
    lr_decay_epochs: list[int] = field(default_factory=lambda: [8, 15])
    epochs: int = 30          # sequence-training epochs
    batch_size: int = 8
    seed: int = 7
    pretrain_epochs: int = 12  # single-frame initializer stage
    pretrain_batch_size: int = 32
    freeze_init: bool = False  # freeze the initializer head during stage 2
    no_jre: bool = False
    no_jrpsp: bool = False
    no_init: bool = False
    n_samples: int = 64       # clips written by dataset generation
    data_seed: int = 0        # generation seed (independent of training seed)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.K <= 0:
            raise ConfigError(f"K must be positive, got {self.K}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.H % self.stride or self.W % self.stride:
            raise ConfigError(f"extents {self.H}x{self.W} not divisible by stride {self.stride}")
        if (self.H // self.stride) % 8 or (self.W // self.stride) % 8:
            raise ConfigError(
                f"heatmap extents {self.H // self.stride}x{self.W // self.stride} "
                "must be divisible by 8 (three pooling halvings)")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.batch_size < 1 or self.pretrain_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")

    @property
    def map_height(self) -> int:
        return self.H // self.stride

    @property
    def map_width(self) -> int:
        return self.W // self.stride

    def ablation_tag(self) -> str:
        on = [name for name in ABLATIONS if getattr(self, name)]
        return "+".join(on) if on else "full"


_FIELD_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind.startswith("list[int]"):
            return [int(tok) for tok in raw.split(",") if tok.strip()] if raw else []
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from exc
    raise ConfigError(f"unhandled field type for '{key}'")  # pragma: no cover


def parse_config(text: str) -> ModelConfig:
    """Parse `key = value` lines into a ModelConfig; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        values[key] = _parse_value(key, raw)
    try:
        return ModelConfig(**values)
    except ConfigError:
        raise
    except TypeError as exc:  # pragma: no cover
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def serialize_config(config: ModelConfig) -> str:
    """Deterministic `key = value` text in field-declaration order."""
    lines = []
    for f in fields(ModelConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, list):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def save_config(path, config: ModelConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_config(config))
