"""Training configuration and its strict ``key = value`` file format.

    [model]
    hidden = 64
    [train]
    lr = 0.0001

Unknown sections or keys, duplicates and unparsable values are errors that
name the key and line.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigParseError
from .netcore.model import EncoderConfig


@dataclass(frozen=True)
class TrainConfig:
    # full-scale defaults
    lr: float = 1e-4
    milestones: tuple[float, ...] = (0.6, 0.85)
    gamma: float = 0.1
    batch_size: int = 64
    epochs: int = 40
    clip_len: int = 16
    # loss weights and alignment temperature
    alpha: float = 0.1
    beta: float = 0.1
    tau: float = 0.07
    grad_clip: float = 1.0
    seed: int = 0
    model: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or self.clip_len < 2:
            raise ValueError("invalid training hyperparameters")
        if self.alpha < 0 or self.beta < 0 or self.tau <= 0:
            raise ValueError("loss weights must be >= 0 and tau > 0")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Laptop-scale profile: batch 16 and 10 epochs, with a step size and
        loss weights that make 600-odd steps enough (see README)."""
        base = dict(batch_size=16, epochs=10, lr=1e-2, alpha=1.0, beta=0.01)
        base.update(overrides)
        return cls(**base)

    def with_model(self, **kw) -> "TrainConfig":
        return replace(self, model=replace(self.model, **kw))

    def digest(self) -> str:
        return hashlib.sha256(dumps_config(self).encode()).hexdigest()[:16]


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig) if f.name != "model"}
_MODEL_FIELDS = {f.name: f for f in fields(EncoderConfig)}
_SECTIONS = {"train": _TRAIN_FIELDS, "model": _MODEL_FIELDS}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw: str, default, key: str, line: int):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigParseError(f"cannot parse value {raw!r}", key, line) from None


def dumps_config(cfg: TrainConfig) -> str:
    lines = ["[train]"]
    for name in _TRAIN_FIELDS:
        lines.append(f"{name} = {_format(getattr(cfg, name))}")
    lines.append("")
    lines.append("[model]")
    for name in _MODEL_FIELDS:
        lines.append(f"{name} = {_format(getattr(cfg.model, name))}")
    return "\n".join(lines) + "\n"


def loads_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    values = {"train": {}, "model": {}}
    defaults = {"train": asdict(base), "model": asdict(base.model)}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigParseError(f"unknown section [{section}]", None, lineno)
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {raw_line.strip()!r}", None, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            raise ConfigParseError("key outside of a section", key, lineno)
        if key not in _SECTIONS[section]:
            raise ConfigParseError(f"unknown key in [{section}]", key, lineno)
        if key in values[section]:
            raise ConfigParseError("duplicate key", key, lineno)
        default = defaults[section][key]
        if isinstance(default, list):
            default = tuple(default)
        values[section][key] = _convert(value, default, key, lineno)
    try:
        model = replace(base.model, **values["model"])
        return replace(base, model=model, **values["train"])
    except ValueError as exc:
        raise ConfigParseError(str(exc)) from None


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read(), base)


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))
