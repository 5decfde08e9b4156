"""Plain ``key = value`` run configuration.

One assignment per line; ``#`` starts a comment; blank lines are ignored.
Unknown keys are rejected. ``none`` clears an optional value. The effective
configuration (every key, defaults resolved) is rendered by
:meth:`RunConfig.dumps` and parses back to an equal object.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .dataset import ConfigurationError
from .trainer import TrainConfig

# key -> (type, optional)
_TRAIN_KEYS = {
    "model": (str, False),
    "norm": (str, False),
    "de_fraction": (float, False),
    "dim": (int, False),
    "gen_dim": (int, True),
    "lr_generator": (float, False),
    "lr_discriminator": (float, False),
    "batch_size": (int, False),
    "epochs": (int, False),
    "n_dis": (int, False),
    "temperature": (float, False),
    "temperature_end": (float, True),
    "clip": (float, True),
    "margin": (float, False),
    "mode": (str, False),
    "n_candidates": (int, False),
    "backbone": (str, False),
    "filter_false_negatives": (bool, False),
    "valid_interval": (int, False),
    "seed": (int, False),
    "workers": (int, False),
}
_RUN_KEYS = {
    "bucketing": (str, False),
    "min_threshold": (int, True),
    "target_buckets": (int, True),
    "raw_dir": (str, True),
    "prepared_dir": (str, True),
    "output_dir": (str, True),
}
SCHEMA = {**_TRAIN_KEYS, **_RUN_KEYS}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _parse_value(key: str, text: str):
    typ, optional = SCHEMA[key]
    if text.lower() == "none":
        if not optional:
            raise ConfigurationError(f"{key} cannot be none")
        return None
    try:
        if typ is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot read {text!r} as {typ.__name__}") from None
    return text


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TRAIN_DEFAULTS = TrainConfig()


@dataclass(frozen=True)
class RunConfig:
    model: str = _TRAIN_DEFAULTS.model
    norm: str = _TRAIN_DEFAULTS.norm
    de_fraction: float = _TRAIN_DEFAULTS.de_fraction
    dim: int = _TRAIN_DEFAULTS.dim
    gen_dim: int | None = _TRAIN_DEFAULTS.gen_dim
    lr_generator: float = _TRAIN_DEFAULTS.lr_generator
    lr_discriminator: float = _TRAIN_DEFAULTS.lr_discriminator
    batch_size: int = _TRAIN_DEFAULTS.batch_size
    epochs: int = _TRAIN_DEFAULTS.epochs
    n_dis: int = _TRAIN_DEFAULTS.n_dis
    temperature: float = _TRAIN_DEFAULTS.temperature
    temperature_end: float | None = _TRAIN_DEFAULTS.temperature_end
    clip: float | None = _TRAIN_DEFAULTS.clip
    margin: float = _TRAIN_DEFAULTS.margin
    mode: str = _TRAIN_DEFAULTS.mode
    n_candidates: int = _TRAIN_DEFAULTS.n_candidates
    backbone: str = _TRAIN_DEFAULTS.backbone
    filter_false_negatives: bool = _TRAIN_DEFAULTS.filter_false_negatives
    valid_interval: int = _TRAIN_DEFAULTS.valid_interval
    seed: int = _TRAIN_DEFAULTS.seed
    workers: int = _TRAIN_DEFAULTS.workers
    bucketing: str = "auto"
    min_threshold: int | None = None
    target_buckets: int | None = None
    raw_dir: str | None = None
    prepared_dir: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        if self.bucketing not in ("auto", "per-day", "thresholded"):
            raise ConfigurationError(f"bucketing must be auto, per-day or thresholded, got {self.bucketing!r}")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in _TRAIN_KEYS})

    def updated(self, **changes) -> "RunConfig":
        unknown = set(changes) - set(SCHEMA)
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return replace(self, **changes)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{source}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = _parse_value(key, value)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    @classmethod
    def from_overrides(cls, pairs, base: "RunConfig | None" = None) -> "RunConfig":
        """Apply ``key=value`` strings (e.g. from ``--set``) on top of ``base``."""
        cfg = base or cls()
        extra = {}
        for line in pairs:
            if "=" not in line:
                raise ConfigurationError(f"override {line!r}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            extra[key] = _parse_value(key, value)
        return replace(cfg, **extra)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format_value(getattr(self, f.name))}\n" for f in fields(self))
