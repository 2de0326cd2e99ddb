"""Run configuration stored as an INI-style file of sections and scalar keys.

Sections: ``[model.encoder]``, ``[model.decoder]``, ``[schedule]``, ``[train]``,
``[data]``, ``[normalization]``. Tuples are comma-separated; ``none`` clears
an optional value. Every field has a default, so an empty file is valid.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .core import NormalizationStats
from .datasets import LAYOUTS
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError, Vos3dError
from .network import ModelConfig
from .pipeline import ClipScheduleConfig
from .train import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    root: str = ""
    layout: str = "davis"
    split: str = ""

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ConfigError(f"data.layout must be one of {LAYOUTS}, got {self.layout!r}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ClipScheduleConfig = field(default_factory=ClipScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    normalization: NormalizationStats = field(default_factory=NormalizationStats)

    def __post_init__(self):
        if self.schedule.T_c != self.train.T_c:
            raise ConfigError(
                f"schedule.T_c ({self.schedule.T_c}) and train.T_c ({self.train.T_c}) must be identical"
            )


SECTIONS = {
    "model.encoder": EncoderConfig,
    "model.decoder": DecoderConfig,
    "schedule": ClipScheduleConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "normalization": NormalizationStats,
}


def _convert(section: str, key: str, raw: str, hint):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    text = raw.strip()
    try:
        if origin is typing.Union and type(None) in args:
            if text.lower() in ("", "none"):
                return None
            inner = next(a for a in args if a is not type(None))
            return _convert(section, key, raw, inner)
        if origin is tuple:
            item = args[0]
            return tuple(item(v.strip()) for v in text.split(",") if v.strip())
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if hint in (int, float, str):
            return hint(text)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from exc
    raise ConfigError(f"{section}.{key}: unsupported field type {hint}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _build(section: str, cls, values: dict):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = _convert(section, key, raw, hints[key])
    try:
        return cls(**kwargs)
    except Vos3dError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str  # keep key case (T_c, T_o)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {source}: {exc}".replace("\n", " ")) from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    raw = {s: dict(parser[s]) for s in parser.sections()}

    # T_c lives in two sections; a value given in only one is shared
    sched, train = raw.setdefault("schedule", {}), raw.setdefault("train", {})
    if "T_c" in sched and "T_c" not in train:
        train["T_c"] = sched["T_c"]
    elif "T_c" in train and "T_c" not in sched:
        sched["T_c"] = train["T_c"]

    built = {s: _build(s, cls, raw.get(s, {})) for s, cls in SECTIONS.items()}
    model = ModelConfig(built["model.encoder"], built["model.decoder"])
    return RunConfig(model, built["schedule"], built["train"], built["data"], built["normalization"])


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(), str(path))
    root = cfg.data.root
    if root and not Path(root).is_absolute():
        # relative data roots are resolved against the config file's directory
        data = dataclasses.replace(cfg.data, root=str((path.parent / root).resolve()))
        cfg = dataclasses.replace(cfg, data=data)
    return cfg


def _section_items(cfg: RunConfig):
    parts = {
        "model.encoder": cfg.model.encoder,
        "model.decoder": cfg.model.decoder,
        "schedule": cfg.schedule,
        "train": cfg.train,
        "data": cfg.data,
        "normalization": cfg.normalization,
    }
    for name, obj in parts.items():
        yield name, {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for name, items in _section_items(cfg):
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in items.items())
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_config(cfg))
    return path
