"""Flat ``key=value`` configuration files.

Keys are the field names of :class:`~freecg.model.ModelConfig` and
:class:`~freecg.train.TrainConfig`.  Blank lines and ``#`` comments are
ignored; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .model import ModelConfig
from .train import TrainConfig

__all__ = ["ConfigFileError", "parse_config", "load_config", "apply_overrides", "format_config"]


class ConfigFileError(ValueError):
    pass


def _coerce(field: dataclasses.Field, raw: str, default):
    kind = type(default)
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigFileError(f"{field.name}: expected a boolean, got {raw!r}")
    if kind is tuple:
        try:
            return tuple(float(x) for x in raw.split(","))
        except ValueError:
            raise ConfigFileError(f"{field.name}: expected comma-separated numbers, got {raw!r}") from None
    try:
        return kind(raw.strip())
    except ValueError:
        raise ConfigFileError(f"{field.name}: expected {kind.__name__}, got {raw!r}") from None


def _owners():
    owners = {}
    for cls in (ModelConfig, TrainConfig):
        inst = cls()
        for f in dataclasses.fields(cls):
            owners[f.name] = (cls, f, getattr(inst, f.name))
    return owners


def apply_overrides(model_cfg: ModelConfig, train_cfg: TrainConfig, values: dict[str, str]):
    """Return copies of both configs with string ``values`` applied."""
    owners = _owners()
    m_kw, t_kw = {}, {}
    for key, raw in values.items():
        if key not in owners:
            raise ConfigFileError(f"unknown config key {key!r}")
        cls, f, default = owners[key]
        value = _coerce(f, raw, default)
        (m_kw if cls is ModelConfig else t_kw)[key] = value
    return dataclasses.replace(model_cfg, **m_kw), dataclasses.replace(train_cfg, **t_kw)


def parse_config(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigFileError(f"line {lineno}: expected key=value")
        values[key.strip()] = value.strip()
    return values


def load_config(path=None, overrides: dict[str, str] | None = None):
    """Defaults, then file values, then ``overrides``."""
    values = parse_config(Path(path).read_text()) if path else {}
    values.update(overrides or {})
    return apply_overrides(ModelConfig(), TrainConfig(), values)


def format_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    lines = []
    for cfg in (model_cfg, train_cfg):
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"
