"""Flat ``key = value`` configuration files.

Every field of :class:`ExperimentConfig` is addressable by name, the problem
reference under ``problem.`` and the engine settings under ``ssqp.``::

    # d=5 constrained linear regression
    problem.kind = linear
    problem.d = 5
    iterations = 100000
    ssqp.b1 = 0.751
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Mapping, Optional

from .engine import HessianMode, SsqpConfig, StepsizeMode, _enum
from .errors import ConfigError
from .harness import ExperimentConfig, ProblemRef

_SECTIONS = {"problem": ProblemRef, "ssqp": SsqpConfig}
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def parse_config_text(text: str) -> dict:
    """Dotted key to raw string value; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key)
        out[key] = value
    return out


def _convert(key: str, kind, value):
    if not isinstance(value, str):
        return value
    try:
        if kind is bool:
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if kind is int:
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError(f"not an integer: {value!r}")
            return int(as_float)
        if kind is float:
            return float(value)
        if kind in (HessianMode, StepsizeMode):
            return _enum(kind, value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}", key) from None


def _build(cls, prefix: str, values: dict):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for name, value in values.items():
        key = prefix + name
        if name not in names:
            raise ConfigError(f"unknown key {key!r}", key)
        kwargs[name] = _convert(key, hints[name], value)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # attribute the failure to the first key that fails on its own
        for name, value in kwargs.items():
            try:
                cls(**{name: value})
            except ValueError:
                raise ConfigError(f"invalid {prefix + name!r}: {exc}", prefix + name) from None
        raise ConfigError(str(exc)) from None


def experiment_config(values: Mapping[str, object]) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from dotted keys."""
    top, sections = {}, {name: {} for name in _SECTIONS}
    for key, value in values.items():
        head, dot, rest = key.partition(".")
        if dot:
            if head not in _SECTIONS or not rest or "." in rest:
                raise ConfigError(f"unknown key {key!r}", key)
            sections[head][rest] = value
        elif key in _SECTIONS:
            raise ConfigError(f"unknown key {key!r}", key)
        else:
            top[key] = value
    top_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in top:
        if key not in top_fields:
            raise ConfigError(f"unknown key {key!r}", key)
    objs = {name: _build(cls, name + ".", sections[name]) for name, cls in _SECTIONS.items()}
    return _build(ExperimentConfig, "", {**top, **objs})


def load_config(path, overrides: Optional[Mapping[str, object]] = None) -> ExperimentConfig:
    """Read a config file, apply ``overrides`` (dotted keys) and validate."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not UTF-8: {exc}") from None
    values = parse_config_text(text)
    values.update(overrides or {})
    return experiment_config(values)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render a config in the file format; ``load_config`` round-trips it."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sub in dataclasses.fields(value):
                lines.append(f"{f.name}.{sub.name} = {_render(getattr(value, sub.name))}")
        else:
            lines.append(f"{f.name} = {_render(value)}")
    return "\n".join(lines) + "\n"


def _render(value) -> str:
    if isinstance(value, (HessianMode, StepsizeMode)):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)
