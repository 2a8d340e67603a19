"""Experiment configuration: typed defaults plus flat key=value overrides.

Config files are INI-like text. Keys before any section apply to every
experiment; a ``[name]`` section (e.g. ``[bias]``) overrides them for that
experiment only. Lists are comma separated. Example::

    seed = 20240611
    M = 2000
    [bias]
    N = 4, 8, 16, 32
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..errors import ConfigError
from ..model import ModelParams

DEFAULT_SEED = 20240611

COMMON_DEFAULTS: dict[str, Any] = dict(
    A=1.0, B=1.0, C=1.0, D=1.0, x0_mean=0.0, p0=1.0,
    N=(10,), horizon=20, M=1000, seed=DEFAULT_SEED, alpha=0.01,
    burn_in=10, n_boot=2000, block_size=1000,
)


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_like(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            proto = default[0] if default else 0.0
            parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
            return tuple(_parse_like(key, p, proto) for p in parts)
        if isinstance(default, int):
            f = float(text)
            if f != int(f):
                raise ValueError(text)
            return int(f)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {text!r}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    values: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        if v["M"] < 100:
            raise ConfigError("M (replicate count) must be >= 100")
        if any(n < 1 for n in v["N"]):
            raise ConfigError("all ensemble sizes N must be >= 1")
        if not 0 < v["alpha"] < 0.5:
            raise ConfigError("alpha must lie in (0, 0.5)")
        if v["block_size"] < 1:
            raise ConfigError("block_size must be >= 1")
        try:
            self.model
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def __getattr__(self, key):
        values = object.__getattribute__(self, "values")
        if key in values:
            return values[key]
        raise AttributeError(key)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def model(self) -> ModelParams:
        v = self.values
        return ModelParams(v["A"], v["B"], v["C"], v["D"], v["x0_mean"], v["p0"])

    def resolved(self) -> dict[str, str]:
        return {k: _format(v) for k, v in sorted(self.values.items())}

    def replace(self, **changes) -> "ExperimentConfig":
        vals = dict(self.values)
        for k in changes:
            if k not in vals:
                raise ConfigError(f"unknown config key {k!r} for experiment {self.name}")
        vals.update(changes)
        return ExperimentConfig(self.name, vals)


def read_config_file(path) -> tuple[dict[str, str], dict[str, dict[str, str]]]:
    """Top-level and per-section raw strings of a config file.

    Result files (.csv / .json) written by the harness are accepted too;
    their embedded resolved config is returned as the top level.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix in (".csv", ".json"):
        from .result import embedded_config
        return embedded_config(path), {}
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    top = dict(parser["__top__"])
    sections = {s: dict(parser[s]) for s in parser.sections() if s != "__top__"}
    return top, sections


def build_config(name: str, defaults: Mapping[str, Any], top: Mapping[str, str] | None = None,
                 section: Mapping[str, str] | None = None, overrides: Mapping[str, Any] | None = None,
                 strict_top: bool = False) -> ExperimentConfig:
    """Merge defaults < top-level < section < overrides into a typed config.

    Unknown keys in the experiment's own section (or in ``overrides``) are
    errors; unknown top-level keys are ignored unless ``strict_top`` since
    they may belong to another experiment.
    """
    values = dict(COMMON_DEFAULTS)
    values.update(defaults)
    for source, strict in ((top or {}, strict_top), (section or {}, True)):
        for k, text in source.items():
            if k not in values:
                if strict:
                    raise ConfigError(f"unknown config key {k!r} for experiment {name}")
                continue
            values[k] = _parse_like(k, str(text), values[k])
    for k, v in (overrides or {}).items():
        if k not in values:
            raise ConfigError(f"unknown config key {k!r} for experiment {name}")
        values[k] = _parse_like(k, _format(v), values[k]) if isinstance(v, (str, list)) else v
    return ExperimentConfig(name, values)
