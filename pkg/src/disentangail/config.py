"""Run configuration: YAML files, environment overrides and snapshots.

Precedence, lowest first: dataclass defaults, config file, environment
variables ``DISENTANGAIL_<KEY>`` (upper-case key), ``key=value`` overrides.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Mapping

import yaml

from .errors import ConfigurationError
from .orchestrator import RunConfig

ENV_PREFIX = "DISENTANGAIL_"
SNAPSHOT_NAME = "config.yaml"

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = type(getattr(RunConfig(), key))
    try:
        if kind is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"bad value for config key {key!r}: {value!r}") from err


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, yaml.safe_load(value) if value.strip() else value)
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as err:
        raise ConfigurationError(f"{path}: malformed config: {err}") from err
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return {k: _coerce(k, v) for k, v in data.items()}


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key in _FIELDS:
                out[key] = _coerce(key, yaml.safe_load(value) if value.strip() else value)
    return out


def resolve_config(path: str | Path | None = None, overrides=(), environ: Mapping[str, str] | None = None, **explicit) -> RunConfig:
    values: dict = {}
    if path:
        values.update(load_config_file(path))
    values.update(env_overrides(environ))
    values.update(parse_overrides(overrides))
    values.update({k: _coerce(k, v) for k, v in explicit.items() if v is not None})
    return RunConfig(**values)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def parse_config(text: str) -> RunConfig:
    data = yaml.safe_load(text) or {}
    return RunConfig(**{k: _coerce(k, v) for k, v in data.items()})


def snapshot_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Write the fully resolved config next to the run outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / SNAPSHOT_NAME
    path.write_text(dump_config(cfg))
    return path
