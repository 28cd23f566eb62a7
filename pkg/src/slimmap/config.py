"""Run configuration: nested frozen dataclasses loaded from YAML or JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .localize import TrackingGates
from .pipeline import PipelineConfig
from .simworld import WorldSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    world: WorldSpec = WorldSpec()
    pipeline: PipelineConfig = PipelineConfig()
    tracking: TrackingGates = TrackingGates()
    replay_spacing: float = 1.0  # metres between frames of a localization replay
    held_out_session: int = 10

    def with_overrides(self, seed: int | None = None, marginalize: bool | None = None,
                       threads: int | None = None) -> "RunConfig":
        out = self
        if seed is not None:
            out = dataclasses.replace(out, world=dataclasses.replace(out.world, seed=seed))
        if marginalize is not None:
            out = dataclasses.replace(out, pipeline=dataclasses.replace(out.pipeline, marginalize=marginalize))
        if threads is not None:
            out = dataclasses.replace(out, pipeline=dataclasses.replace(out.pipeline, threads=threads))
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key {'.'.join(filter(None, [path, unknown[0]]))!r}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default if f.default is not dataclasses.MISSING else None
        key = ".".join(filter(None, [path, name]))
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                raise ConfigError(f"{key}: expected a list of {len(default)} numbers")
            kwargs[name] = tuple(float(v) for v in value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{key}: expected true or false")
            kwargs[name] = value
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key}: expected a number")
            if isinstance(default, int) and not float(value).is_integer():
                raise ConfigError(f"{key}: expected an integer")
            kwargs[name] = type(default)(value)
        else:
            kwargs[name] = value
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e
    if hasattr(obj, "validate"):
        try:
            obj.validate()
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from e
    return obj


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path: str | Path | None) -> RunConfig:
    """Read a ``.yaml``/``.yml``/``.json`` file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from e
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    return config_from_dict(data)
