"""Flat key=value run-config files.

One config file describes one run.  The format is a plain text file of
``key = value`` lines; blank lines and ``#`` comments are ignored.  Nested
settings use dotted keys::

    source.kind = gaussian
    target.kind = eight_gaussians
    coupling.kind = exact
    coupling.epsilon = 0.05
    time_sampler.kind = uniform
    batch_size = 256
    iterations = 10000

Unknown keys, duplicate keys, and malformed values are errors that report
the offending line number.  ``render_config`` writes a config back out in a
canonical order, so manifests are trivially diffable.
"""

from __future__ import annotations

import dataclasses

from .coupling import CouplingSpec
from .data import DatasetSpec
from .training import RunConfig, TimeSamplerSpec


class ConfigError(ValueError):
    """Parse or validation failure; message carries file/line context."""


_DATASET_FIELDS = {f.name: f.type for f in dataclasses.fields(DatasetSpec)}
_COUPLING_FIELDS = {f.name: f.type for f in dataclasses.fields(CouplingSpec)}
_SAMPLER_FIELDS = {f.name: f.type for f in dataclasses.fields(TimeSamplerSpec)}
_TOP_FIELDS = {
    f.name: f.type
    for f in dataclasses.fields(RunConfig)
    if f.name not in ("source", "target", "coupling", "time_sampler")
}

_GROUPS = {
    "source": _DATASET_FIELDS,
    "target": _DATASET_FIELDS,
    "coupling": _COUPLING_FIELDS,
    "time_sampler": _SAMPLER_FIELDS,
}


def _convert(raw: str, type_name: str, key: str, where: str):
    type_name = str(type_name)
    try:
        if "int" in type_name:
            return int(raw)
        if "float" in type_name:
            return float(raw)
        if "bool" in type_name:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: bad value {raw!r} for key {key!r}") from None


def parse_config_text(text: str, name: str = "<config>") -> RunConfig:
    """Parse config text into a RunConfig; errors name the offending line."""
    groups: dict[str, dict] = {g: {} for g in _GROUPS}
    top: dict = {}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"{name}:{lineno}"
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not key or not raw:
            raise ConfigError(f"{where}: empty key or value in {stripped!r}")
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add(key)
        if "." in key:
            group, _, sub = key.partition(".")
            fields = _GROUPS.get(group)
            if fields is None or sub not in fields:
                raise ConfigError(f"{where}: unknown key {key!r}")
            groups[group][sub] = _convert(raw, fields[sub], key, where)
        else:
            if key not in _TOP_FIELDS:
                raise ConfigError(f"{where}: unknown key {key!r}")
            top[key] = _convert(raw, _TOP_FIELDS[key], key, where)
    for side in ("source", "target"):
        if "kind" not in groups[side]:
            raise ConfigError(f"{name}: missing required key '{side}.kind'")
    try:
        return RunConfig(
            source=DatasetSpec(**groups["source"]),
            target=DatasetSpec(**groups["target"]),
            coupling=CouplingSpec(**groups["coupling"]),
            time_sampler=TimeSamplerSpec(**groups["time_sampler"]),
            **top,
        )
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config_text(text, name=str(path))


def render_config(config: RunConfig) -> str:
    """Serialize a RunConfig to canonical key=value text (inverse of parse)."""
    lines = []
    for group in ("source", "target", "coupling", "time_sampler"):
        obj = getattr(config, group)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is None:
                continue
            lines.append(f"{group}.{f.name} = {value}")
    for key in _TOP_FIELDS:
        lines.append(f"{key} = {getattr(config, key)}")
    return "\n".join(lines) + "\n"
