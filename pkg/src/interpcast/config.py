"""PipelineConfig loading with precedence flags > TOML file > defaults."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .domain import PipelineConfig, from_dict, to_dict, validate
from .errors import PreconditionError

FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}


def read_toml(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    # either flat keys or a [pipeline] table
    data = data.get("pipeline", data)
    unknown = sorted(set(data) - FIELDS)
    if unknown:
        raise PreconditionError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """Defaults, then the TOML file, then every override that is not None."""
    merged = to_dict(PipelineConfig())
    if path is not None:
        merged.update(read_toml(path))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    cfg = from_dict(PipelineConfig, merged)
    problems = validate(cfg)
    if problems:
        raise PreconditionError("invalid config: " + "; ".join(problems))
    return cfg
