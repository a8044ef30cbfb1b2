"""
Run configuration file

Flat UTF-8 `key = value` lines; `#` starts a comment line. Keys are the
HyperParams field names plus the RunConfig keys; generator files for
`gen-synth` use the SyntheticConfig keys plus `out_dir` and `workers`.
Values stay strings here and are coerced by the pydantic models.
"""

import os
from typing import AbstractSet, Any, Dict, Mapping, Optional, Tuple

from pydantic import ValidationError

from ..core.errors import ConfigError
from ..core.models import HyperParams, RunConfig, SyntheticConfig

HYPERPARAM_KEYS = frozenset(HyperParams.model_fields)
RUN_KEYS = frozenset(RunConfig.model_fields)
SYNTHETIC_KEYS = frozenset(SyntheticConfig.model_fields) | {"out_dir", "workers"}


def parse_config_text(
    text: str, source: str = "<config>", allowed: Optional[AbstractSet[str]] = None
) -> Dict[str, str]:
    keys = allowed if allowed is not None else HYPERPARAM_KEYS | RUN_KEYS
    values: Dict[str, str] = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{line_number}: expected 'key = value', got '{line}'")
        if key not in keys:
            raise ConfigError(f"{source}:{line_number}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{line_number}: duplicate config key '{key}'")
        values[key] = value
    return values


def load_config_file(path: str, allowed: Optional[AbstractSet[str]] = None) -> Dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read(), source=path, allowed=allowed)


def _validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def build_settings(
    file_values: Optional[Mapping[str, Any]] = None, overrides: Optional[Mapping[str, Any]] = None
) -> Tuple[HyperParams, RunConfig]:
    """HyperParams and RunConfig from file values, with non-None overrides taking precedence."""
    merged: Dict[str, Any] = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in HYPERPARAM_KEYS and key not in RUN_KEYS:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = None if value == "" else value

    hp_values = {k: v for k, v in merged.items() if k in HYPERPARAM_KEYS}
    run_values = {k: v for k, v in merged.items() if k in RUN_KEYS}
    try:
        return HyperParams(**hp_values), RunConfig(**run_values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_validation_message(e)}") from e
