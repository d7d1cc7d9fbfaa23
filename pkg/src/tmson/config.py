"""Run configuration: defaults, config-file loading, and flag overrides.

Precedence is flags > config file > built-in defaults; the fully resolved
configuration is echoed into checkpoints and reports.
"""

from __future__ import annotations

import json

from .data import SynthConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


def default_config() -> dict:
    return {
        "model": {},                      # overrides onto ModelConfig
        "train": TrainConfig().to_dict(),
        "synth": SynthConfig().to_dict(),
        "scheme": "mosi-acc2-nonneg",
    }


def deep_merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config root must be an object")
    return cfg


def resolve_config(config_path=None, flag_overrides: dict | None = None) -> dict:
    resolved = default_config()
    if config_path is not None:
        resolved = deep_merge(resolved, load_config_file(config_path))
    if flag_overrides:
        resolved = deep_merge(resolved, flag_overrides)
    return resolved
