"""Loading experiment configurations from TOML or JSON files."""

from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .simharness import ExperimentConfig, config_from_mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def bundled_configs() -> list[str]:
    """Names of the configurations shipped with the package."""
    root = resources.files("gbcdc") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _parse(text: str, suffix: str, label: str) -> dict:
    try:
        if suffix == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as err:
        raise ConfigError(f"{label}: cannot parse: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{label}: top level must be a table")
    return data


def read_config_mapping(path) -> dict:
    """Raw key/value mapping of a config file or bundled config name."""
    path_obj = Path(path)
    if not path_obj.exists() and str(path) in bundled_configs():
        text = (resources.files("gbcdc") / "configs" / f"{path}.toml").read_text()
        return _parse(text, ".toml", str(path))
    try:
        text = path_obj.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config: {err.strerror}") from None
    return _parse(text, path_obj.suffix.lower(), str(path))


def parse_override(item: str) -> tuple[str, object]:
    """Split ``key=value``; the value is read as a TOML literal, else as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r}: expected key=value")
    key, raw = item.split("=", 1)
    key, raw = key.strip(), raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path, overrides=(), seed: int | None = None) -> ExperimentConfig:
    """Read, override and validate an experiment configuration.

    Parameters
    ----------
    path : str or Path
        A ``.toml`` or ``.json`` file, or the name of a bundled config.
    overrides : sequence of str
        ``key=value`` items applied on top of the file.
    seed : int, optional
        Replaces the configured seed.
    """
    data = read_config_mapping(path)
    for item in overrides:
        key, value = parse_override(item)
        data[key] = value
    if seed is not None:
        data["seed"] = seed
    return config_from_mapping(data)
