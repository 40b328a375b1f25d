"""
Configuration resolution: defaults < YAML file < command-line overrides.
"""

import difflib
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import yaml
from loguru import logger
from pydantic import BaseModel, ValidationError

from core.config import RunConfig
from core.exceptions import ConfigError


def parse_override(text: str) -> Tuple[List[str], Any]:
    """``section.key=value`` with the value read as a YAML scalar"""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form section.key=value", key_path=text)
    key, raw = text.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigError(f"override '{text}' has an empty key", key_path=key)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value '{raw}': {e}", key_path=key.strip())
    return path, value


def _known_keys(model: type) -> Dict[str, Optional[type]]:
    keys = {}
    for name, field in model.model_fields.items():
        nested = field.annotation if isinstance(field.annotation, type) and issubclass(field.annotation, BaseModel) else None
        keys[field.alias or name] = nested
    return keys


def check_keys(data: Dict[str, Any], model: type = RunConfig, prefix: str = "") -> None:
    """Reject unknown keys, suggesting the closest known one"""
    known = _known_keys(model)
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            close = difflib.get_close_matches(str(key), list(known), n=1, cutoff=0.6)
            raise ConfigError(f"unknown config key '{path}'", key_path=path,
                              suggestion=close[0] if close else None)
        nested = known[key]
        if nested is not None and isinstance(value, dict):
            check_keys(value, nested, prefix=f"{path}.")


def _set(data: Dict[str, Any], path: List[str], value: Any) -> None:
    node = data
    for part in path[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[path[-1]] = value


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    if not Path(path).exists():
        raise FileNotFoundError(path)
    with open(path, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


def resolve_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                   values: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Build a RunConfig from the file at ``path`` then ``--set`` overrides then ``values``.

    ``values`` maps dotted keys to already-typed values (dedicated CLI options);
    ``None`` entries are ignored so unset options never mask the file.
    """
    data = load_config_file(path)
    for text in overrides:
        key_path, value = parse_override(text)
        _set(data, key_path, value)
    for key, value in (values or {}).items():
        if value is not None:
            _set(data, key.split("."), value)

    check_keys(data)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        key_path = ".".join(str(part) for part in error["loc"])
        raise ConfigError(f"invalid value for '{key_path}': {error['msg']}", key_path=key_path)
    logger.debug(f"Resolved config {config.fingerprint()[:12]} from {path or 'defaults'}")
    return config


def save_config(config: RunConfig, path: str) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(config.to_yaml_dict(), f, sort_keys=False)
    return str(path)
