"""Plain-text key=value run configuration"""

import types
import typing
from dataclasses import fields, is_dataclass
from pathlib import Path

from dotenv import dotenv_values

from core.errors import ConfigError
from libraries.utils import default_logger

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def load_config(path) -> dict:
    """
    Reads a key=value config file with # comments.

    Args:
        path (str): Path to the config file.

    Returns:
        dict: Raw string values by key.

    Raises:
        ConfigError: If the file is missing or a line has no value.
    """

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")

    values = dotenv_values(path)
    empty = [k for k, v in values.items() if v is None]
    if empty:
        raise ConfigError(f"Config keys without a value in {path}: {', '.join(empty)}")

    default_logger.info(f"\tLoaded {len(values)} config keys from {path}")
    return dict(values)


def _cast(raw: str, annotation, key: str):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        if raw.strip().lower() in ("", "none", "null"):
            return None
        return _cast(raw, inner[0], key)

    if origin in (tuple, list):
        item_type = args[0] if args else str
        items = [part.strip() for part in raw.split(",") if part.strip()]
        return tuple(_cast(item, item_type, key) for item in items)

    try:
        if annotation is bool:
            lowered = raw.strip().lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"Config key '{key}' expects {annotation.__name__}, got {raw!r}") from None

    return raw.strip()


def field_names(*classes) -> set:
    return {f.name for cls in classes for f in fields(cls)}


def build(cls, values: dict, **overrides):
    """
    Instantiates a config dataclass from the keys it declares; other keys are ignored.

    Args:
        cls: A dataclass type.
        values (dict): Raw string values.
        **overrides: Already-typed values that win over the raw ones.

    Returns:
        An instance of cls.
    """

    assert is_dataclass(cls)
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in fields(cls):
        if f.name in overrides:
            kwargs[f.name] = overrides[f.name]
        elif f.name in values and not is_dataclass(hints[f.name]):
            kwargs[f.name] = _cast(values[f.name], hints[f.name], f.name)

    return cls(**kwargs)


def check_keys(values: dict, *classes, extra=()) -> None:
    """Raise ConfigError naming every key no config class declares."""

    known = field_names(*classes) | set(extra)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
