"""
config.py — FedSim Configuration Documents
------------------------------------------
Maps YAML documents onto the simulator's frozen dataclasses and back.
The schema is the dataclass itself: unknown keys are rejected, every
value is type-checked, and each type's own invariants are reported with
the dotted key path that produced them (e.g. `local.batch_size`).
"""

from __future__ import annotations

import dataclasses
import hashlib
import types
from enum import Enum
from pathlib import Path
from typing import Any, Literal, Mapping, TypeVar, Union, get_args, get_origin, get_type_hints

import yaml

from utils_io import dump_yaml

T = TypeVar("T")


class ConfigError(ValueError):
    """Schema violation in a configuration document, tagged with its key path."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


# ============================================================
# 1. VALUE COERCION
# ============================================================
def _join(path: str, key) -> str:
    return f"{path}.{key}" if path else str(key)


def _describe(value) -> str:
    return type(value).__name__


def _coerce(tp, value, path: str):
    origin = get_origin(tp)

    if origin in (Union, types.UnionType):
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            if type(None) in get_args(tp):
                return None
            raise ConfigError(path, "value required")
        return _coerce(args[0], value, path)

    if origin is Literal:
        if value not in get_args(tp):
            raise ConfigError(path, f"expected one of {list(get_args(tp))}, got {value!r}")
        return value

    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {_describe(value)}")
        args = get_args(tp)
        item_tp = args[0] if args else Any
        return tuple(_coerce(item_tp, v, f"{path}[{i}]") for i, v in enumerate(value))

    if isinstance(tp, type) and dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(path, f"expected a mapping, got {_describe(value)}")
        return from_mapping(tp, value, path)

    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError:
            raise ConfigError(path, f"expected one of {[m.value for m in tp]}, got {value!r}") from None

    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected bool, got {_describe(value)}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected int, got {_describe(value)}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected float, got {_describe(value)}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected str, got {_describe(value)}")
        return value
    return value


# ============================================================
# 2. DATACLASS <-> MAPPING
# ============================================================
def from_mapping(cls: type[T], data: Mapping, path: str = "") -> T:
    """Build `cls` from a mapping; missing keys fall back to field defaults."""
    if not isinstance(data, Mapping):
        raise ConfigError(path, f"expected a mapping, got {_describe(data)}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names, key=str)
    if unknown:
        raise ConfigError(_join(path, unknown[0]), "unknown key")
    kwargs = {k: _coerce(hints[k], v, _join(path, k)) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc


def to_mapping(obj) -> Any:
    """Plain-Python rendering (dicts, lists, scalars) of a config object."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_mapping(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_mapping(v) for v in obj]
    if isinstance(obj, Mapping):
        return {str(k): to_mapping(v) for k, v in obj.items()}
    return obj


# ============================================================
# 3. DOCUMENTS
# ============================================================
def parse_config(text: str, cls: type[T], kind: str | None = None) -> T:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError("", f"expected a mapping at the top level, got {_describe(data)}")
    data = dict(data)
    found = data.pop("kind", None)
    if kind is not None and found is not None and found != kind:
        raise ConfigError("kind", f"expected {kind!r}, got {found!r}")
    return from_mapping(cls, data)


def load_config(path: str | Path, cls: type[T], kind: str | None = None) -> T:
    return parse_config(Path(path).read_text(encoding="utf-8"), cls, kind)


def render_config(obj, kind: str | None = None) -> str:
    body = to_mapping(obj)
    if kind is not None:
        body = {"kind": kind, **body}
    return dump_yaml(body)


def config_digest(obj) -> str:
    """sha256 of the canonical rendering."""
    return hashlib.sha256(render_config(obj).encode("utf-8")).hexdigest()

