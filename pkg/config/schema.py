"""Strict construction of dataclass trees from parsed JSON."""
import dataclasses
from typing import Any, Dict, Union, get_args, get_origin, get_type_hints

from core.errors import ConfigError


def _check(value: Any, hint: Any, path: str) -> Any:
    origin = get_origin(hint)
    if hint is Any:
        return value
    if origin is Union:
        options = get_args(hint)
        if value is None and type(None) in options:
            return None
        for option in options:
            if option is type(None):
                continue
            try:
                return _check(value, option, path)
            except ConfigError:
                continue
        raise ConfigError(f"{path}: unexpected value {value!r}")
    if dataclasses.is_dataclass(hint):
        return build_dataclass(hint, value, path)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        args = get_args(hint)
        item = args[0] if args else Any
        return [_check(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return dict(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def build_dataclass(cls, data: Dict[str, Any], path: str = ""):
    """Instantiate ``cls`` from ``data``, rejecting unknown keys and wrong types.

    Args:
        cls: dataclass type
        data (Dict[str, Any]): parsed JSON object
        path (str): dotted location used in error messages

    Returns:
        An instance of ``cls``

    Raises:
        ConfigError: naming the offending dotted key
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"Unknown configuration key: {where}{unknown[0]}")
    kwargs = {}
    for name in names:
        if name in data:
            key_path = f"{path}.{name}" if path else name
            kwargs[name] = _check(data[name], hints[name], key_path)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def dataclass_to_dict(instance) -> Dict[str, Any]:
    return dataclasses.asdict(instance)
