"""Plain-text key=value run configuration.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Every command declares its known keys; unknown keys are rejected and all
referenced paths are validated before any work starts, so a typo fails
fast instead of mid-run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .stats import GridPoint


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(";", ",").split(",") if part.strip())


def _parse_grid(text: str) -> tuple[GridPoint, ...]:
    """Grid rows are ``accuracy_bits,chopped_msbs,frag_level[,max_hamming]``
    separated by semicolons."""
    points = []
    for row in text.split(";"):
        row = row.strip()
        if not row:
            continue
        parts = [int(p) for p in row.split(",")]
        if len(parts) == 3:
            points.append(GridPoint(*parts))
        elif len(parts) == 4:
            points.append(GridPoint(parts[0], parts[1], parts[2], parts[3]))
        else:
            raise ConfigError(f"grid row needs 3 or 4 integers: {row!r}")
    if not points:
        raise ConfigError("grid must contain at least one row")
    return tuple(points)


def _parse_hex(text: str) -> bytes:
    try:
        return bytes.fromhex(text.strip())
    except ValueError as exc:
        raise ConfigError(f"not hex: {text!r}") from exc


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any = None
    required: bool = False
    is_path: bool = False


def k_int(name, default=None, required=False):
    return Key(name, int, default, required)


def k_float(name, default=None, required=False):
    return Key(name, float, default, required)


def k_str(name, default=None, required=False):
    return Key(name, str, default, required)


def k_path(name, default=None, required=False):
    return Key(name, str, default, required, is_path=True)


def k_hex(name, default=None, required=False):
    return Key(name, _parse_hex, default, required)


def k_bool(name, default=False):
    return Key(name, _parse_bool, default)


def k_grid(name, default=None):
    return Key(name, _parse_grid, default)


def k_int_list(name, default=None):
    return Key(name, _parse_int_list, default)


def read_kv_file(path) -> dict[str, str]:
    raw: dict[str, str] = {}
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def load_config(path, schema: list[Key]) -> dict[str, Any]:
    """Parse, type and validate a config file against a command's schema.

    Relative path values resolve against the config file's directory, so
    a config can travel with the data it references.
    """
    raw = read_kv_file(path)
    base = Path(path).resolve().parent
    by_name = {key.name: key for key in schema}
    unknown = sorted(set(raw) - set(by_name))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out: dict[str, Any] = {}
    for key in schema:
        if key.name in raw:
            try:
                out[key.name] = key.parse(raw[key.name])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key.name}: {exc}") from exc
        elif key.required:
            raise ConfigError(f"missing required config key {key.name}")
        else:
            out[key.name] = key.default
    for key in schema:
        if key.is_path and out.get(key.name):
            p = Path(out[key.name])
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                raise FileNotFoundError(f"{key.name}: path does not exist: {p}")
            out[key.name] = str(p)
    return out
