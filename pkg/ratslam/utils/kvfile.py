"""Flat ``key = value`` text with ``#`` comments.

Used for run configs, scenario specs and dataset manifests.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Iterable, Tuple, Union

from ratslam.errors import ConfigError


def parse_kv_text(text: str, source: str = "<string>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        # tolerate TOML-style quoting in manifests
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        values[key] = value
    return values


def read_kv_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    return parse_kv_text(text, source=str(path))


def parse_assignment(item: str) -> Tuple[str, str]:
    """Split one ``--set key=value`` override."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, value = (part.strip() for part in item.split("=", 1))
    if not key:
        raise ConfigError(f"override has an empty key: {item!r}")
    return key, value


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_kv(items: Iterable[Tuple[str, Any]], header: str = "") -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines.extend(f"{key} = {format_value(value)}" for key, value in items)
    return "\n".join(lines) + "\n"
