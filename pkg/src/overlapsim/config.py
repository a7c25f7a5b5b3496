"""Flat key-value config files with TOML-style [sections].

Supported values: integers, floats, booleans (true/false), and strings
(quoted or bare). Lines starting with '#' are comments. Nested tables,
arrays, and multi-line values are not supported; runs should be fully
describable by scalars.
"""

from __future__ import annotations

from .errors import ConfigError


def parse_config_text(text: str) -> dict:
    root: dict = {}
    current = root
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            current = root.setdefault(name, {})
            if not isinstance(current, dict):
                raise ConfigError(f"line {lineno}: section {name!r} collides with a key")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        current[key] = _parse_value(value.strip(), lineno)
    return root


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def _parse_value(text: str, lineno: int):
    if not text:
        raise ConfigError(f"line {lineno}: empty value")
    if text[0] in "\"'":
        if len(text) < 2 or text[-1] != text[0]:
            raise ConfigError(f"line {lineno}: unterminated string")
        return text[1:-1]
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text, 0)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text  # bare string
