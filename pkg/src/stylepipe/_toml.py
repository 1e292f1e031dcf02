"""Minimal TOML subset reader/writer for run configs.

Supports tables, arrays of tables, bare/dotted keys, basic strings, ints,
floats, booleans, and inline arrays of scalars; rejects everything else
loudly. Exists because the deployment environment offers no TOML parser for
Python 3.10; configs written by dump_toml() always parse back identically.
"""

from __future__ import annotations

import re
from typing import Any

_BARE_KEY_RE = re.compile(r"^[A-Za-z0-9_-]+$")
_INT_RE = re.compile(r"^[+-]?[0-9](?:_?[0-9])*$")
_FLOAT_RE = re.compile(r"^[+-]?(?:[0-9](?:_?[0-9])*)(?:\.[0-9](?:_?[0-9])*)?(?:[eE][+-]?[0-9]+)?$")


class TomlError(ValueError):
    pass


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"' and (not out or out[-1] != "\\"):
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out).strip()


def _parse_string(text: str, lineno: int) -> tuple[str, str]:
    if not text.startswith('"'):
        raise TomlError(f"line {lineno}: expected string")
    out = []
    i = 1
    escapes = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text) or text[i + 1] not in escapes:
                raise TomlError(f"line {lineno}: unsupported escape in string")
            out.append(escapes[text[i + 1]])
            i += 2
            continue
        if ch == '"':
            return "".join(out), text[i + 1 :].strip()
        out.append(ch)
        i += 1
    raise TomlError(f"line {lineno}: unterminated string")


def _parse_value(text: str, lineno: int) -> tuple[Any, str]:
    text = text.strip()
    if text.startswith('"'):
        return _parse_string(text, lineno)
    if text.startswith("["):
        items: list[Any] = []
        rest = text[1:].strip()
        while True:
            if not rest:
                raise TomlError(f"line {lineno}: unterminated array")
            if rest.startswith("]"):
                return items, rest[1:].strip()
            value, rest = _parse_value(rest, lineno)
            items.append(value)
            rest = rest.strip()
            if rest.startswith(","):
                rest = rest[1:].strip()
            elif not rest.startswith("]"):
                raise TomlError(f"line {lineno}: expected ',' or ']' in array")
    # scalar: consume up to a delimiter that can follow a value inside arrays
    m = re.match(r"^[^,\]]+", text)
    token = m.group(0).strip() if m else ""
    rest = text[len(m.group(0)) :] if m else ""
    if token in ("true", "false"):
        return token == "true", rest.strip()
    if _INT_RE.match(token):
        return int(token.replace("_", "")), rest.strip()
    if _FLOAT_RE.match(token):
        return float(token.replace("_", "")), rest.strip()
    raise TomlError(f"line {lineno}: cannot parse value {token!r}")


def _split_key(key: str, lineno: int) -> list[str]:
    parts = []
    for part in key.split("."):
        part = part.strip()
        if not _BARE_KEY_RE.match(part):
            raise TomlError(f"line {lineno}: bad key {part!r}")
        parts.append(part)
    return parts


def _descend(root: dict, parts: list[str], lineno: int) -> dict:
    node = root
    for part in parts:
        nxt = node.setdefault(part, {})
        if isinstance(nxt, list):
            nxt = nxt[-1]
        if not isinstance(nxt, dict):
            raise TomlError(f"line {lineno}: key {part!r} already holds a value")
        node = nxt
    return node


def parse_toml(text: str) -> dict:
    root: dict = {}
    current = root
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if line.startswith("[["):
            if not line.endswith("]]"):
                raise TomlError(f"line {lineno}: malformed table array header")
            parts = _split_key(line[2:-2], lineno)
            parent = _descend(root, parts[:-1], lineno)
            array = parent.setdefault(parts[-1], [])
            if not isinstance(array, list):
                raise TomlError(f"line {lineno}: {parts[-1]!r} is not a table array")
            entry: dict = {}
            array.append(entry)
            current = entry
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise TomlError(f"line {lineno}: malformed table header")
            parts = _split_key(line[1:-1], lineno)
            current = _descend(root, parts, lineno)
            continue
        if "=" not in line:
            raise TomlError(f"line {lineno}: expected key = value")
        key, _, value_text = line.partition("=")
        parts = _split_key(key.strip(), lineno)
        node = _descend(current, parts[:-1], lineno)
        value, rest = _parse_value(value_text.strip(), lineno)
        if rest:
            raise TomlError(f"line {lineno}: trailing content {rest!r}")
        if parts[-1] in node:
            raise TomlError(f"line {lineno}: duplicate key {parts[-1]!r}")
        node[parts[-1]] = value
    return root


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise TomlError(f"cannot serialize {type(value).__name__}")


def dump_toml(data: dict, _prefix: str = "") -> str:
    """Serialize a nested dict into the supported TOML subset."""
    scalars = []
    tables = []
    table_arrays = []
    for key, value in data.items():
        if isinstance(value, dict):
            tables.append((key, value))
        elif isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            table_arrays.append((key, value))
        else:
            scalars.append((key, value))
    lines = []
    for key, value in scalars:
        lines.append(f"{key} = {_format_value(value)}")
    for key, value in tables:
        name = f"{_prefix}{key}"
        lines.append("")
        lines.append(f"[{name}]")
        lines.append(dump_toml(value, _prefix=f"{name}."))
    for key, entries in table_arrays:
        name = f"{_prefix}{key}"
        for entry in entries:
            lines.append("")
            lines.append(f"[[{name}]]")
            lines.append(dump_toml(entry, _prefix=f"{name}."))
    return "\n".join(line for line in lines if line is not None).strip("\n") + "\n"
