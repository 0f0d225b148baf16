"""Plain-text ``key = value`` configuration files.

Grammar (one entry per line)::

    # comment
    data.n_train = 8000          # section "data", key "n_train"
    data.proportions = 0.44, 0.41, 0.14, 0.01
    plan.methods = retrain+rw, miu+rw
    miu.retain_term = true

Keys are dotted; everything before the last dot is the section. Values are
parsed as bool (``true``/``false``), int, float, comma-separated lists of
those, or left as strings. Later lines override earlier ones.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

SEED_ENV = "UNLEARN_LAB_SEED"


class ConfigSyntaxError(ValueError):
    pass


def parse_scalar(text: str) -> Any:
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str) -> Any:
    if "," in text:
        return [parse_scalar(part) for part in text.split(",") if part.strip()]
    return parse_scalar(text)


def parse_config(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigSyntaxError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not piece for piece in key.split(".")):
            raise ConfigSyntaxError(f"line {lineno}: malformed key {key!r}")
        out[key] = parse_value(value)
    return out


def load_config(path: str | Path) -> dict[str, Any]:
    return parse_config(Path(path).read_text())


def section(config: dict[str, Any], name: str) -> dict[str, Any]:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in config.items() if k.startswith(prefix) and "." not in k[len(prefix):]}


def dump_config(config: dict[str, Any]) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (list, tuple)):
            return ", ".join(fmt(x) for x in v)
        return str(v)

    return "".join(f"{k} = {fmt(v)}\n" for k, v in sorted(config.items()))
