"""Sectioned ``key = value`` experiment configs with strict key checking.

Grammar (a subset of INI)::

    # comment
    [section]
    key = value

Sections are ``run``, ``model``, ``task`` and ``train``; each key maps to a
field of the matching dataclass and unknown sections or keys are rejected.
Tuples are written comma separated (``eval_lengths = 64, 256``) and booleans
as ``true``/``false``. :func:`render` writes every field, so a resolved
config re-parses to an equal object.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .tasks import TaskSpec
from .training import TrainConfig


class ConfigError(ValueError):
    """Bad config file; carries the offending line and key when known."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None, path: str | None = None):
        self.line, self.key, self.path = line, key, path
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if key:
            where.append(f"key {key!r}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


@dataclass(frozen=True)
class RunOptions:
    name: str = "run"
    out_dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunOptions = field(default_factory=RunOptions)
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def digest(self) -> str:
        return hashlib.sha256(render(self).encode()).hexdigest()[:16]


SECTIONS = {"run": RunOptions, "model": ModelConfig, "task": TaskSpec, "train": TrainConfig}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        proto = default[0] if default else 0
        return tuple(_coerce(p, proto, key) for p in parts)
    return raw


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return no
    return None


def parse(text: str, path: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive
    try:
        cp.read_string(text, source=path or "<config>")
    except configparser.DuplicateOptionError as e:
        raise ConfigError("duplicate key", e.lineno, e.option, path) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", e.lineno, None, path) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside any [section]", e.lineno, None, path) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line (expected key = value)", lineno, None, path) from None
    parts = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(SECTIONS)}", _line_of(text, section, None), None, path)
    for section, cls in SECTIONS.items():
        defaults = cls()
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        if cp.has_section(section):
            for key, raw in cp.items(section):
                line = _line_of(text, section, key)
                if key not in names:
                    raise ConfigError(f"unknown key in [{section}]; valid keys: {', '.join(sorted(names))}", line, key, path)
                try:
                    kwargs[key] = _coerce(raw, getattr(defaults, key), key)
                except ValueError as e:
                    raise ConfigError(str(e), line, key, path) from None
        try:
            parts[section] = cls(**kwargs)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid [{section}]: {e}", _line_of(text, section, None), None, path) from None
    return ExperimentConfig(**parts)


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path=str(p)) from None
    return parse(text, str(p))


def render(config: ExperimentConfig) -> str:
    """Every field of every section, in declaration order."""
    out = []
    for section in SECTIONS:
        obj = getattr(config, section)
        out.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            out.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)
