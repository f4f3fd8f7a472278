"""INI-style run configuration mapped onto the typed config dataclasses.

    [build]
    variant = base
    seed = 3
    skill_budgets = 50000, 500000

    [model]
    gradient_steps = 20000

Sections: build, thresholds, model, block_model, learner. Unknown sections or
keys, and values that do not parse as the field's type, raise ConfigError.
"""
from __future__ import annotations

import configparser
import dataclasses
import typing

from . import dyn_models as dm
from . import interaction as it
from .chain_builder import BuildConfig
from .rl import LearnerConfig

SECTIONS = {"build": BuildConfig, "thresholds": it.DetectorThresholds, "model": dm.TrainConfig,
            "block_model": dm.TrainConfig, "learner": LearnerConfig}
NESTED = ("thresholds", "model", "block_model", "learner")


class ConfigError(ValueError):
    pass


def _coerce(text, typ, key):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        if typ is float:
            return float(text)
        if typ is tuple:
            return tuple(int(float(v)) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    out = {}
    for f in dataclasses.fields(cls):
        t = hints[f.name]
        out[f.name] = t if t in (bool, int, float, str, tuple) else None
    return out


def parse_config(text, base: BuildConfig | None = None) -> BuildConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    cfg = base or BuildConfig()
    parts = {name: getattr(cfg, name) for name in NESTED}
    top = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        types = _field_types(SECTIONS[section])
        values = {}
        for key, raw in cp.items(section):
            if key not in types or (section == "build" and key in NESTED):
                raise ConfigError(f"unknown key {section}.{key}")
            if types[key] is None:
                raise ConfigError(f"{section}.{key} cannot be set from a config file")
            values[key] = _coerce(raw, types[key], f"{section}.{key}")
        if section == "build":
            top.update(values)
        else:
            try:
                parts[section] = dataclasses.replace(parts[section], **values)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"[{section}] {e}") from None
    try:
        return dataclasses.replace(cfg, **top, **parts)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load_config(path, base=None) -> BuildConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), base)


def dump_config(cfg: BuildConfig) -> str:
    lines = []
    for section, cls in SECTIONS.items():
        obj = cfg if section == "build" else getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(cls):
            if section == "build" and f.name in NESTED:
                continue
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)
