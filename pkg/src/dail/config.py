"""Flat ``section.key = value`` run configuration.

Sections are ``gen``, ``train``, ``margin``, ``eval`` and ``run``. Lines
starting with ``#`` and blank lines are ignored. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field

from .datagen import GenConfig
from .losses import MarginSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    n_pos: int = 600
    n_neg: int = 600
    probe_steps: int = 500
    probe_lr: float = 0.5
    seed: int = 0


@dataclass
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "runs"
    seeds: int = 5


# config key -> attribute name, where they differ
_ALIASES = {("train", "lambda"): "lam"}
_RUN_KEYS = {"out_dir": str, "seeds": int}


def _field_types(cls) -> dict[str, typing.Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _parse_value(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if origin in (typing.Union, types.UnionType):
            inner = [a for a in args if a is not type(None)][0]
            if raw.lower() in ("none", "null", ""):
                return None
            return _parse_value(raw, inner, key)
        if origin is tuple:
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if tp is bool:
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except (ValueError, IndexError):
        raise ConfigError(f"bad value {raw!r} for key {key}") from None


def parse_config(text: str) -> RunConfig:
    values: dict[str, dict[str, typing.Any]] = {"gen": {}, "train": {}, "margin": {}, "eval": {}, "run": {}}
    fields = {
        "gen": _field_types(GenConfig),
        "train": _field_types(TrainConfig),
        "margin": _field_types(MarginSpec),
        "eval": _field_types(EvalConfig),
        "run": _RUN_KEYS,
    }
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        lhs, rhs = line.split("=", 1)
        lhs = lhs.strip()
        if "." not in lhs:
            raise ConfigError(f"line {lineno}: key {lhs!r} has no section")
        section, key = lhs.split(".", 1)
        if section not in values:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        attr = _ALIASES.get((section, key), key)
        if attr not in fields[section] or (section == "train" and attr == "margin"):
            raise ConfigError(f"line {lineno}: unknown key {lhs}")
        try:
            values[section][attr] = _parse_value(rhs, fields[section][attr], lhs)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None

    try:
        margin = MarginSpec(**{**dataclasses.asdict(TrainConfig().margin), **values["margin"]})
        train = TrainConfig(**{**values["train"], "margin": margin})
        gen = GenConfig(**values["gen"])
        train.validate()
        gen.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(gen=gen, train=train, eval=EvalConfig(**values["eval"]), **values["run"])
    return cfg


def apply_env_overrides(cfg: RunConfig) -> RunConfig:
    """``DAIL_SEED`` replaces the generator, training and evaluation seeds."""
    seed = os.environ.get("DAIL_SEED")
    if seed is None:
        return cfg
    try:
        s = int(seed)
    except ValueError:
        raise ConfigError(f"DAIL_SEED must be an integer, got {seed!r}") from None
    cfg.gen.seed = cfg.train.seed = cfg.eval.seed = s
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config`; writes every key."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        if v is None:
            return "none"
        return repr(v) if isinstance(v, float) else str(v)

    inverse = {v: k for (_, k), v in _ALIASES.items()}
    lines = []
    for section, obj in (("gen", cfg.gen), ("train", cfg.train), ("margin", cfg.train.margin), ("eval", cfg.eval)):
        lines.append(f"# {section}")
        for f in dataclasses.fields(obj):
            if section == "train" and f.name == "margin":
                continue
            key = inverse.get(f.name, f.name) if section == "train" else f.name
            lines.append(f"{section}.{key} = {fmt(getattr(obj, f.name))}")
        lines.append("")
    lines += ["# run", f"run.out_dir = {cfg.out_dir}", f"run.seeds = {cfg.seeds}", ""]
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return apply_env_overrides(parse_config(fh.read()))
