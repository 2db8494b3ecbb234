"""Experiment configuration: a TOML tree with dotted-path overrides.

One config describes one algorithm arm: environment, agent hyperparameters,
network architecture, regularizer and schedule, plus the seed list to fan
out over. Configs round-trip losslessly through their file format, and every
validation failure names the offending field.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig, Schedule
from .net import ArchSpec, InitSpec
from .reg import BaselineSpec, ParsevalSpec


class ConfigError(ValueError):
    """Invalid configuration; message carries the dotted field path."""


@dataclass
class EnvSpec:
    kind: str = "gridworld"
    action_gain_low: float = 0.5
    action_gain_high: float = 1.5
    min_change: float = 0.25

    def validate(self) -> None:
        if self.kind not in ("gridworld", "pointgoal"):
            raise ConfigError(f"env.kind: unknown environment {self.kind!r}")
        if self.action_gain_high < self.action_gain_low:
            raise ConfigError("env.action_gain_high: must be >= env.action_gain_low")
        if self.min_change < 0:
            raise ConfigError("env.min_change: must be >= 0")


@dataclass
class RegSpec:
    """Which regularizer arm this config runs.

    kind "parseval" uses strength/target_sq_norm/groups/angle_only/base_width;
    "shrink_perturb" uses perturb_scale/weight_decay; "regen" and "wregen"
    use strength; "none" ignores the rest.
    """

    kind: str = "none"
    strength: float = 1e-4
    target_sq_norm: float = 2.0
    groups: int = 1
    angle_only: bool = False
    base_width: int = 64
    perturb_scale: float = 1e-3
    weight_decay: float = 1e-3

    def validate(self) -> None:
        if self.kind not in ("none", "parseval", "shrink_perturb", "regen", "wregen"):
            raise ConfigError(f"reg.kind: unknown regularizer {self.kind!r}")
        for name in ("strength", "perturb_scale", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"reg.{name}: must be >= 0")
        if self.groups < 1:
            raise ConfigError("reg.groups: must be >= 1")
        if self.target_sq_norm <= 0:
            raise ConfigError("reg.target_sq_norm: must be > 0")

    def parseval_spec(self) -> Optional[ParsevalSpec]:
        if self.kind != "parseval":
            return None
        return ParsevalSpec(
            strength=self.strength,
            target_sq_norm=self.target_sq_norm,
            groups=self.groups,
            angle_only=self.angle_only,
            base_width=self.base_width,
        )

    def baseline_spec(self) -> Optional[BaselineSpec]:
        if self.kind == "shrink_perturb":
            return BaselineSpec("shrink_perturb", perturb_scale=self.perturb_scale,
                                weight_decay=self.weight_decay)
        if self.kind in ("regen", "wregen"):
            return BaselineSpec(self.kind, strength=self.strength)
        return None


@dataclass
class ExperimentConfig:
    name: str = "baseline"
    seeds: list = field(default_factory=lambda: [1])
    out_dir: str = "runs"
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    arch: ArchSpec = field(default_factory=ArchSpec)
    reg: RegSpec = field(default_factory=RegSpec)
    schedule: Schedule = field(default_factory=lambda: Schedule(400_000, 40_000))

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("name: must be nonempty")
        if not self.seeds:
            raise ConfigError("seeds: must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: duplicates not allowed")
        self.env.validate()
        _wrap_section("agent", self.agent.validate)
        _wrap_section("arch", self.arch.validate)
        self.reg.validate()
        _wrap_section("schedule", self.schedule.validate)
        if self.reg.kind == "parseval" and self.arch.width % self.reg.groups != 0:
            raise ConfigError(
                f"reg.groups: {self.reg.groups} does not divide arch.width "
                f"{self.arch.width}"
            )


def _wrap_section(section: str, fn) -> None:
    try:
        fn()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{section}: {e}") from e


_ARCH_KEYS = ("width", "hidden_layers", "activation", "diagonal_layers",
              "input_scale", "layer_norm")
_INIT_KEYS = {"init_scheme": "scheme", "init_gain": "gain",
              "rank_cap": "rank_cap", "jitter_eps": "jitter_eps"}


def _build_section(cls, data: dict, path: str):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e


def _build_arch(data: dict) -> ArchSpec:
    init_kwargs = {}
    arch_kwargs = {}
    for key, value in data.items():
        if key in _INIT_KEYS:
            init_kwargs[_INIT_KEYS[key]] = value
        elif key in _ARCH_KEYS:
            arch_kwargs[key] = value
        else:
            raise ConfigError(f"arch.{key}: unknown field")
    return ArchSpec(init=InitSpec(**init_kwargs), **arch_kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    cfg = ExperimentConfig()
    for key in ("name", "out_dir"):
        if key in data:
            value = data.pop(key)
            if not isinstance(value, str):
                raise ConfigError(f"{key}: expected a string")
            setattr(cfg, key, value)
    if "seeds" in data:
        seeds = data.pop("seeds")
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds: expected a list of integers")
        cfg.seeds = seeds
    sections = {
        "env": (EnvSpec, "env"),
        "agent": (AgentConfig, "agent"),
        "reg": (RegSpec, "reg"),
        "schedule": (Schedule, "schedule"),
    }
    for key, raw in data.items():
        if key == "arch":
            cfg.arch = _build_arch(raw)
        elif key in sections:
            cls, path = sections[key]
            setattr(cfg, key, _build_section(cls, raw, path))
        else:
            raise ConfigError(f"{key}: unknown section")
    cfg.validate()
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    arch = {k: getattr(cfg.arch, k) for k in _ARCH_KEYS}
    for toml_key, attr in _INIT_KEYS.items():
        value = getattr(cfg.arch.init, attr)
        if value is not None:
            arch[toml_key] = value
    return {
        "name": cfg.name,
        "seeds": list(cfg.seeds),
        "out_dir": cfg.out_dir,
        "env": {f.name: getattr(cfg.env, f.name) for f in fields(EnvSpec)},
        "agent": {f.name: getattr(cfg.agent, f.name) for f in fields(AgentConfig)},
        "arch": arch,
        "reg": {f.name: getattr(cfg.reg, f.name) for f in fields(RegSpec)},
        "schedule": {f.name: getattr(cfg.schedule, f.name) for f in fields(Schedule)},
    }


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def dumps_toml(data: dict) -> str:
    """Emit the two-level dict produced by to_dict as TOML text."""
    lines = []
    for key, value in data.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_toml_value(value)}")
    for key, value in data.items():
        if isinstance(value, dict):
            lines.append("")
            lines.append(f"[{key}]")
            for sub, subval in value.items():
                lines.append(f"{sub} = {_toml_value(subval)}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"TOML parse error: {e}") from e
    return from_dict(data)


def load(path) -> ExperimentConfig:
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: TOML parse error: {e}") from e
    return from_dict(data)


def parse_override_value(text: str):
    """Parse a --set value the way TOML would; bare words fall back to strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply dotted-path assignments like agent.learning_rate=3e-4."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        path, raw = item.split("=", 1)
        value = parse_override_value(raw)
        parts = path.strip().split(".")
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override {path!r}: no such section {part!r}")
            node = node[part]
        node[parts[-1]] = value
    return from_dict(data)
