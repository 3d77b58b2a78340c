"""TOML run configuration with typed keys; unknown keys are errors."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .budget import BudgetPolicy
from .episode import MemoryStrategy
from .errors import ConfigError
from .memory import AdaptiveMemoryConfig
from .tasks import LessonSpec
from .trainer import TrainConfig

NUM = (int, float)

# section -> key -> accepted python types
SCHEMA = {
    "": {"seed": int},
    "task": {"kind": str, "n_max": int, "max_points": int, "max_retries": int},
    "budget": {"kind": str, "c": int, "k": NUM, "stochastic": str, "confidence": NUM},
    "model": {"cells": int, "word_size": int, "hidden": int, "read_heads": int, "dtype": str},
    "train": {"optimizer": str, "learning_rate": NUM, "clip_norm": NUM, "mix_ratio": NUM, "eval_every": int,
              "advance_threshold": NUM, "eval_size": int, "final_lesson_steps": int, "max_steps": int,
              "stop_accuracy": NUM, "accumulate": int, "unique_target": bool},
    "eval": {"lesson": int, "p_min": int, "p_max": int, "p_stride": int, "episodes": int, "sizes": list,
             "strategy": str, "factor": int, "temperature": NUM, "threads": int, "unique_target": bool},
    "adaptive": {"alloc_threshold": NUM, "growth_factor": int, "temp_factor": NUM, "usage_cutoff": NUM,
                 "max_extensions": int},
    "curriculum": {"nodes": list, "degree": list, "path_length": list, "clusters": list, "cut": list,
                   "max_degree": list, "items": list, "digits": list, "points": list},
}
SECTIONS = set(SCHEMA) - {""}


@dataclass
class EvalConfig:
    lesson: int | None = None  # 1-based; defaults to the last lesson
    p_min: int = 0
    p_max: int = 300
    p_stride: int = 5
    episodes: int = 100
    sizes: list = field(default_factory=list)
    strategy: str = "fixed"
    factor: int = 5
    temperature: float = 0.65
    threads: int | None = None
    unique_target: bool = True
    adaptive: AdaptiveMemoryConfig = field(default_factory=AdaptiveMemoryConfig)

    def __post_init__(self):
        if self.p_min < 0 or self.p_max < self.p_min or self.p_stride < 1:
            raise ConfigError("need 0 <= p_min <= p_max and p_stride >= 1")
        if self.episodes < 1:
            raise ConfigError("eval episodes must be >= 1")
        self.memory_strategy()

    @property
    def p_range(self):
        return range(self.p_min, self.p_max + 1, self.p_stride)

    def memory_strategy(self):
        return MemoryStrategy(self.strategy, self.factor, self.temperature, self.adaptive)


@dataclass
class RunConfig:
    train: TrainConfig
    eval: EvalConfig
    digest: str
    source: str | None = None

    @property
    def seed(self):
        return self.train.seed


def _check_types(section, table):
    schema = SCHEMA[section]
    where = f"[{section}]" if section else "top level"
    for key, value in table.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in {where}; allowed: {sorted(schema)}")
        expected = schema[key]
        ok = isinstance(value, expected) and not (isinstance(value, bool) and expected is not bool)
        if not ok:
            raise ConfigError(f"{where} key {key!r} has type {type(value).__name__}, expected {expected}")


def parse_config(text, source=None):
    """Build a ``RunConfig`` from TOML text. The digest covers the exact bytes."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source or 'config'}: {exc}") from None
    top = {k: v for k, v in data.items() if k not in SECTIONS}
    _check_types("", top)
    for name in SCHEMA:
        if name and name != "curriculum" and name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            _check_types(name, data[name])
    lessons = data.get("curriculum")
    if lessons is not None:
        if not isinstance(lessons, list) or not all(isinstance(x, dict) for x in lessons):
            raise ConfigError("curriculum must be an array of tables ([[curriculum]])")
        for lesson in lessons:
            _check_types("curriculum", lesson)
        lessons = [LessonSpec.from_dict(x) for x in lessons]

    task = dict(data.get("task", {}))
    kind = task.pop("kind", None)
    if kind is None:
        raise ConfigError("[task] kind is required")
    model, train = data.get("model", {}), data.get("train", {})
    try:
        tc = TrainConfig(task=kind, task_options=task, curriculum=lessons,
                         budget=BudgetPolicy.from_dict(data.get("budget", {})),
                         seed=top.get("seed", 0), **model, **train)
        ev = dict(data.get("eval", {}))
        ec = EvalConfig(adaptive=AdaptiveMemoryConfig(**data.get("adaptive", {})), **ev)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if ec.lesson is not None and not 1 <= ec.lesson <= len(tc.curriculum):
        raise ConfigError(f"[eval] lesson must be in 1..{len(tc.curriculum)}")
    digest = hashlib.sha256(text.encode()).hexdigest()
    return RunConfig(tc, ec, digest, source)


def load_config(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        text = raw.decode()
    except UnicodeDecodeError:
        raise ConfigError(f"config {path} is not UTF-8") from None
    return parse_config(text, str(path))


def default_config(task_kind, seed=0):
    """Configuration used when no ``--config`` is given."""
    text = f'seed = {int(seed)}\n\n[task]\nkind = "{task_kind}"\n'
    return parse_config(text, "<defaults>")
