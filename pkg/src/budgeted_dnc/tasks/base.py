"""Shared task plumbing: instances, lessons and the codec interface."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from ..errors import ConfigError, DataError

RANGE_FIELDS = ("nodes", "degree", "path_length", "clusters", "cut", "max_degree", "items", "digits", "points")


@dataclass(frozen=True)
class LessonSpec:
    """Parameter ranges for one curriculum lesson; ``None`` means unused."""

    nodes: tuple | None = None
    degree: tuple | None = None
    path_length: tuple | None = None
    clusters: tuple | None = None
    cut: tuple | None = None
    max_degree: tuple | None = None
    items: tuple | None = None
    digits: tuple | None = None
    points: tuple | None = None

    def __post_init__(self):
        for name in RANGE_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, (int, float)):
                value = (value, value)
            value = tuple(value)
            if len(value) != 2 or value[0] > value[1]:
                raise ConfigError(f"lesson range {name}={value} must be (min, max) with min <= max")
            object.__setattr__(self, name, value)

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"lesson is missing ranges: {missing}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(RANGE_FIELDS)
        if unknown:
            raise ConfigError(f"unknown lesson keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {f.name: list(getattr(self, f.name)) for f in fields(self) if getattr(self, f.name) is not None}


def sample_range(rng, bounds):
    lo, hi = bounds
    if isinstance(lo, float) or isinstance(hi, float):
        return float(rng.uniform(lo, hi))
    return int(rng.integers(lo, hi + 1))


@dataclass
class TaskInstance:
    kind: str
    seed: int
    lesson: int | None
    raw: dict
    query: list | None
    target: list
    meta: dict
    _oracle: object = field(default=None, repr=False, compare=False)

    @property
    def size(self):
        return self.meta["n"]

    def to_record(self):
        return {"kind": self.kind, "seed": self.seed, "lesson": self.lesson, "raw": self.raw,
                "query": self.query, "target": self.target, "meta": self.meta}

    def to_json(self):
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_record(cls, rec):
        keys = {"kind", "seed", "lesson", "raw", "query", "target", "meta"}
        if not isinstance(rec, dict) or set(rec) != keys:
            raise DataError(f"instance record must be an object with keys {sorted(keys)}")
        return cls(**rec)


class Task:
    """Codec + generator + oracle for one algorithmic task.

    Input vectors are ``[data channels..., <eoi>, <ans>]``. Outputs are one
    or more categorical heads; label 0 on head 0 is the terminator.
    """

    name = ""
    data_width = 0
    output_heads: tuple = ()
    query_len = 0

    @property
    def input_width(self):
        return self.data_width + 2

    @property
    def output_width(self):
        return sum(self.output_heads)

    def default_curriculum(self):
        raise NotImplementedError

    def generate(self, lesson, seed, unique_target=False, size=None, lesson_id=None):
        raise NotImplementedError

    def description(self, inst):
        """Data channels of the description phase, ``(len, data_width)``."""
        raise NotImplementedError

    def query(self, inst):
        return np.zeros((self.query_len, self.data_width), dtype=np.float32)

    def answer_labels(self, answer):
        """Class labels per answer step, ``(len, heads)``, without terminator."""
        raise NotImplementedError

    def labels_to_answer(self, labels):
        raise NotImplementedError

    def feedback(self, inst, labels):
        """Data channels that echo one answer step back to the model."""
        raise NotImplementedError

    def canonical(self, answer):
        raise NotImplementedError

    def compute_oracle(self, inst):
        raise NotImplementedError

    def max_target_len(self, lesson):
        raise NotImplementedError

    def target_labels(self, inst):
        rows = self.answer_labels(inst.target)
        term = np.zeros((1, len(self.output_heads)), dtype=np.int64)
        return np.concatenate([rows.reshape(-1, len(self.output_heads)), term]).astype(np.int64)

    def oracle_answers(self, inst):
        if inst._oracle is None:
            inst._oracle = self.compute_oracle(inst)
        return inst._oracle

    def check_answer(self, inst, prediction):
        try:
            key = self.canonical(prediction)
        except (TypeError, ValueError):
            return False
        return key is not None and key in self.oracle_answers(inst)

    def encode(self, inst):
        """Full description + query input, ``(len, input_width)``; eoi on the query onset."""
        desc = self.description(inst)
        query = self.query(inst)
        seq = np.zeros((len(desc) + len(query), self.input_width), dtype=np.float32)
        seq[:len(desc), :self.data_width] = desc
        seq[len(desc):, :self.data_width] = query
        return seq

    def decode_labels(self, labels):
        """Strip everything from the first terminator and map to an answer."""
        rows = []
        for row in np.asarray(labels).reshape(-1, len(self.output_heads)):
            if row[0] == 0:
                break
            rows.append(row)
        return self.labels_to_answer(np.array(rows, dtype=np.int64).reshape(-1, len(self.output_heads)))
