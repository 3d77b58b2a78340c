"""Planning-budget policies: how many zero-input steps an instance gets."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

KINDS = ("constant", "linear", "quadratic", "edges_times_nodes")
STOCHASTIC = ("off", "geometric", "deterministic_expected")


@dataclass(frozen=True)
class BudgetPolicy:
    kind: str = "constant"
    c: int = 10
    k: float = 1.0
    stochastic: str = "off"
    confidence: float = 0.95

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown budget kind {self.kind!r}; expected one of {KINDS}")
        if self.stochastic not in STOCHASTIC:
            raise ConfigError(f"unknown stochastic mode {self.stochastic!r}; expected one of {STOCHASTIC}")
        if self.c < 0 or int(self.c) != self.c:
            raise ConfigError("constant budget c must be a non-negative integer")
        if not self.k > 0:
            raise ConfigError("linear coefficient k must be positive")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {"kind", "c", "k", "stochastic", "confidence"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown budget keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "k": self.k,
                "stochastic": self.stochastic, "confidence": self.confidence}

    def with_stochastic(self, mode):
        return BudgetPolicy(self.kind, self.c, self.k, mode, self.confidence)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def planning_steps(policy, meta):
    """Base budget p(n) for an instance described by ``meta`` (needs ``n``)."""
    n = meta["n"]
    if policy.kind == "constant":
        return int(policy.c)
    if policy.kind == "linear":
        return _round_half_up(policy.k * n)
    if policy.kind == "quadratic":
        return n * n
    try:
        return meta["nodes"] * meta["edges"]
    except KeyError:
        raise ConfigError("edges_times_nodes budget needs graph metadata (nodes, edges)") from None


def stop_probability(base_steps, confidence=0.95):
    """q such that a Geometric(q) draw is <= ``base_steps`` with probability ``confidence``."""
    if base_steps < 1:
        raise ConfigError("stochastic planning needs a base budget of at least one step")
    return 1 - (1 - confidence) ** (1 / base_steps)


def extra_steps(policy, base_steps, rng):
    """Additional planning steps on top of ``base_steps``.

    Geometric draws live on {1, 2, ...}. ``deterministic_expected`` returns the
    rounded mean ``1/q`` of that distribution.
    """
    if policy.stochastic == "off":
        return 0
    q = stop_probability(base_steps, policy.confidence)
    if policy.stochastic == "deterministic_expected":
        return _round_half_up(1 / q)
    return int(rng.geometric(q))


def total_planning_steps(policy, meta, rng=None):
    base = planning_steps(policy, meta)
    if policy.stochastic == "off":
        return base
    return base + extra_steps(policy, base, rng)
