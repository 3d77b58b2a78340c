"""External memory of the DNC: storage, addressing and runtime extension.

The memory matrix is ``(N, C)`` and per-head quantities carry a head axis,
e.g. read weightings are ``(m, N)``. Every function also accepts any number
of leading batch axes (``(B, N, C)``, ``(B, m, N)``, ...), which is how
several episodes run in one step. They work in any floating dtype and are
differentiable almost everywhere (the free-list sort in :func:`allocation`
is treated as a constant permutation).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import torch

from .errors import CapacityError, ConfigError, DataError, ShapeError

EPS = 1e-8


def cosine_similarity(keys, memory):
    """Cosine similarity between each key row and each memory row.

    ``keys`` is ``(..., h, C)`` or ``(..., C)`` against memory ``(..., N, C)``;
    the result is ``(..., h, N)`` or ``(..., N)``. Zero keys or zero rows
    score 0 thanks to the ``EPS`` guard.
    """
    single = keys.dim() < memory.dim()
    if single:
        keys = keys.unsqueeze(-2)
    dots = keys @ memory.transpose(-1, -2)
    key_norm = keys.norm(dim=-1, keepdim=True)
    mem_norm = memory.norm(dim=-1).unsqueeze(-2)
    sim = dots / (key_norm * mem_norm + EPS)
    return sim.squeeze(-2) if single else sim


def _content_weights(keys, strengths, memory, temperature=1.0):
    scores = cosine_similarity(keys, memory)
    return torch.softmax(scores * (strengths / temperature).unsqueeze(-1), dim=-1)


def content_address(key, strength, memory, temperature=1.0):
    """Content-based weighting ``softmax(cos(key, M) * strength / temperature)``.

    A temperature below one sharpens the distribution; ``temperature=1``
    reproduces the plain DNC lookup exactly.
    """
    key = torch.as_tensor(key, dtype=memory.dtype)
    strength = torch.as_tensor(strength, dtype=memory.dtype)
    if key.shape[-1] != memory.shape[-1]:
        raise ShapeError(f"key width {key.shape[-1]} != word size {memory.shape[-1]}")
    if not (torch.isfinite(key).all() and torch.isfinite(strength).all()):
        raise DataError("content_address: key and strength must be finite")
    if not temperature > 0 or not math.isfinite(temperature):
        raise DataError(f"temperature must be positive and finite, got {temperature}")
    return _content_weights(key, strength, memory, temperature)


def read(memory, weighting):
    """Read vector(s) ``M^T w`` for a weighting ``(..., N)`` or ``(..., m, N)``."""
    if weighting.shape[-1] != memory.shape[-2]:
        raise ShapeError(f"weighting over {weighting.shape[-1]} cells, memory has {memory.shape[-2]}")
    if weighting.dim() < memory.dim():
        return (weighting.unsqueeze(-2) @ memory).squeeze(-2)
    return weighting @ memory


def write(memory, write_weighting, erase, value):
    """Erase-then-add update ``M * (1 - w e^T) + w v^T``."""
    *batch, n, c = memory.shape
    if (write_weighting.shape != (*batch, n) or erase.shape != (*batch, c) or value.shape != (*batch, c)):
        raise ShapeError(
            f"write: memory {tuple(memory.shape)}, weighting {tuple(write_weighting.shape)}, "
            f"erase {tuple(erase.shape)}, value {tuple(value.shape)}"
        )
    w = write_weighting.unsqueeze(-1)
    return memory * (1 - w * erase.unsqueeze(-2)) + w * value.unsqueeze(-2)


def update_usage(usage, free_gates, prev_read_weightings, prev_write_weighting):
    retention = torch.prod(1 - free_gates.unsqueeze(-1) * prev_read_weightings, dim=-2)
    return (usage + prev_write_weighting - usage * prev_write_weighting) * retention


def allocation(usage):
    """Sorted free-list allocation weighting.

    Cells are visited in ascending usage order (stable, so ties go to the
    lower index) and cell ``phi_j`` receives ``(1 - u[phi_j]) * prod_{i<j} u[phi_i]``.
    """
    _, order = torch.sort(usage.detach(), dim=-1, stable=True)
    sorted_usage = usage.gather(-1, order)
    ones = torch.ones_like(usage[..., :1])
    exclusive = torch.cumprod(torch.cat([ones, sorted_usage[..., :-1]], dim=-1), dim=-1)
    weights_sorted = (1 - sorted_usage) * exclusive
    return torch.zeros_like(usage).scatter(-1, order, weights_sorted)


def dynamic_allocation(usage, free_gates, prev_read_weightings, prev_write_weighting):
    """Return ``(new_usage, allocation_weighting)``."""
    new_usage = update_usage(usage, free_gates, prev_read_weightings, prev_write_weighting)
    return new_usage, allocation(new_usage)


def temporal_addressing(link, precedence, write_weighting, prev_read_weightings):
    """Update the link matrix and precedence, then derive directional weightings.

    Returns ``(link', precedence', forward, backward)`` where
    ``forward = L' w`` and ``backward = L'^T w`` for every previous read
    weighting ``w``.
    """
    w = write_weighting
    n = w.shape[-1]
    scale = 1 - w.unsqueeze(-1) - w.unsqueeze(-2)
    new_link = scale * link + w.unsqueeze(-1) * precedence.unsqueeze(-2)
    new_link = new_link * (1 - torch.eye(n, dtype=link.dtype, device=link.device))
    new_precedence = (1 - w.sum(-1, keepdim=True)) * precedence + w
    forward = prev_read_weightings @ new_link.transpose(-1, -2)
    backward = prev_read_weightings @ new_link
    return new_link, new_precedence, forward, backward


def read_weighting(modes, content, forward, backward):
    """Mix backward / content / forward weightings with modes ``(m, 3)``."""
    return modes[..., 0:1] * backward + modes[..., 1:2] * content + modes[..., 2:3] * forward


STATE_FIELDS = ("memory", "usage", "precedence", "link", "write_weighting", "read_weightings", "read_values")


@dataclass
class MemoryState:
    memory: torch.Tensor
    usage: torch.Tensor
    precedence: torch.Tensor
    link: torch.Tensor
    write_weighting: torch.Tensor
    read_weightings: torch.Tensor
    read_values: torch.Tensor
    extensions: int = 0

    @classmethod
    def initial(cls, cells, word_size, read_heads, dtype=torch.float32, batch=None):
        lead = () if batch is None else (batch,)
        z = lambda *shape: torch.zeros(*lead, *shape, dtype=dtype)  # noqa: E731
        return cls(
            memory=z(cells, word_size),
            usage=z(cells),
            precedence=z(cells),
            link=z(cells, cells),
            write_weighting=z(cells),
            read_weightings=z(read_heads, cells),
            read_values=z(read_heads, word_size),
        )

    @property
    def cells(self):
        return self.memory.shape[-2]

    @property
    def word_size(self):
        return self.memory.shape[-1]

    def allocated_fraction(self, cutoff=0.5):
        return float((self.usage > cutoff).sum()) / self.cells

    def detach(self):
        return dataclasses.replace(
            self, **{f.name: getattr(self, f.name).detach() for f in dataclasses.fields(self) if f.name != "extensions"}
        )

    def check(self, tol=1e-6):
        """Raise ``AssertionError`` if any range or sum invariant is broken."""
        for name, w in (("write", self.write_weighting.unsqueeze(0)), ("read", self.read_weightings),
                        ("precedence", self.precedence.unsqueeze(0))):
            assert (w >= -tol).all() and (w <= 1 + tol).all(), f"{name} weighting out of [0, 1]"
            assert (w.sum(-1) <= 1 + tol).all(), f"{name} weighting sums above 1"
        assert (self.usage >= -tol).all() and (self.usage <= 1 + tol).all(), "usage out of [0, 1]"
        assert (self.link.diagonal() == 0).all(), "link diagonal not zero"
        assert (self.link >= -tol).all() and (self.link <= 1 + tol).all(), "link out of [0, 1]"
        assert (self.link.sum(0) <= 1 + tol).all() and (self.link.sum(1) <= 1 + tol).all(), "link sums above 1"

    def extend(self, factor):
        """Return a copy with ``factor`` times as many cells; new cells are blank."""
        if factor < 1 or int(factor) != factor:
            raise ConfigError(f"extension factor must be a positive integer, got {factor}")
        extra = self.cells * (int(factor) - 1)

        def pad(t, dims):  # dims counted from the end: 1 = last axis
            pads = []
            for d in range(1, t.dim() + 1):
                pads += [0, extra if d in dims else 0]
            return torch.nn.functional.pad(t, pads)

        return MemoryState(
            memory=pad(self.memory, {2}),
            usage=pad(self.usage, {1}),
            precedence=pad(self.precedence, {1}),
            link=pad(self.link, {1, 2}),
            write_weighting=pad(self.write_weighting, {1}),
            read_weightings=pad(self.read_weightings, {1}),
            read_values=self.read_values,
            extensions=self.extensions + 1,
        )


@dataclass(frozen=True)
class AdaptiveMemoryConfig:
    alloc_threshold: float = 0.65
    growth_factor: int = 2
    temp_factor: float = 0.85
    usage_cutoff: float = 0.5
    max_extensions: int = 6

    def __post_init__(self):
        if not 0 < self.alloc_threshold < 1:
            raise ConfigError("alloc_threshold must lie in (0, 1)")
        if self.growth_factor < 2:
            raise ConfigError("growth_factor must be >= 2")
        if not 0 < self.temp_factor <= 1:
            raise ConfigError("temp_factor must lie in (0, 1]")
        if self.max_extensions < 0:
            raise ConfigError("max_extensions must be >= 0")


@dataclass(frozen=True)
class FixedExtension:
    """Extend once, up front, by ``factor`` and use ``temperature`` throughout."""

    factor: int = 5
    temperature: float = 0.65


def adaptive_extend(state, temperature, cfg=AdaptiveMemoryConfig(), mode="auto"):
    """Grow memory when the allocated fraction crosses the threshold.

    ``mode`` is ``"auto"`` or a :class:`FixedExtension`. Returns
    ``(state', temperature')``; the input state is never modified.
    """
    if isinstance(mode, FixedExtension):
        if state.extensions >= max(cfg.max_extensions, 1):
            raise CapacityError(f"memory already extended {state.extensions} times")
        return state.extend(mode.factor), mode.temperature
    if mode != "auto":
        raise ConfigError(f"unknown extension mode {mode!r}")
    if state.allocated_fraction(cfg.usage_cutoff) <= cfg.alloc_threshold:
        return state, temperature
    if state.extensions >= cfg.max_extensions:
        raise CapacityError(
            f"allocated fraction {state.allocated_fraction(cfg.usage_cutoff):.3f} exceeds "
            f"{cfg.alloc_threshold} after {state.extensions} extensions (N={state.cells})"
        )
    return state.extend(cfg.growth_factor), temperature * cfg.temp_factor
