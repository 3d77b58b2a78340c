"""Running one task instance through description, query, planning and answer phases."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import memory as mem
from .budget import extra_steps, planning_steps
from .errors import CapacityError, ConfigError, ShapeError

PHASES = ("description", "query", "planning", "answer")


@dataclass(frozen=True)
class EpisodeSchedule:
    description_len: int
    query_len: int
    planning_steps: int
    answer_len: int
    base_planning: int = 0
    extra_planning: int = 0

    def __post_init__(self):
        if min(self.description_len, self.query_len, self.planning_steps, self.answer_len) < 0:
            raise ConfigError("schedule lengths must be non-negative")

    @property
    def answer_start(self):
        return self.description_len + self.query_len + self.planning_steps

    @property
    def eoi_step(self):
        return self.description_len

    @property
    def total(self):
        return self.answer_start + self.answer_len

    def phase(self, t):
        if t < self.description_len:
            return "description"
        if t < self.description_len + self.query_len:
            return "query"
        if t < self.answer_start:
            return "planning"
        return "answer"


@dataclass(frozen=True)
class MemoryStrategy:
    """How the memory is sized at inference: fixed, extended once, or adaptive."""

    kind: str = "fixed"
    factor: int = 5
    temperature: float = 0.65
    adaptive: mem.AdaptiveMemoryConfig = field(default_factory=mem.AdaptiveMemoryConfig)

    def __post_init__(self):
        if self.kind not in ("fixed", "fixed-extended", "adaptive"):
            raise ConfigError(f"unknown memory strategy {self.kind!r}")

    def describe(self):
        if self.kind == "fixed-extended":
            return f"fixed-extended(x{self.factor}, tau={self.temperature})"
        return self.kind


def build_schedule(task, inst, policy, rng=None, answer_len=None):
    """Phase lengths for ``inst``; draws the stochastic extra once per episode."""
    base = planning_steps(policy, inst.meta)
    extra = 0 if policy.stochastic == "off" else extra_steps(policy, base, rng)
    return EpisodeSchedule(
        description_len=len(task.description(inst)),
        query_len=task.query_len,
        planning_steps=base + extra,
        answer_len=len(task.target_labels(inst)) if answer_len is None else answer_len,
        base_planning=base,
        extra_planning=extra,
    )


def phase_inputs(task, inst, schedule):
    """Inputs for every step before the answer phase, ``(answer_start, width)``."""
    width = task.input_width
    x = np.zeros((schedule.answer_start, width), dtype=np.float32)
    desc = task.description(inst)
    x[:len(desc), :task.data_width] = desc
    if task.query_len:
        x[len(desc):len(desc) + task.query_len, :task.data_width] = task.query(inst)
    if schedule.eoi_step < schedule.answer_start:
        x[schedule.eoi_step, width - 2] = 1
    return x


def split_heads(logits, heads):
    return torch.split(logits, list(heads), dim=-1)


def argmax_labels(logits, heads):
    return np.array([int(h.argmax()) for h in split_heads(logits, heads)], dtype=np.int64)


def mixed_feedback(task, inst, prev_logits, prev_target, mix_ratio, mode, rng):
    """Answer-phase echo: ground truth with probability ``mix_ratio`` (train only).

    Returns ``(data_vector, used_ground_truth)``.
    """
    use_truth = mode == "train" and rng.random() < mix_ratio
    labels = prev_target if use_truth else argmax_labels(prev_logits.detach(), task.output_heads)
    return task.feedback(inst, labels), use_truth


@dataclass
class EpisodeResult:
    logits: torch.Tensor  # (answer steps, output width)
    predicted: np.ndarray  # (answer steps, heads) argmax labels
    schedule: EpisodeSchedule
    timesteps: int
    trace: list = field(default_factory=list)
    final_cells: int = 0
    final_temperature: float = 1.0
    capacity_exhausted: bool = False

    def answer(self, task):
        return task.decode_labels(self.predicted)


def _trace_record(t, phase, state, sig, temperature, detail, cutoff):
    ms = state.memory
    rec = {
        "t": t,
        "phase": phase,
        "cells": ms.cells,
        "temperature": temperature,
        "allocated_fraction": ms.allocated_fraction(cutoff),
        "read_strengths": [float(b) for b in sig.read_strengths.detach()],
        "write_strength": float(sig.write_strength.detach()),
    }
    if detail == "full":
        rec["write_weighting"] = ms.write_weighting.detach().tolist()
        rec["read_weightings"] = ms.read_weightings.detach().tolist()
    return rec


def run_episode(model, task, inst, schedule, mode="train", mix_ratio=0.9, rng=None,
                strategy=None, max_answer_len=None, trace=None, strict_capacity=False,
                temperature_on_write=True):
    """Execute one episode.

    ``mode="train"`` runs exactly ``schedule.answer_len`` answer steps with
    mixed teacher forcing and keeps the autograd graph. ``mode="infer"``
    feeds back the model's own argmax under ``torch.no_grad`` and stops at
    the terminator or after ``max_answer_len`` steps.
    ``trace`` is ``None``, ``"stats"`` or ``"full"``.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be train or infer, got {mode!r}")
    if model.input_width != task.input_width or model.output_width != task.output_width:
        raise ShapeError(
            f"model widths ({model.input_width}, {model.output_width}) do not match task "
            f"({task.input_width}, {task.output_width})"
        )
    strategy = strategy or MemoryStrategy()
    rng = rng if rng is not None else np.random.default_rng(0)
    cutoff = strategy.adaptive.usage_cutoff
    dtype = model.dtype
    targets = task.target_labels(inst)
    if mode == "train":
        steps = schedule.answer_len
        if steps != len(targets):
            raise ShapeError(f"schedule answer_len {steps} != target length {len(targets)}")
    else:
        steps = max_answer_len or max(schedule.answer_len, 1)

    state = model.initial_state()
    temperature = 1.0
    if strategy.kind == "fixed-extended":
        state.memory, temperature = mem.adaptive_extend(
            state.memory, temperature, strategy.adaptive, mem.FixedExtension(strategy.factor, strategy.temperature))

    pre = torch.as_tensor(phase_inputs(task, inst, schedule), dtype=dtype)
    records = []
    exhausted = False
    logits_out, predicted = [], []
    width = task.input_width

    def advance(x, t, phase):
        nonlocal state, temperature, exhausted
        logits, state, sig = model.step(x, state, temperature, temperature_on_write)
        if trace:
            records.append(_trace_record(t, phase, state, sig, temperature, trace, cutoff))
        if strategy.kind == "adaptive":
            extended, temperature = mem.adaptive_extend(state.memory, temperature, strategy.adaptive)
            if extended is not state.memory:
                state.memory = extended
        elif state.memory.allocated_fraction(cutoff) >= 1.0:
            exhausted = True
            if strict_capacity:
                raise CapacityError(f"all {state.memory.cells} memory cells allocated at step {t}")
        return logits

    grad = torch.enable_grad() if mode == "train" else torch.no_grad()
    with grad:
        for t in range(schedule.answer_start):
            advance(pre[t], t, schedule.phase(t))
        prev_logits = None
        for k in range(steps):
            data = np.zeros(task.data_width, dtype=np.float32)
            if k > 0:
                data, _ = mixed_feedback(task, inst, prev_logits, targets[k - 1] if k - 1 < len(targets) else None,
                                         mix_ratio, mode, rng)
            x = torch.zeros(width, dtype=dtype)
            x[:task.data_width] = torch.as_tensor(data, dtype=dtype)
            x[width - 1] = 1
            if schedule.answer_start == schedule.eoi_step:
                x[width - 2] = 1 if k == 0 else 0
            logits = advance(x, schedule.answer_start + k, "answer")
            logits_out.append(logits)
            labels = argmax_labels(logits.detach(), task.output_heads)
            predicted.append(labels)
            prev_logits = logits
            if mode == "infer" and labels[0] == 0:
                break

    return EpisodeResult(
        logits=torch.stack(logits_out) if logits_out else torch.zeros(0, task.output_width, dtype=dtype),
        predicted=np.stack(predicted) if predicted else np.zeros((0, len(task.output_heads)), dtype=np.int64),
        schedule=schedule,
        timesteps=schedule.answer_start + len(logits_out),
        trace=records,
        final_cells=state.memory.cells,
        final_temperature=temperature,
        capacity_exhausted=exhausted,
    )


def _select(mask, new, old):
    """Per-episode choice between two batched states (``mask`` is ``(B,)`` bool)."""
    def pick(a, b):
        return torch.where(mask.view(-1, *([1] * (a.dim() - 1))), a, b)

    ms = mem.MemoryState(*(pick(getattr(new.memory, f), getattr(old.memory, f)) for f in mem.STATE_FIELDS),
                         extensions=new.memory.extensions)
    return type(new)(tuple(pick(a, b) for a, b in zip(new.controller, old.controller)), ms)


def run_batch(model, task, instances, schedules, mode="train", mix_ratio=0.9, rngs=None, max_answer_len=None,
              temperature=1.0, usage_cutoff=0.5):
    """Run several fixed-memory episodes side by side, one batched DNC step per timestep.

    Every episode receives exactly the inputs, feedback draws and stopping
    rule it would get from :func:`run_episode`; the batch only shares the
    arithmetic. Episodes start together, and an episode that has finished
    (shorter schedule, or terminator emitted at inference) keeps its state
    frozen while the others continue. Returns one :class:`EpisodeResult`
    per episode (without traces).
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be train or infer, got {mode!r}")
    if len(instances) != len(schedules) or not instances:
        raise ConfigError("run_batch needs one schedule per instance and at least one instance")
    if model.input_width != task.input_width or model.output_width != task.output_width:
        raise ShapeError(
            f"model widths ({model.input_width}, {model.output_width}) do not match task "
            f"({task.input_width}, {task.output_width})"
        )
    b_size = len(instances)
    rngs = rngs if rngs is not None else [np.random.default_rng(0) for _ in instances]
    targets = [task.target_labels(inst) for inst in instances]
    if mode == "train":
        steps = [s.answer_len for s in schedules]
        for s, tgt in zip(steps, targets):
            if s != len(tgt):
                raise ShapeError(f"schedule answer_len {s} != target length {len(tgt)}")
    else:
        steps = [max_answer_len or max(s.answer_len, 1) for s in schedules]
    pre = [phase_inputs(task, inst, s) for inst, s in zip(instances, schedules)]
    starts = [s.answer_start for s in schedules]
    ends = [a + k for a, k in zip(starts, steps)]
    width, dw = task.input_width, task.data_width

    state = model.initial_state(batch=b_size)
    logits_out = [[] for _ in instances]
    predicted = [[] for _ in instances]
    done = [False] * b_size
    exhausted = [False] * b_size
    grad = torch.enable_grad() if mode == "train" else torch.no_grad()
    with grad:
        for t in range(max(ends)):
            active = [not done[b] and t < ends[b] for b in range(b_size)]
            if not any(active):
                break
            x = np.zeros((b_size, width), dtype=np.float32)
            for b in range(b_size):
                if not active[b]:
                    continue
                if t < starts[b]:
                    x[b] = pre[b][t]
                    continue
                k = t - starts[b]
                if k > 0:
                    tgt = targets[b][k - 1] if k - 1 < len(targets[b]) else None
                    x[b, :dw], _ = mixed_feedback(task, instances[b], logits_out[b][-1], tgt, mix_ratio, mode, rngs[b])
                x[b, width - 1] = 1
                if starts[b] == schedules[b].eoi_step and k == 0:
                    x[b, width - 2] = 1
            logits, new_state, _ = model.step(torch.as_tensor(x, dtype=model.dtype), state, temperature)
            state = new_state if all(active) else _select(torch.tensor(active), new_state, state)
            full = ((state.memory.usage > usage_cutoff).sum(-1) == state.memory.cells).tolist()
            for b in range(b_size):
                if not active[b]:
                    continue
                exhausted[b] = exhausted[b] or full[b]
                if t < starts[b]:
                    continue
                labels = argmax_labels(logits[b].detach(), task.output_heads)
                logits_out[b].append(logits[b])
                predicted[b].append(labels)
                if mode == "infer" and labels[0] == 0:
                    done[b] = True

    return [
        EpisodeResult(
            logits=torch.stack(logits_out[b]) if logits_out[b] else torch.zeros(0, task.output_width, dtype=model.dtype),
            predicted=np.stack(predicted[b]) if predicted[b] else np.zeros((0, len(task.output_heads)), dtype=np.int64),
            schedule=schedules[b],
            timesteps=starts[b] + len(logits_out[b]),
            final_cells=state.memory.cells,
            final_temperature=temperature,
            capacity_exhausted=exhausted[b],
        )
        for b in range(b_size)
    ]
