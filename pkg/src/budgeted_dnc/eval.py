"""Accuracy-vs-planning curves, empirical budgets and size-generalization sweeps."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .budget import BudgetPolicy
from .episode import MemoryStrategy, build_schedule, run_episode
from .errors import ConfigError, DataError
from .seeding import derive_seed
from .trainer import worker_threads

COLUMNS = ["task", "n", "p", "accuracy", "episodes", "memory_N", "tau", "beta_mean", "beta_std", "alloc_frac_mean"]
PHASES = ("description", "query", "planning", "answer")
DEFAULT_P_RANGE = range(0, 301, 5)


@dataclass
class AccuracyCurve:
    task: str
    n: int
    points: list  # (p, accuracy), p strictly increasing
    episodes_per_point: int
    seed: int = 0
    rows: list = field(default_factory=list)

    def __post_init__(self):
        ps = [p for p, _ in self.points]
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise DataError("curve p values must be strictly increasing")
        if any(not 0 <= a <= 1 for _, a in self.points):
            raise DataError("accuracies must lie in [0, 1]")

    @property
    def p_values(self):
        return [p for p, _ in self.points]

    @property
    def accuracies(self):
        return [a for _, a in self.points]


def p_star(curve):
    """Smallest p whose accuracy exceeds 90% of the curve maximum.

    Accepts an ``AccuracyCurve`` or ``(p, accuracy)`` pairs. The comparison is
    strict, so an all-zero curve has no answer and ``None`` is returned.
    """
    points = curve.points if isinstance(curve, AccuracyCurve) else [tuple(x) for x in curve]
    if not points:
        raise DataError("p* needs a non-empty curve")
    best = max(a for _, a in points)
    for p, a in sorted(points):
        if a > 0.9 * best:
            return int(p)
    return None


class PhaseStats:
    """Running mean/std of per-step read strengths, per phase and overall.

    Keeps only sums so that long sweeps need no per-step storage.
    """

    def __init__(self):
        self.moments = {ph: np.zeros(3) for ph in PHASES}  # count, sum, sum of squares
        self.alloc = np.zeros(2)

    def add(self, trace):
        for rec in trace:
            b = np.asarray(rec["read_strengths"], dtype=np.float64)
            self.moments[rec["phase"]] += (b.size, b.sum(), (b * b).sum())
            self.alloc += (1, rec["allocated_fraction"])
        return self

    def merge(self, other):
        for ph in PHASES:
            self.moments[ph] += other.moments[ph]
        self.alloc += other.alloc
        return self

    @staticmethod
    def _mean_std(m):
        if m[0] == 0:
            return None, None  # phase absent (e.g. p = 0)
        mean = m[1] / m[0]
        return float(mean), float(np.sqrt(max(m[2] / m[0] - mean * mean, 0.0)))

    def summary(self):
        out = {}
        out["beta_mean"], out["beta_std"] = self._mean_std(sum(self.moments.values()))
        out["alloc_frac_mean"] = float(self.alloc[1] / self.alloc[0]) if self.alloc[0] else None
        for ph, m in self.moments.items():
            out[f"beta_mean_{ph}"], out[f"beta_std_{ph}"] = self._mean_std(m)
        return out


def sweep_instances(task, lesson, n, episodes, seed, unique_target=True):
    """Evaluation instances of size ``n``; the same seeds are reused for every p."""
    return [task.generate(lesson, derive_seed(seed, "eval", "size", n, i), unique_target=unique_target, size=n)
            for i in range(episodes)]


def _run_jobs(fn, jobs, threads):
    threads = threads or worker_threads()
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _summarise(task, n, p, outcomes):
    stats = PhaseStats()
    for o in outcomes:
        stats.merge(o["stats"])
    row = {
        "task": task.name,
        "n": n,
        "p": p,
        "accuracy": sum(o["correct"] for o in outcomes) / len(outcomes),
        "episodes": len(outcomes),
        "memory_N": max(o["cells"] for o in outcomes),
        "tau": min(o["tau"] for o in outcomes),
        **stats.summary(),
        "capacity_exhausted": sum(o["exhausted"] for o in outcomes),
    }
    return row


def _episode_outcome(model, task, inst, schedule, strategy, max_answer_len, runner, strict_capacity):
    res = runner(model, task, inst, schedule, mode="infer", strategy=strategy, max_answer_len=max_answer_len,
                 trace="stats", strict_capacity=strict_capacity)
    return {
        "correct": bool(task.check_answer(inst, res.answer(task))),
        "cells": res.final_cells,
        "tau": res.final_temperature,
        "exhausted": res.capacity_exhausted,
        "stats": PhaseStats().add(res.trace),
    }


def sweep_An(model, task, n, lesson, p_range=DEFAULT_P_RANGE, episodes=100, strategy=None, seed=0,
             max_answer_len=None, threads=None, unique_target=True, runner=run_episode):
    """A_n(p) over ``p_range`` with constant planning budgets.

    Every p point sees the same ``episodes`` instances; jobs are keyed by
    ``(p, index)`` so results do not depend on the thread count.
    """
    p_values = sorted(set(int(p) for p in p_range))
    if not p_values or p_values[0] < 0:
        raise ConfigError("p_range must contain non-negative budgets")
    strategy = strategy or MemoryStrategy()
    instances = sweep_instances(task, lesson, n, episodes, seed, unique_target)
    max_answer_len = max_answer_len or 2 * task.max_target_len(lesson)

    def job(key):
        p, i = key
        sched = build_schedule(task, instances[i], BudgetPolicy("constant", c=p))
        return _episode_outcome(model, task, instances[i], sched, strategy, max_answer_len, runner, False)

    keys = [(p, i) for p in p_values for i in range(len(instances))]
    results = dict(zip(keys, _run_jobs(job, keys, threads)))
    rows = [_summarise(task, n, p, [results[(p, i)] for i in range(len(instances))]) for p in p_values]
    return AccuracyCurve(task.name, n, [(r["p"], r["accuracy"]) for r in rows], episodes, seed, rows)


def generalization_sweep(model, task, sizes, lesson, policy, strategy=None, episodes=100, seed=0,
                         max_answer_len=None, threads=None, unique_target=True, strict_capacity=False,
                         runner=run_episode):
    """Accuracy per input size under ``policy`` (the inference planning budget).

    ``p`` in each row is the mean planning budget over the size's episodes.
    With ``strict_capacity`` a fixed memory that fills up raises a capacity error.
    """
    strategy = strategy or MemoryStrategy()
    policy = policy.with_stochastic("off")
    max_answer_len = max_answer_len or 2 * task.max_target_len(lesson)
    rows = []
    for n in sizes:
        instances = sweep_instances(task, lesson, int(n), episodes, seed, unique_target)
        schedules = [build_schedule(task, inst, policy) for inst in instances]

        def job(i):
            return _episode_outcome(model, task, instances[i], schedules[i], strategy, max_answer_len, runner,
                                    strict_capacity)

        outcomes = _run_jobs(job, list(range(len(instances))), threads)
        row = _summarise(task, int(n), float(np.mean([s.planning_steps for s in schedules])), outcomes)
        row["strategy"] = strategy.describe()
        rows.append(row)
    return rows


# ---- persistence -----------------------------------------------------------

def _fieldnames(rows):
    extra = []
    for r in rows:
        extra += [k for k in r if k not in COLUMNS and k not in extra]
    return COLUMNS + extra


def write_rows(rows, csv_path=None, jsonl_path=None):
    if csv_path:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_fieldnames(rows))
            writer.writeheader()
            writer.writerows(rows)
    if jsonl_path:
        Path(jsonl_path).parent.mkdir(parents=True, exist_ok=True)
        with open(jsonl_path, "w") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_curves(path):
    """Load ``(p, accuracy)`` curves from a CSV or JSON-lines file, grouped by ``n``."""
    path = Path(path)
    try:
        if path.suffix == ".jsonl":
            rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        else:
            with path.open(newline="") as fh:
                rows = list(csv.DictReader(fh))
    except (OSError, json.JSONDecodeError, csv.Error) as exc:
        raise DataError(f"cannot read curve {path}: {exc}") from None
    curves = {}
    try:
        for r in rows:
            n = r.get("n")
            n = int(float(n)) if n not in (None, "") else None
            curves.setdefault(n, []).append((int(float(r["p"])), float(r["accuracy"])))
    except (KeyError, ValueError) as exc:
        raise DataError(f"curve {path} needs numeric p and accuracy columns: {exc}") from None
    if not curves:
        raise DataError(f"curve {path} is empty")
    return {n: sorted(pts) for n, pts in curves.items()}
