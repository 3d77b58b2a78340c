"""Curriculum training with answer-phase loss, teacher forcing and FLOP accounting."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import pickle
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .budget import BudgetPolicy
from .controller import interface_size
from .dnc import DNC
from .episode import build_schedule, run_batch, split_heads
from .errors import CheckpointError, ConfigError, DivergenceError, ShapeError
from .seeding import derive_seed
from .tasks import DEFAULT_HIDDEN, DEFAULT_MEMORY, LessonSpec, make_task

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
EVAL_BATCH = 50
DTYPES = {"float32": torch.float32, "float64": torch.float64}


def worker_threads():
    try:
        return max(1, int(os.environ.get("BUDGETED_DNC_THREADS", "1")))
    except ValueError:
        raise ConfigError("BUDGETED_DNC_THREADS must be an integer") from None


def sequence_loss(logits, targets, heads):
    """Summed cross-entropy over answer steps and output heads."""
    targets = torch.as_tensor(np.asarray(targets), dtype=torch.long)
    if logits.dim() != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"logits {tuple(logits.shape)} and targets {tuple(targets.shape)} differ in length")
    if targets.shape[1] != len(heads) or logits.shape[1] != sum(heads):
        raise ShapeError(f"heads {heads} do not match logits {tuple(logits.shape)} / targets {tuple(targets.shape)}")
    total = logits.new_zeros(())
    for h, part in enumerate(split_heads(logits, heads)):
        total = total + F.cross_entropy(part, targets[:, h], reduction="sum")
    return total


def per_step_flops(cells, word_size, hidden, read_heads, input_width=0, output_width=0):
    """Forward-pass multiply/add count of one DNC timestep.

    LSTM gates over ``[x; reads; h]``, the interface and output projections,
    ``m + 1`` cosine lookups, allocation (including the sort), the erase/add
    write, the ``N x N`` link update with forward/backward products for each
    read head, and the reads themselves.
    """
    n, c, h, m = cells, word_size, hidden, read_heads
    x, y = input_width, output_width
    controller = 8 * h * (x + m * c + h) + 12 * h
    projections = 2 * h * interface_size(c, m) + 2 * h * y + 2 * (y + m * c) * y
    lookups = (m + 1) * (4 * n * c + 4 * n)
    allocation = 2 * m * n + 4 * n + int(n * math.log2(max(n, 2)))
    write = 4 * n * c
    links = 6 * n * n + 4 * m * n * n
    reads = 5 * m * n + 2 * m * n * c
    return controller + projections + lookups + allocation + write + links + reads


@dataclass
class FlopCounter:
    per_step_flops: int
    total_timesteps: int = 0

    def add(self, timesteps):
        if timesteps < 0:
            raise ValueError("timestep increments must be non-negative")
        self.total_timesteps += int(timesteps)

    def estimate(self):
        return self.total_timesteps * self.per_step_flops


@dataclass
class TrainConfig:
    task: str = "associative-recall"
    task_options: dict = field(default_factory=dict)
    curriculum: list | None = None
    budget: BudgetPolicy = field(default_factory=BudgetPolicy)
    cells: int | None = None
    word_size: int | None = None
    hidden: int | None = None
    read_heads: int = 2
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    clip_norm: float = 10.0
    mix_ratio: float = 0.9
    eval_every: int = 1000
    advance_threshold: float = 0.80
    eval_size: int = 200
    final_lesson_steps: int = 100_000
    max_steps: int | None = None
    stop_accuracy: float | None = None
    accumulate: int = 1
    unique_target: bool = True
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        task = make_task(self.task, **self.task_options)
        if self.curriculum is None:
            self.curriculum = task.default_curriculum()
        self.curriculum = [c if isinstance(c, LessonSpec) else LessonSpec.from_dict(c) for c in self.curriculum]
        if isinstance(self.budget, dict):
            self.budget = BudgetPolicy.from_dict(self.budget)
        cells, word = DEFAULT_MEMORY[self.task]
        self.cells = self.cells or cells
        self.word_size = self.word_size or word
        self.hidden = self.hidden or DEFAULT_HIDDEN[self.task]
        if not self.curriculum:
            raise ConfigError("curriculum must contain at least one lesson")
        if self.eval_every <= 0:
            raise ConfigError("eval_every must be positive")
        if not 0 < self.advance_threshold < 1:
            raise ConfigError("advance_threshold must lie in (0, 1)")
        if not 0 <= self.mix_ratio <= 1:
            raise ConfigError("mix_ratio must lie in [0, 1]")
        if self.optimizer not in ("adam", "rmsprop", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if self.accumulate < 1 or self.eval_size < 1 or self.final_lesson_steps < 0:
            raise ConfigError("accumulate and eval_size must be >= 1, final_lesson_steps >= 0")

    def make_task(self):
        return make_task(self.task, **self.task_options)

    def make_model(self):
        task = self.make_task()
        torch.manual_seed(derive_seed(self.seed, "init"))
        model = DNC(task.input_width, task.output_width, self.cells, self.word_size, self.read_heads, self.hidden)
        return model.to(DTYPES[self.dtype])

    def max_answer_len(self):
        return 2 * self.make_task().max_target_len(self.curriculum[-1])

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["budget"] = self.budget.to_dict()
        d["curriculum"] = [c.to_dict() for c in self.curriculum]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


class MetricsSink:
    """Append-only JSON-lines writer, safe for concurrent callers."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    def emit(self, record):
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            self.records.append(record)
            if self.path:
                with self.path.open("a") as fh:
                    fh.write(line + "\n")


def evaluate_instances(model, task, instances, policy, max_answer_len, batch_size=EVAL_BATCH):
    """Fraction of ``instances`` answered exactly, using free-running decoding.

    Episodes run ``batch_size`` at a time through :func:`run_batch`.
    """
    policy = policy.with_stochastic("off")
    hits = 0
    for lo in range(0, len(instances), batch_size):
        chunk = instances[lo:lo + batch_size]
        scheds = [build_schedule(task, inst, policy) for inst in chunk]
        results = run_batch(model, task, chunk, scheds, mode="infer", max_answer_len=max_answer_len)
        hits += sum(bool(task.check_answer(inst, r.answer(task))) for inst, r in zip(chunk, results))
    return hits / len(instances)


class Trainer:
    """Owns the model, the optimizer and all curriculum counters."""

    def __init__(self, config, model=None, metrics=None, checkpoint_dir=None):
        self.config = config
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.task = config.make_task()
        self.model = model or config.make_model()
        self.optimizer = self._make_optimizer()
        self.counter = FlopCounter(per_step_flops(
            config.cells, config.word_size, config.hidden, config.read_heads,
            self.task.input_width, self.task.output_width))
        self.metrics = metrics or MetricsSink()
        self.step = 0
        self.lesson = 0
        self.final_steps = 0
        self.loss_sum = 0.0
        self.loss_count = 0
        self.history = []
        self.episode_log = []
        self._eval_cache = {}

    def _make_optimizer(self):
        cfg = self.config
        params = self.model.parameters()
        if cfg.optimizer == "adam":
            return torch.optim.Adam(params, lr=cfg.learning_rate)
        if cfg.optimizer == "rmsprop":
            return torch.optim.RMSprop(params, lr=cfg.learning_rate, momentum=0.9)
        return torch.optim.SGD(params, lr=cfg.learning_rate)

    def eval_set(self, lesson):
        if lesson not in self._eval_cache:
            spec = self.config.curriculum[lesson]
            self._eval_cache[lesson] = [
                self.task.generate(spec, derive_seed(self.config.seed, "eval", lesson, i), lesson_id=lesson + 1)
                for i in range(self.config.eval_size)
            ]
        return self._eval_cache[lesson]

    def evaluate(self, lesson=None):
        lesson = self.lesson if lesson is None else lesson
        return evaluate_instances(self.model, self.task, self.eval_set(lesson), self.config.budget,
                                  self.config.max_answer_len())

    def episodes(self, indices):
        """Generate, schedule and run training episodes ``indices`` as one batch.

        Returns ``(losses, results)``. Every timestep an episode executes is
        added to the FLOP counter here.
        """
        cfg = self.config
        insts = [self.task.generate(cfg.curriculum[self.lesson], derive_seed(cfg.seed, "train", i),
                                    unique_target=cfg.unique_target, lesson_id=self.lesson + 1) for i in indices]
        scheds = [build_schedule(self.task, inst, cfg.budget, np.random.default_rng(derive_seed(cfg.seed, "budget", i)))
                  for inst, i in zip(insts, indices)]
        rngs = [np.random.default_rng(derive_seed(cfg.seed, "feedback", i)) for i in indices]
        results = run_batch(self.model, self.task, insts, scheds, "train", cfg.mix_ratio, rngs)
        losses = []
        for inst, sched, res in zip(insts, scheds, results):
            losses.append(sequence_loss(res.logits, self.task.target_labels(inst), self.task.output_heads))
            self.episode_log.append((sched.description_len, sched.query_len, sched.planning_steps, len(res.logits)))
            self.counter.add(res.timesteps)
        return losses, results

    def episode(self, index):
        """Run training episode ``index`` alone; returns ``(loss, result)``."""
        losses, results = self.episodes([index])
        return losses[0], results[0]

    @property
    def finished(self):
        cfg = self.config
        if cfg.max_steps is not None and self.step >= cfg.max_steps:
            return True
        last = self.lesson == len(cfg.curriculum) - 1
        if last and self.final_steps >= cfg.final_lesson_steps:
            return True
        if cfg.stop_accuracy is not None and last and self.history:
            rec = self.history[-1]
            return rec["lesson"] == self.lesson + 1 and rec["eval_accuracy"] >= cfg.stop_accuracy
        return False

    def train_step(self):
        cfg = self.config
        self.optimizer.zero_grad()
        losses, _ = self.episodes([self.step * cfg.accumulate + j for j in range(cfg.accumulate)])
        loss = torch.stack(losses).sum()
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {self.step}", self._divergence_checkpoint())
        (loss / cfg.accumulate).backward()
        total = loss.item()
        norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.clip_norm)
        if not torch.isfinite(norm):
            raise DivergenceError(f"non-finite gradient at step {self.step}", self._divergence_checkpoint())
        self.optimizer.step()
        self.step += 1
        if self.lesson == len(cfg.curriculum) - 1:
            self.final_steps += 1
        self.loss_sum += total / cfg.accumulate
        self.loss_count += 1
        if self.step % cfg.eval_every == 0:
            self._evaluate_and_advance()

    def _evaluate_and_advance(self):
        acc = self.evaluate()
        rec = {
            "step": self.step,
            "lesson": self.lesson + 1,
            "train_loss": self.loss_sum / max(self.loss_count, 1),
            "eval_accuracy": acc,
            "total_timesteps": self.counter.total_timesteps,
            "flops_estimate": self.counter.estimate(),
        }
        self.loss_sum, self.loss_count = 0.0, 0
        self.history.append(rec)
        self.metrics.emit(rec)
        log.info("step %d lesson %d loss %.4f acc %.3f", self.step, self.lesson + 1, rec["train_loss"], acc)
        if acc > self.config.advance_threshold and self.lesson < len(self.config.curriculum) - 1:
            self.lesson += 1

    def run(self, steps=None):
        """Train until the curriculum finishes (or for ``steps`` more updates)."""
        target = None if steps is None else self.step + steps
        while not self.finished and (target is None or self.step < target):
            self.train_step()
        return self.history

    # checkpoints ---------------------------------------------------------

    def state(self):
        return {
            "step": self.step,
            "lesson": self.lesson,
            "final_steps": self.final_steps,
            "loss_sum": self.loss_sum,
            "loss_count": self.loss_count,
            "total_timesteps": self.counter.total_timesteps,
            "per_step_flops": self.counter.per_step_flops,
        }

    def save(self, path):
        save_checkpoint(path, self.model, self.config, self.state(), self.optimizer)

    def _divergence_checkpoint(self):
        """Persist the last finite parameters (no update has been applied yet)."""
        if self.checkpoint_dir is None:
            return {k: v.detach().clone() for k, v in self.model.state_dict().items()}
        path = self.checkpoint_dir / f"diverged-step{self.step}"
        self.save(path)
        return path

    @classmethod
    def resume(cls, path, config=None, metrics=None, checkpoint_dir=None):
        """Rebuild a trainer from a checkpoint; ``config`` may override the stored one."""
        ckpt = load_checkpoint(path, config)
        trainer = cls(ckpt["config"], ckpt["model"], metrics, checkpoint_dir)
        st = ckpt["state"]
        trainer.step, trainer.lesson, trainer.final_steps = st["step"], st["lesson"], st["final_steps"]
        trainer.loss_sum, trainer.loss_count = st["loss_sum"], st["loss_count"]
        trainer.counter.total_timesteps = st["total_timesteps"]
        if ckpt["optimizer"] is not None:
            trainer.optimizer.load_state_dict(ckpt["optimizer"])
        return trainer


def train(config, metrics_path=None, checkpoint_dir=None):
    """Run the full curriculum described by ``config``; returns the trainer."""
    trainer = Trainer(config, metrics=MetricsSink(metrics_path), checkpoint_dir=checkpoint_dir)
    trainer.run()
    if checkpoint_dir:
        trainer.save(Path(checkpoint_dir) / "final")
    return trainer


def finetune_stochastic(checkpoint, steps, stochastic="geometric", metrics_path=None, config=None):
    """Continue training from ``checkpoint`` with extra planning steps per episode.

    ``stochastic`` is ``"geometric"``, ``"deterministic_expected"`` (the
    control condition) or ``"off"`` (plain continued training).
    """
    ckpt_cfg = config or load_checkpoint(checkpoint)["config"]
    cfg = dataclasses.replace(ckpt_cfg, budget=ckpt_cfg.budget.with_stochastic(stochastic))
    trainer = Trainer.resume(checkpoint, cfg, MetricsSink(metrics_path))
    trainer.config.max_steps = None
    target = trainer.step + steps
    while trainer.step < target:
        trainer.train_step()
    return trainer


def save_checkpoint(path, model, config, state, optimizer=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path / "params.pt")
    if optimizer is not None:
        torch.save(optimizer.state_dict(), path / "optimizer.pt")
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "widths": model.widths(),
        "config": config.to_dict(),
        "state": state,
        "parameters": {k: list(v.shape) for k, v in model.state_dict().items()},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path, config=None):
    """Load a checkpoint directory. Returns ``{"model", "config", "state", "optimizer"}``."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{path} has no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest in {path}: {exc}") from None
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format {manifest.get('format_version')} is not supported (expected {CHECKPOINT_VERSION})")
    config = config or TrainConfig.from_dict(manifest["config"])
    model = config.make_model()
    expected = model.widths()
    if manifest["widths"] != expected:
        diff = {k: (manifest["widths"].get(k), v) for k, v in expected.items() if manifest["widths"].get(k) != v}
        raise CheckpointError(f"checkpoint widths do not match config: {diff}")
    try:
        params = torch.load(path / "params.pt", weights_only=True)
        model.load_state_dict(params)
    except (RuntimeError, EOFError, OSError, KeyError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read parameters from {path}: {exc}") from None
    optimizer = None
    if (path / "optimizer.pt").exists():
        try:
            optimizer = torch.load(path / "optimizer.pt", weights_only=True)
        except (RuntimeError, EOFError, OSError, pickle.UnpicklingError) as exc:
            raise CheckpointError(f"cannot read optimizer state from {path}: {exc}") from None
    return {"model": model, "config": config, "state": manifest["state"], "optimizer": optimizer}
