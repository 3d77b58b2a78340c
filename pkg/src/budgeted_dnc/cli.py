"""Command-line entry point: ``budgeted-dnc <command> ...``.

Every invocation writes a run manifest (JSON) describing what ran, with
which configuration digest and seed, and which files it produced.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
import traceback
from datetime import datetime, timezone
from pathlib import Path

import torch

from . import eval as ev
from .budget import BudgetPolicy
from .config import default_config, load_config
from .episode import MemoryStrategy, build_schedule, run_episode
from .errors import BudgetedDNCError, ConfigError, DataError
from .seeding import derive_seed
from .tasks import TaskInstance
from .trainer import MetricsSink, Trainer, finetune_stochastic, load_checkpoint, worker_threads

log = logging.getLogger("budgeted_dnc")

MANIFEST_VERSION = 1


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    def __init__(self, command, argv, seed=None, digest=None, config=None):
        self.data = {
            "format_version": MANIFEST_VERSION,
            "command": command,
            "argv": list(argv),
            "seed": seed,
            "config_digest": digest,
            "config": config,
            "started": _now(),
            "finished": None,
            "status": "running",
            "exit_code": None,
            "error": None,
            "artifacts": {},
        }

    def set_config(self, run_config):
        self.data["seed"] = run_config.seed
        self.data["config_digest"] = run_config.digest
        self.data["config"] = {"train": run_config.train.to_dict(), "eval": _eval_dict(run_config.eval),
                               "source": run_config.source}

    def artifact(self, name, path):
        self.data["artifacts"][name] = str(path)
        return path

    def write(self, path, exit_code, error=None):
        self.data.update(finished=_now(), exit_code=exit_code, error=error,
                         status="ok" if exit_code == 0 else "failed")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


def _eval_dict(ec):
    return dataclasses.asdict(ec)


def _run_config(args, task_kind=None):
    if args.config:
        rc = load_config(args.config)
    elif task_kind:
        rc = default_config(task_kind, args.seed or 0)
    else:
        return None
    if args.seed is not None:
        rc.train.seed = args.seed
    return rc


def _checkpoint_config(args):
    ckpt = load_checkpoint(args.checkpoint)
    rc = load_config(args.config) if args.config else None
    if args.seed is not None:
        ckpt["config"].seed = args.seed
    return ckpt, rc


def _lesson(cfg, number):
    if number is None:
        return cfg.curriculum[-1], len(cfg.curriculum)
    if not 1 <= number <= len(cfg.curriculum):
        raise ConfigError(f"lesson must be in 1..{len(cfg.curriculum)}")
    return cfg.curriculum[number - 1], number


def _strategy(args, rc):
    base = rc.eval.memory_strategy() if rc else MemoryStrategy()
    if getattr(args, "strategy", None):
        return dataclasses.replace(base, kind=args.strategy)
    return base


# ---- commands --------------------------------------------------------------

def cmd_generate(args, manifest):
    rc = _run_config(args, args.task)
    if args.task and rc.train.task != args.task:
        raise ConfigError(f"--task {args.task} conflicts with config task {rc.train.task}")
    manifest.set_config(rc)
    cfg = rc.train
    task = cfg.make_task()
    lesson, number = _lesson(cfg, args.lesson)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        for i in range(args.count):
            inst = task.generate(lesson, derive_seed(cfg.seed, "gen", number, i), unique_target=args.unique,
                                 size=args.size, lesson_id=number)
            fh.write(inst.to_json() + "\n")
    manifest.artifact("dataset", out)
    print(f"wrote {args.count} instances to {out}")


def cmd_train(args, manifest):
    rc = _run_config(args, args.task)
    if rc is None:
        raise ConfigError("train needs --config or --task")
    if args.steps is not None:
        rc.train.max_steps = args.steps
    manifest.set_config(rc)
    out = Path(args.out)
    metrics = manifest.artifact("metrics", out / "metrics.jsonl")
    metrics.parent.mkdir(parents=True, exist_ok=True)
    metrics.unlink(missing_ok=True)
    trainer = Trainer(rc.train, metrics=MetricsSink(metrics), checkpoint_dir=out / "checkpoints")
    t0 = time.time()
    trainer.run()
    trainer.save(manifest.artifact("checkpoint", out / "checkpoints" / "final"))
    _training_figure(trainer.history, out, manifest)
    print(f"trained {trainer.step} steps in {time.time() - t0:.0f}s; lesson {trainer.lesson + 1}/"
          f"{len(rc.train.curriculum)}; last accuracy "
          f"{trainer.history[-1]['eval_accuracy'] if trainer.history else float('nan'):.3f}")


def _training_figure(history, out, manifest):
    if history:
        from .plotting import plot_training
        manifest.artifact("figure", plot_training(history, out / "training.png"))


def cmd_finetune(args, manifest):
    ckpt, rc = _checkpoint_config(args)
    cfg = rc.train if rc else ckpt["config"]
    manifest.data["seed"] = cfg.seed
    manifest.data["config"] = {"train": cfg.to_dict()}
    manifest.data["config_digest"] = rc.digest if rc else _digest(cfg.to_dict())
    out = Path(args.out)
    metrics = manifest.artifact("metrics", out / "metrics.jsonl")
    metrics.parent.mkdir(parents=True, exist_ok=True)
    metrics.unlink(missing_ok=True)
    trainer = finetune_stochastic(args.checkpoint, args.steps, args.mode, metrics, cfg)
    trainer.save(manifest.artifact("checkpoint", out / "checkpoints" / "final"))
    _training_figure(trainer.history, out, manifest)
    print(f"fine-tuned {args.steps} steps ({args.mode}); now at step {trainer.step}")


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _eval_setup(args, manifest):
    ckpt, rc = _checkpoint_config(args)
    cfg = ckpt["config"]
    manifest.data["seed"] = cfg.seed
    manifest.data["config"] = {"train": cfg.to_dict(), "eval": _eval_dict(rc.eval) if rc else None}
    manifest.data["config_digest"] = rc.digest if rc else _digest(cfg.to_dict())
    model = ckpt["model"].eval()
    task = cfg.make_task()
    lesson_number = args.lesson or (rc.eval.lesson if rc else None)
    lesson, _ = _lesson(cfg, lesson_number)
    return cfg, rc, model, task, lesson


def cmd_eval_sweep(args, manifest):
    cfg, rc, model, task, lesson = _eval_setup(args, manifest)
    ecfg = rc.eval if rc else ev_defaults()
    sizes = args.n or ecfg.sizes
    if not sizes:
        raise ConfigError("eval-sweep needs sizes (--n or [eval] sizes)")
    p_range = range(args.p_min if args.p_min is not None else ecfg.p_min,
                    (args.p_max if args.p_max is not None else ecfg.p_max) + 1,
                    args.p_stride or ecfg.p_stride)
    episodes = args.episodes or ecfg.episodes
    strategy = _strategy(args, rc)
    rows, curves, stars = [], {}, {}
    for n in sizes:
        curve = ev.sweep_An(model, task, int(n), lesson, p_range, episodes, strategy, seed=cfg.seed,
                            max_answer_len=cfg.max_answer_len(), threads=ecfg.threads or worker_threads(),
                            unique_target=ecfg.unique_target)
        rows += curve.rows
        curves[int(n)] = curve.points
        stars[int(n)] = ev.p_star(curve)
        print(f"n={n}: p*={_fmt_pstar(stars[int(n)])} max acc={max(curve.accuracies):.3f}")
    out = Path(args.out)
    ev.write_rows(rows, manifest.artifact("curves_csv", out / "curves.csv"),
                  manifest.artifact("curves_jsonl", out / "curves.jsonl"))
    star_rows = [{"task": task.name, "n": n, "p_star": _fmt_pstar(s)} for n, s in stars.items()]
    _write_csv(manifest.artifact("pstar_csv", out / "pstar.csv"), star_rows, ["task", "n", "p_star"])
    from .plotting import plot_curves
    manifest.artifact("figure", plot_curves(curves, stars, out / "curves.png", title=task.name))


def ev_defaults():
    from .config import EvalConfig
    return EvalConfig()


def _fmt_pstar(value):
    return "undefined" if value is None else value


def _write_csv(path, rows, fields):
    import csv
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return path


def cmd_pstar(args, manifest):
    data = Path(args.curve).read_bytes() if Path(args.curve).exists() else b""
    manifest.data["config_digest"] = hashlib.sha256(data).hexdigest()
    curves = ev.read_curves(args.curve)
    results = {n: ev.p_star(points) for n, points in curves.items()}
    if len(results) == 1 and None in results:
        print(_fmt_pstar(results[None]))
    else:
        for n, s in sorted(results.items(), key=lambda kv: (kv[0] is None, kv[0])):
            print(f"{n}\t{_fmt_pstar(s)}")
    if args.out:
        rows = [{"n": "" if n is None else n, "p_star": _fmt_pstar(s)} for n, s in results.items()]
        _write_csv(manifest.artifact("pstar_csv", Path(args.out) / "pstar.csv"), rows, ["n", "p_star"])


def _budget_override(args, cfg):
    if args.budget is None:
        return cfg.budget
    kind, _, value = args.budget.partition(":")
    if kind == "constant":
        return BudgetPolicy("constant", c=int(value or 0))
    if kind == "linear":
        return BudgetPolicy("linear", k=float(value or 1.0))
    return BudgetPolicy(kind)


def cmd_generalize(args, manifest):
    cfg, rc, model, task, lesson = _eval_setup(args, manifest)
    ecfg = rc.eval if rc else ev_defaults()
    sizes = args.sizes or ecfg.sizes
    if not sizes:
        raise ConfigError("generalize needs sizes (--sizes or [eval] sizes)")
    policy = _budget_override(args, cfg)
    kinds = args.strategy or [ecfg.strategy]
    base = rc.eval.memory_strategy() if rc else MemoryStrategy()
    rows = []
    for kind in kinds:
        strategy = dataclasses.replace(base, kind=kind)
        part = ev.generalization_sweep(model, task, [int(n) for n in sizes], lesson, policy, strategy,
                                       args.episodes or ecfg.episodes, cfg.seed, cfg.max_answer_len(),
                                       ecfg.threads or worker_threads(), ecfg.unique_target, args.strict_capacity)
        for r in part:
            print(f"{strategy.describe()} n={r['n']}: acc={r['accuracy']:.3f} N={r['memory_N']} tau={r['tau']:.3f}")
        rows += part
    out = Path(args.out)
    ev.write_rows(rows, manifest.artifact("generalization_csv", out / "generalization.csv"),
                  manifest.artifact("generalization_jsonl", out / "generalization.jsonl"))
    from .plotting import plot_beta, plot_generalization
    manifest.artifact("figure", plot_generalization(rows, out / "generalization.png"))
    first = [r for r in rows if r["strategy"] == rows[0]["strategy"]]
    manifest.artifact("beta_figure", plot_beta(first, out / "beta.png"))


def _read_instances(path):
    out = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(TaskInstance.from_record(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i}: {exc}") from None
    return out


def cmd_infer(args, manifest):
    ckpt, rc = _checkpoint_config(args)
    cfg = ckpt["config"]
    manifest.data["seed"] = cfg.seed
    manifest.data["config"] = {"train": cfg.to_dict()}
    manifest.data["config_digest"] = rc.digest if rc else _digest(cfg.to_dict())
    model = ckpt["model"].eval()
    task = cfg.make_task()
    instances = _read_instances(args.input)
    strategy = _strategy(args, rc)
    policy = _budget_override(args, cfg).with_stochastic("off")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pred_path = manifest.artifact("predictions", out / "predictions.jsonl")
    trace_path = manifest.artifact("trace", out / "trace.jsonl") if args.trace else None
    hits = 0
    with pred_path.open("w") as pf, (trace_path.open("w") if trace_path else _Null()) as tf:
        for k, inst in enumerate(instances):
            if inst.kind != task.name:
                raise DataError(f"instance {k} is a {inst.kind} task, checkpoint is {task.name}")
            sched = build_schedule(task, inst, policy)
            with torch.no_grad():
                res = run_episode(model, task, inst, sched, mode="infer", strategy=strategy,
                                  max_answer_len=cfg.max_answer_len(), trace=args.trace,
                                  strict_capacity=args.strict_capacity)
            answer = res.answer(task)
            correct = bool(task.check_answer(inst, answer))
            hits += correct
            pf.write(json.dumps({"index": k, "seed": inst.seed, "prediction": answer, "target": inst.target,
                                 "correct": correct, "timesteps": res.timesteps,
                                 "planning_steps": sched.planning_steps, "memory_N": res.final_cells,
                                 "tau": res.final_temperature}, sort_keys=True) + "\n")
            for rec in res.trace:
                tf.write(json.dumps({"episode": k, **rec}, sort_keys=True) + "\n")
    print(f"{hits}/{len(instances)} correct")


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def write(self, _):
        pass


# ---- parser ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--config", default=None, help="TOML run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="budgeted-dnc", description="Planning-budget experiments for DNC models.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write task instances as JSON lines")
    g.add_argument("--task", default=None)
    g.add_argument("--lesson", type=int, default=None, help="1-based curriculum lesson (default: last)")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--size", type=int, default=None, help="force instance size n")
    g.add_argument("--unique", action="store_true", help="only instances with a unique answer")
    g.add_argument("--out", required=True, help="output .jsonl file")

    t = sub.add_parser("train", parents=[common], help="curriculum training")
    t.add_argument("--task", default=None)
    t.add_argument("--steps", type=int, default=None, help="cap on optimizer steps")
    t.add_argument("--out", required=True, help="run directory")

    f = sub.add_parser("finetune", parents=[common], help="continue training with stochastic planning")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--steps", type=int, required=True)
    f.add_argument("--mode", choices=["geometric", "deterministic_expected", "off"], default="geometric")
    f.add_argument("--out", required=True)

    e = sub.add_parser("eval-sweep", parents=[common], help="accuracy against planning budget A_n(p)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--n", type=int, nargs="+", default=None, help="input sizes")
    e.add_argument("--lesson", type=int, default=None)
    e.add_argument("--p-min", type=int, default=None)
    e.add_argument("--p-max", type=int, default=None)
    e.add_argument("--p-stride", type=int, default=None)
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--strategy", choices=["fixed", "fixed-extended", "adaptive"], default=None)
    e.add_argument("--out", required=True)

    s = sub.add_parser("pstar", parents=[common], help="empirical planning budget from a curve file")
    s.add_argument("--curve", required=True, help="CSV or JSONL with p and accuracy columns")
    s.add_argument("--out", default=None)

    gen = sub.add_parser("generalize", parents=[common], help="accuracy across input sizes")
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--sizes", type=int, nargs="+", default=None)
    gen.add_argument("--lesson", type=int, default=None)
    gen.add_argument("--episodes", type=int, default=None)
    gen.add_argument("--strategy", nargs="+", choices=["fixed", "fixed-extended", "adaptive"], default=None)
    gen.add_argument("--budget", default=None, help="inference budget, e.g. constant:10, linear:1, quadratic")
    gen.add_argument("--strict-capacity", action="store_true", help="fail when fixed memory fills up")
    gen.add_argument("--out", required=True)

    i = sub.add_parser("infer", parents=[common], help="run a checkpoint on instances")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True, help="instances .jsonl from generate")
    i.add_argument("--strategy", choices=["fixed", "fixed-extended", "adaptive"], default=None)
    i.add_argument("--budget", default=None)
    i.add_argument("--trace", choices=["stats", "full"], default=None)
    i.add_argument("--strict-capacity", action="store_true")
    i.add_argument("--out", required=True)
    return p


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "finetune": cmd_finetune, "eval-sweep": cmd_eval_sweep,
    "pstar": cmd_pstar, "generalize": cmd_generalize, "infer": cmd_infer,
}


def manifest_path(args):
    if args.command == "generate":
        out = Path(args.out)
        return out.with_name(out.name + ".manifest.json")
    if args.command == "pstar" and not args.out:
        curve = Path(args.curve)
        return curve.with_name(curve.name + ".pstar.manifest.json")
    return Path(args.out) / "manifest.json"


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(argv)  # usage errors exit with 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    torch.set_num_threads(1)
    manifest = RunManifest(args.command, argv, seed=args.seed)
    code, error = 0, None
    try:
        COMMANDS[args.command](args, manifest)
    except BudgetedDNCError as exc:
        code, error = exc.exit_code, f"{type(exc).__name__}: {exc}"
        print(f"error: {exc}", file=sys.stderr)
    except Exception as exc:  # still leave a manifest behind
        code, error = 1, f"{type(exc).__name__}: {exc}"
        traceback.print_exc()
    try:
        manifest.write(manifest_path(args), code, error)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        code = code or 3
    return code


if __name__ == "__main__":
    sys.exit(main())
