"""Figures written next to the CSV/JSONL outputs. Not used by the core library."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training(records, path):
    """Eval accuracy and training loss against step, lesson changes shaded."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    steps = [r["step"] for r in records]
    ax1.plot(steps, [r["eval_accuracy"] for r in records], marker=".")
    ax1.set_ylabel("eval accuracy")
    ax1.set_ylim(-0.02, 1.02)
    ax2.plot(steps, [r["train_loss"] for r in records], color="tab:red")
    ax2.set_ylabel("train loss")
    ax2.set_xlabel("step")
    for a, b in zip(records, records[1:]):
        if b["lesson"] != a["lesson"]:
            for ax in (ax1, ax2):
                ax.axvline(b["step"], color="grey", lw=0.6, ls=":")
    return _save(fig, path)


def plot_curves(curves, pstars, path, title=None):
    """A_n(p) per size with p* marked. ``curves`` maps n -> [(p, acc), ...]."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for n in sorted(curves, key=lambda x: (x is None, x)):
        ps, accs = zip(*curves[n])
        line, = ax.plot(ps, accs, label=f"n={n}")
        ps_star = pstars.get(n)
        if ps_star is not None:
            ax.axvline(ps_star, color=line.get_color(), ls="--", lw=0.8)
    ax.set_xlabel("planning steps p")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_generalization(rows, path):
    """Accuracy against input size, one line per memory strategy."""
    fig, ax = plt.subplots(figsize=(7, 4))
    by_strategy = {}
    for r in rows:
        by_strategy.setdefault(r.get("strategy", "fixed"), []).append(r)
    for name, rs in by_strategy.items():
        rs = sorted(rs, key=lambda r: r["n"])
        ax.plot([r["n"] for r in rs], [r["accuracy"] for r in rs], marker="o", label=name)
    ax.set_xlabel("input size n")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize="small")
    return _save(fig, path)


def _num(v):
    return float("nan") if v is None else v


def plot_beta(rows, path, phases=("description", "planning", "answer")):
    """Mean read strength per phase against input size, with std error bars."""
    fig, ax = plt.subplots(figsize=(7, 4))
    rows = sorted(rows, key=lambda r: r["n"])
    for ph in phases:
        ax.errorbar([r["n"] for r in rows], [_num(r[f"beta_mean_{ph}"]) for r in rows],
                    yerr=[_num(r[f"beta_std_{ph}"]) for r in rows], marker="o", capsize=3, label=ph)
    ax.set_xlabel("input size n")
    ax.set_ylabel("read strength")
    ax.legend(fontsize="small")
    return _save(fig, path)
