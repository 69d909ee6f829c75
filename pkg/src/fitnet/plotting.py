"""Figures for evaluation reports (rendered off-screen to files)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport  # noqa: E402

MARKERS = ("o", "s", "^", "D", "v", "P", "X")


def _metric_figure(reports: Sequence[EvalReport], metric: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for i, rep in enumerate(reports):
        table = getattr(rep, metric)
        ks = sorted(table)
        ax.plot(ks, [table[k] for k in ks], marker=MARKERS[i % len(MARKERS)], label=rep.method)
    ax.set_xlabel("k")
    ax.set_ylabel(ylabel)
    ax.set_xscale("log")
    if reports:
        ks = sorted(getattr(reports[0], metric))
        ax.set_xticks(ks)
        ax.set_xticklabels([str(k) for k in ks])
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False, fontsize="small")
    fig.tight_layout()
    return fig


def plot_loss_history(history: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(range(1, len(history) + 1), history, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def write_report_figures(reports: Sequence[EvalReport], directory: str | Path) -> list[Path]:
    """Hit rate and precision against k, one PNG each. Returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for metric, label, name in (
        ("hit_rate", "HitRate@k", "hitrate.png"),
        ("precision", "Precision@k", "precision.png"),
    ):
        fig = _metric_figure(reports, metric, label)
        # no Software tag, so identical reports give identical bytes
        fig.savefig(d / name, dpi=120, metadata={"Software": None})
        plt.close(fig)
        out.append(d / name)
    return out
