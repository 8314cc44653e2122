"""Figure rendering for training and benchmark reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curve(steps, losses, lrs, path: str | Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(steps, losses, lw=1.0, color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax2 = ax.twinx()
    ax2.plot(steps, lrs, lw=1.0, color="tab:orange", alpha=0.6, label="lr")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_bench_figure(frames, wall_ms, path: str | Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.scatter(frames, wall_ms, s=18, color="tab:blue")
    ax.set_xlabel("output frames")
    ax.set_ylabel("wall time (ms)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
