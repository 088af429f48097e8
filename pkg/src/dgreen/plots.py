"""Figure rendering for the report path.

Figures are written next to the delimited output; the CSV remains the
machine contract.  Uses the Agg backend so batch runs need no display.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trajectory import Trajectory

__all__ = ["trajectory_figure", "convergence_figure", "comparison_figure"]


def trajectory_figure(traj: Trajectory, path, title: str = "") -> None:
    fig, (ax_re, ax_im) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for j in range(traj.n):
        ax_re.plot(traj.times, traj.values[:, j].real, label=f"Re x_{j + 1}")
        ax_im.plot(traj.times, traj.values[:, j].imag, label=f"Im x_{j + 1}")
    ax_re.set_ylabel("Re x")
    ax_im.set_ylabel("Im x")
    ax_im.set_xlabel("t")
    ax_re.legend(loc="best", fontsize=8)
    ax_im.legend(loc="best", fontsize=8)
    if title:
        ax_re.set_title(title)
    ax_re.grid(alpha=0.3)
    ax_im.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def convergence_figure(corrections, path, title: str = "iteration corrections") -> None:
    corrections = np.asarray(corrections, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(1, len(corrections) + 1), np.maximum(corrections, 1e-300), "o-")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("correction norm")
    ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def comparison_figure(traj_a: Trajectory, traj_b: Trajectory, path,
                      labels=("solution", "oracle")) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    for j in range(traj_a.n):
        ax.plot(traj_a.times, np.abs(traj_a.values[:, j]),
                label=f"|{labels[0]} x_{j + 1}|")
    for j in range(traj_b.n):
        ax.plot(traj_b.times, np.abs(traj_b.values[:, j]), "--",
                label=f"|{labels[1]} x_{j + 1}|")
    ax.set_xlabel("t")
    ax.set_ylabel("|x|")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
