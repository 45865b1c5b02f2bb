"""Solution figures for the command-line report path.

Everything renders through the Agg backend so runs work headless, and
PNGs are written without an embedded creation date so identical inputs
produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .problem import DualTrajectory, OCProblem, Trajectory

__all__ = ["save_primal_figure", "save_dual_figure"]

_SAVE = {"dpi": 120, "metadata": {"Date": None}}


def _legend_name(name: str, unit: str) -> str:
    return f"{name} [{unit}]" if unit else name


def save_primal_figure(tr: Trajectory, p: OCProblem, path: str) -> None:
    """States and controls against time, one panel each."""
    rows = 2 if p.nu else 1
    fig, axes = plt.subplots(rows, 1, figsize=(7.0, 2.8 * rows), sharex=True)
    axes = np.atleast_1d(axes)
    for i, name in enumerate(p.state_names):
        axes[0].plot(tr.t, tr.states[:, i],
                     label=_legend_name(name, p.units.state_units[i]))
    axes[0].set_ylabel("states")
    axes[0].legend(loc="best", fontsize="small")
    axes[0].grid(alpha=0.3)
    if p.nu:
        for i, name in enumerate(p.control_names):
            axes[1].plot(tr.t, tr.controls[:, i],
                         label=_legend_name(name, p.units.control_units[i]))
        axes[1].set_ylabel("controls")
        axes[1].legend(loc="best", fontsize="small")
        axes[1].grid(alpha=0.3)
    axes[-1].set_xlabel(f"t ({tr.label})")
    fig.suptitle(p.name or "trajectory")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_dual_figure(
    d: DualTrajectory, t: np.ndarray, p: OCProblem, path: str
) -> None:
    """Costates and the Hamiltonian value against time."""
    fig, axes = plt.subplots(2, 1, figsize=(7.0, 5.6), sharex=True)
    for i, name in enumerate(p.state_names):
        axes[0].plot(t, d.costates[:, i], label=f"lam_{name}")
    axes[0].set_ylabel("costates")
    axes[0].legend(loc="best", fontsize="small")
    axes[0].grid(alpha=0.3)
    axes[1].plot(t, d.hamiltonian, color="tab:red")
    axes[1].set_ylabel("Hamiltonian")
    axes[1].set_xlabel(f"t ({d.label})")
    axes[1].grid(alpha=0.3)
    fig.suptitle(p.name or "dual trajectory")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
