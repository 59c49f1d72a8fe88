"""Figures for trajectories and strategy comparisons, written to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dynamics import Trajectory  # noqa: E402

_STYLE = {"figure.figsize": (6.4, 4.0), "axes.grid": True, "grid.alpha": 0.3, "savefig.dpi": 120}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_threshold(traj: Trajectory, path, label: str = "") -> Path:
    """``sqrt(V)`` against the threshold ``gamma(X)``; the entry time is marked."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(traj.times, traj.sqrtV, label=r"$\sqrt{V}$")
        if np.all(np.isfinite(traj.gamma)):
            ax.plot(traj.times, traj.gamma, "--", label=r"$\gamma(X)$")
        if traj.entry_time is not None:
            ax.axvline(traj.entry_time, color="k", lw=0.8, alpha=0.6)
        ax.set_xlabel("t")
        ax.set_yscale("log")
        ax.set_title(label or "disagreement and threshold")
        ax.legend()
        return _save(fig, path)


def plot_consensus_parameters(traj: Trajectory, path) -> Path:
    """Every component of every agent's consensus parameter over time."""
    with plt.rc_context(_STYLE):
        d = traj.v.shape[2]
        fig, axes = plt.subplots(d, 1, sharex=True, squeeze=False, figsize=(6.4, 2.4 * d + 0.8))
        for k in range(d):
            ax = axes[k, 0]
            ax.plot(traj.times, traj.v[:, :, k], lw=0.8)
            ax.set_ylabel(f"v[{k + 1}]")
        axes[-1, 0].set_xlabel("t")
        return _save(fig, path)


def plot_control(traj: Trajectory, path) -> Path:
    """Control norm per agent as a heat strip, plus the total."""
    with plt.rc_context(_STYLE):
        norms = np.linalg.norm(traj.u, axis=2)
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, gridspec_kw={"height_ratios": [2, 1]})
        extent = (traj.times[0], traj.times[-1], 0.5, traj.N + 0.5)
        a1.imshow(norms.T, aspect="auto", origin="lower", extent=extent, interpolation="nearest", cmap="Greys")
        a1.set_ylabel("agent")
        a1.grid(False)
        a2.plot(traj.times, norms.sum(axis=1))
        a2.set_xlabel("t")
        a2.set_ylabel(r"$\sum_i \|u_i\|$")
        return _save(fig, path)


def plot_comparison(trajs: dict, path) -> Path:
    """``sqrt(V)`` of several runs on one axis."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for name, tr in trajs.items():
            (line,) = ax.plot(tr.times, tr.sqrtV, label=name)
            if tr.entry_time is not None:
                ax.axvline(tr.entry_time, color=line.get_color(), lw=0.8, ls=":")
        ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel(r"$\sqrt{V}$")
        ax.legend()
        return _save(fig, path)


def trajectory_figures(traj: Trajectory, csv_path, label: str = "") -> list:
    """Write the standard figures next to ``csv_path``; return their paths."""
    base = Path(csv_path)
    stem = base.with_suffix("")
    return [
        plot_threshold(traj, f"{stem}_threshold.png", label),
        plot_consensus_parameters(traj, f"{stem}_consensus.png"),
        plot_control(traj, f"{stem}_control.png"),
    ]
