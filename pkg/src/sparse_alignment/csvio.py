"""Trajectory and table CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dynamics import NONE, SEVERAL, Trajectory

SIG_DIGITS = 17


def fmt_float(a) -> str:
    """Positional decimal with 17 significant digits (round-trips exactly)."""
    return np.format_float_positional(float(a), precision=SIG_DIGITS, unique=False, fractional=False, trim="-")
BASE_COLUMNS = ("t", "sqrtV", "gammaX", "X", "active_agent", "control_l1l2_norm")


def trajectory_columns(N: int, d: int) -> list:
    cols = list(BASE_COLUMNS)
    cols += [f"x_{i}_{k}" for i in range(1, N + 1) for k in range(1, d + 1)]
    cols += [f"v_{i}_{k}" for i in range(1, N + 1) for k in range(1, d + 1)]
    return cols


def _agent_label(a: int) -> int:
    # 1-based agent numbers, -1 for no control and 0 for several agents at once
    if a == NONE:
        return -1
    if a == SEVERAL:
        return 0
    return int(a) + 1


def _rows(traj: Trajectory, stride: int) -> np.ndarray:
    idx = np.arange(0, traj.times.size, stride)
    if idx[-1] != traj.times.size - 1:
        idx = np.append(idx, traj.times.size - 1)
    return idx


def write_trajectory_csv(traj: Trajectory, path, stride: int = 1) -> Path:
    """One row per stored node (every ``stride``-th plus the last).

    Floats are written in positional notation with 17 significant digits, so reading back reproduces them
    exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    K, N, d = traj.x.shape
    norms = traj.control_norms()
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_columns(N, d))
        for k in _rows(traj, stride):
            row = [fmt_float(traj.times[k]), fmt_float(np.sqrt(traj.V[k])), fmt_float(traj.gamma[k]), fmt_float(traj.X[k]),
                   str(_agent_label(int(traj.active[k]))), fmt_float(norms[k])]
            row += [fmt_float(a) for a in traj.x[k].ravel()]
            row += [fmt_float(a) for a in traj.v[k].ravel()]
            w.writerow(row)
    return path


def read_trajectory_csv(path) -> dict:
    """Columns of a trajectory file plus ``x`` and ``v`` as ``(K, N, d)`` arrays."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [row for row in r if row]
    if tuple(header[: len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise ValueError(f"{path}: not a trajectory file")
    arr = np.array(data, dtype=float) if data else np.empty((0, len(header)))
    out = {name: arr[:, j] for j, name in enumerate(header[: len(BASE_COLUMNS)])}
    out["active_agent"] = out["active_agent"].astype(int)
    xs = [h for h in header if h.startswith("x_")]
    N = max(int(h.split("_")[1]) for h in xs)
    d = max(int(h.split("_")[2]) for h in xs)
    base = len(BASE_COLUMNS)
    out["x"] = arr[:, base : base + N * d].reshape(-1, N, d)
    out["v"] = arr[:, base + N * d : base + 2 * N * d].reshape(-1, N, d)
    return out


def write_table_csv(rows: list, path) -> Path:
    """Write a list of dicts sharing keys; floats with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0].keys()) if rows else []
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in keys])
    return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)
