"""Feedback laws, the C1-C4 state partition and admissibility."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TIE_TOL, AgentCloud, CommKernel, dispersion, gamma_threshold, perp_norms

ADMISSIBLE_TOL = 1e-12


@dataclass(frozen=True)
class ControlVector:
    u: np.ndarray
    M: float

    @property
    def l1l2(self) -> float:
        return float(np.linalg.norm(self.u, axis=-1).sum())

    @property
    def support(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(np.any(self.u != 0.0, axis=1)))


@dataclass(frozen=True)
class RegionLabel:
    label: str
    indices: tuple


def admissibility_check(u: ControlVector) -> bool:
    """``sum_i ||u_i|| <= M`` up to ``1e-12``."""
    return u.l1l2 <= u.M + ADMISSIBLE_TOL


def _maximizers(norms: np.ndarray) -> tuple[float, tuple]:
    m = float(norms.max())
    tied = np.flatnonzero(norms >= m - TIE_TOL * m)
    return m, tuple(int(i) for i in tied)


def _region(x: np.ndarray, v: np.ndarray, kernel: CommKernel) -> tuple[str, tuple, np.ndarray, float]:
    norms = perp_norms(v)
    g = gamma_threshold(float(dispersion(x)), kernel, x.shape[0])
    m, tied = _maximizers(norms)
    tol = TIE_TOL * max(m, g)
    if m < g - tol:
        return "C1", (), norms, g
    if abs(m - g) <= tol:
        return "C2", tied, norms, g
    return ("C3" if len(tied) == 1 else "C4"), tied, norms, g


def classify_region(cloud: AgentCloud, kernel: CommKernel) -> RegionLabel:
    """Place the state in C1 (below threshold), C2 (on it), C3 (unique
    maximizer above it) or C4 (tied maximizers above it).

    The comparison is against ``gamma(B(x, x))`` with relative tie
    tolerance ``1e-10``.
    """
    label, tied, _, _ = _region(cloud.x, cloud.v, kernel)
    return RegionLabel(label, tied)


def _sparse_u(x, v, kernel, M):
    label, tied, norms, g = _region(x, v, kernel)
    u = np.zeros_like(v)
    if float(norms.max()) <= g:
        return u
    j = tied[0]
    vp = v[j] - v.mean(axis=0)
    u[j] = -M * vp / norms[j]
    return u


def sparse_feedback(cloud: AgentCloud, kernel: CommKernel, M: float) -> ControlVector:
    """Componentwise sparse feedback.

    Zero when ``max_i ||v_perp_i|| <= gamma(B(x, x))``; otherwise the full
    budget ``M`` goes to the smallest index of maximal disagreement, pointed
    against its ``v_perp``.
    """
    return ControlVector(_sparse_u(cloud.x, cloud.v, kernel, M), M)


def _distributed_u(v, M, mode, alpha):
    vp = v - v.mean(axis=0)
    if mode == "projection":
        return -alpha * vp
    norms = np.linalg.norm(vp, axis=1)
    u = np.zeros_like(v)
    nz = norms > 0
    u[nz] = -(M / v.shape[0]) * vp[nz] / norms[nz, None]
    return u


def projection_gain(v0: np.ndarray, M: float) -> float:
    """Largest admissible gain ``M / (N sqrt(B(v0, v0)))``; zero at consensus."""
    V0 = float(dispersion(v0))
    return 0.0 if V0 == 0.0 else M / (v0.shape[0] * math.sqrt(V0))


def distributed_feedback(cloud: AgentCloud, M: float, mode: str = "uniform", v0=None) -> ControlVector:
    """Control acting on every agent at once.

    ``projection``: ``u = -alpha v_perp`` with ``alpha`` frozen from the
    initial disagreement ``v0`` (defaults to the current ``v``).
    ``uniform``: each agent gets ``M/N`` of the budget along ``-v_perp_i``.
    """
    if mode not in ("projection", "uniform"):
        raise ValueError(f"unknown distributed mode {mode!r}")
    alpha = projection_gain(np.asarray(cloud.v if v0 is None else v0, dtype=float), M)
    return ControlVector(_distributed_u(cloud.v, M, mode, alpha), M)


class SparseFeedback:
    """Policy form of :func:`sparse_feedback` for the integrators."""

    def __init__(self, kernel: CommKernel, M: float):
        self.kernel, self.M = kernel, M

    def __call__(self, x, v):
        return _sparse_u(x, v, self.kernel, self.M)


class DistributedFeedback:
    """Policy form of :func:`distributed_feedback`.

    With ``kernel`` given the control is switched off inside C1, like the
    sparse law, so control efforts are comparable.
    """

    def __init__(self, M: float, mode: str, v0, kernel: CommKernel | None = None):
        if mode not in ("projection", "uniform"):
            raise ValueError(f"unknown distributed mode {mode!r}")
        self.M, self.mode, self.kernel = M, mode, kernel
        self.alpha = projection_gain(np.asarray(v0, dtype=float), M)

    def __call__(self, x, v):
        if self.kernel is not None:
            g = gamma_threshold(float(dispersion(x)), self.kernel, x.shape[0])
            if perp_norms(v).max() <= g:
                return np.zeros_like(v)
        return _distributed_u(v, self.M, self.mode, self.alpha)


def decay_rate_bound_check(cloud: AgentCloud, allocations, M: float) -> tuple[float, float]:
    """Return ``(sum_j alpha_j ||v_perp_j||, M max_i ||v_perp_i||)``.

    The first entry is the decay-rate gain of a control that puts
    ``alpha_j`` of the budget on agent ``j``; it never exceeds the second,
    which is what the sparse law achieves.
    """
    alpha = np.asarray(allocations, dtype=float)
    if alpha.shape != (cloud.N,):
        raise ValueError("one allocation per agent required")
    if np.any(alpha < 0) or alpha.sum() > M * (1 + 1e-12):
        raise ValueError("allocations must be nonnegative with sum <= M")
    norms = perp_norms(cloud.v)
    return float(alpha @ norms), float(M * norms.max())
