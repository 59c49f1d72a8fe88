"""Consensus-region test, steering-time and sampling-time bounds, the
consensus-number estimate and numerical checkers for the Lyapunov-type
inequalities along trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Optional

import numpy as np

from .core import (
    AgentCloud,
    CommKernel,
    disagreement_V,
    dispersion_X,
    gamma_threshold,
    perp_norms,
)
from .dynamics import Trajectory


def consensus_region_check(cloud: AgentCloud, kernel: CommKernel) -> bool:
    """True iff ``gamma(X0) >= sqrt(V0)``: the free system then tends to consensus."""
    g = gamma_threshold(dispersion_X(cloud), kernel, cloud.N)
    return g >= math.sqrt(disagreement_V(cloud))


@dataclass(frozen=True)
class StabilizationBounds:
    X_bar: float
    T0: float
    tau0: float
    n_bound: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _x_bar(X0: float, V0: float, N: int, M: float, sampled: bool) -> float:
    if sampled:
        return 2.0 * X0 + 2.0 * N**4 * V0**2 / M**2
    return 2.0 * X0 + N**4 * V0**2 / (2.0 * M**2)


def steering_time_bound(cloud: AgentCloud, kernel: CommKernel, M: float, sampled: bool = False):
    """``(X_bar, T0)``: a dispersion bound along the controlled run and an
    upper bound on the time the sparse law needs to reach the consensus
    region.

    Continuous feedback: ``X_bar = 2 X0 + N^4 V0^2 / (2 M^2)`` and
    ``T0 = (N/M)(sqrt(V0) - gamma(X_bar))``.  Sampled feedback doubles the
    time constant: ``X_bar = 2 X0 + 2 N^4 V0^2 / M^2``,
    ``T0 = (2N/M)(sqrt(V0) - gamma(X_bar))``.  ``T0`` is clamped at 0.
    """
    if not M > 0:
        raise ValueError("budget M must be positive")
    X0, V0, N = dispersion_X(cloud), disagreement_V(cloud), cloud.N
    X_bar = _x_bar(X0, V0, N, M, sampled)
    if V0 == 0.0:
        return X_bar, 0.0
    lead = (2.0 if sampled else 1.0) * N / M
    T0 = lead * (math.sqrt(V0) - gamma_threshold(X_bar, kernel, N))
    return X_bar, max(T0, 0.0)


def max_sampling_time(cloud: AgentCloud, kernel: CommKernel, M: float) -> float:
    """Largest ``tau`` with
    ``2 a(0) M tau^2 + (a(0)(1 + sqrt N) sqrt(V0) + M) tau <= gamma(X_bar)/2``.

    ``X_bar`` is the sampled dispersion bound.  Returns ``inf`` at a
    consensus point, where any sampling time works.
    """
    V0, N = disagreement_V(cloud), cloud.N
    if V0 == 0.0:
        return math.inf
    X_bar, _ = steering_time_bound(cloud, kernel, M, sampled=True)
    a0 = kernel.a0
    qa = 2.0 * a0 * M
    qb = a0 * (1.0 + math.sqrt(N)) * math.sqrt(V0) + M
    qc = 0.5 * gamma_threshold(X_bar, kernel, N)
    # positive root of qa t^2 + qb t - qc, written to avoid cancellation
    return 2.0 * qc / (qb + math.sqrt(qb * qb + 4.0 * qa * qc))


def sampling_condition_lhs(cloud: AgentCloud, kernel: CommKernel, M: float, tau: float) -> float:
    """Left side of the sampling-time condition, to compare with ``gamma(X_bar)/2``."""
    V0, N, a0 = disagreement_V(cloud), cloud.N, kernel.a0
    return tau * (a0 * (1.0 + math.sqrt(N)) * math.sqrt(V0) + M) + tau * tau * 2.0 * a0 * M


def _count(T0: float, tau0: float, T: float) -> float:
    if T < T0:
        return math.inf
    if T0 == 0.0:
        return 0
    return int(math.ceil(T0 / tau0 - 1e-12))


def consensus_number_bound(cloud: AgentCloud, kernel: CommKernel, M: float, T: float):
    """Upper estimate of the number of control activations needed by time ``T``.

    ``inf`` when ``T`` is below the sampled ``T0``; 0 at consensus; otherwise
    ``ceil(T0 / tau0)`` since every sampling interval activates one agent.
    """
    if disagreement_V(cloud) == 0.0:
        return 0
    _, T0 = steering_time_bound(cloud, kernel, M, sampled=True)
    return _count(T0, max_sampling_time(cloud, kernel, M), T)


def consensus_number_bound_batch(clouds: Iterable[AgentCloud], kernel: CommKernel, M: float, T: float):
    """Same estimate uniformly over a finite sample of initial data:
    the largest ``T0`` and the smallest ``tau0`` of the sample are combined."""
    T0s, taus = [], []
    for c in clouds:
        if disagreement_V(c) == 0.0:
            continue
        T0s.append(steering_time_bound(c, kernel, M, sampled=True)[1])
        taus.append(max_sampling_time(c, kernel, M))
    if not T0s:
        return 0
    return _count(max(T0s), min(taus), T)


def stabilization_bounds(cloud: AgentCloud, kernel: CommKernel, M: float, T: Optional[float] = None) -> StabilizationBounds:
    """Sampled ``X_bar`` and ``T0``, ``tau0`` and the consensus-number bound.

    With ``T`` omitted the bound is evaluated at ``T = T0``.
    """
    X_bar, T0 = steering_time_bound(cloud, kernel, M, sampled=True)
    tau0 = max_sampling_time(cloud, kernel, M)
    n = consensus_number_bound(cloud, kernel, M, T0 if T is None else T)
    return StabilizationBounds(X_bar=X_bar, T0=T0, tau0=tau0, n_bound=float(n))


# ---------------------------------------------------------------------------
# inequality checkers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LemmaReport:
    """Largest positive violation of each inequality along a trajectory.

    ``None`` marks a check that does not apply (controlled run, no rate
    ``alpha`` given, non-integrable kernel).
    """

    app1: Optional[float]
    app2: Optional[float]
    app3: float
    app4: Optional[float]
    invariance: Optional[float]
    integrate_V: Optional[float]
    integrate_X: Optional[float]
    c1_exit: Optional[float]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def worst(self) -> float:
        vals = [v for v in self.as_dict().values() if v is not None]
        return max(vals) if vals else 0.0


def _viol(arr) -> float:
    return float(max(np.max(arr), 0.0)) if np.size(arr) else 0.0


def _tail_between(X0: float, X: np.ndarray, kernel: CommKernel, N: int) -> np.ndarray:
    """``int_{sqrt X0}^{sqrt X(t)} a(sqrt(2N) r) dr`` at every node."""
    if kernel.integrable:
        return gamma_threshold(X0, kernel, N) - gamma_threshold(X, kernel, N)
    s = np.sqrt(X)
    f = kernel(math.sqrt(2.0 * N) * s)
    out = np.zeros_like(s)
    out[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(s))
    return out


def _free_accel(x: np.ndarray, v: np.ndarray, kernel: CommKernel, chunk: int = 2048) -> np.ndarray:
    """Uncontrolled ``v_dot`` at every stored node of ``(K, N, d)`` stacks."""
    out = np.empty_like(v)
    N = x.shape[1]
    for s in range(0, x.shape[0], chunk):
        xs, vs = x[s : s + chunk], v[s : s + chunk]
        diff = xs[:, None, :, :] - xs[:, :, None, :]
        W = kernel.of_squared(np.einsum("kijd,kijd->kij", diff, diff))
        out[s : s + chunk] = (W @ vs - W.sum(axis=2)[..., None] * vs) / N
    return out


def _B(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    uc = u - u.mean(axis=1, keepdims=True)
    wc = w - w.mean(axis=1, keepdims=True)
    return np.einsum("kid,kid->k", uc, wc) / u.shape[1]


def _safe_ratio(num: np.ndarray, den: np.ndarray, fallback) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)


def lemma_checkers(traj: Trajectory, kernel: CommKernel, alpha: Optional[float] = None) -> LemmaReport:
    """Evaluate the Lyapunov-type inequalities on the stored grid.

    Time derivatives are taken from the vector field at each stored state
    (``X' = 2 B(x, v)``, ``V' = 2 B(v, v')`` and so on), so a residual
    measures the inequality itself rather than a differencing error.
    Checks on the free flow (the decay of ``V``, of ``sqrt V``, the
    integrated threshold estimate and the invariance of ``C1``) are only
    evaluated on uncontrolled runs.  ``d sqrt(X)/dt <= sqrt(V)`` holds for any
    control.  With ``alpha`` the consequences of ``dV/dt <= -alpha sqrt V``
    are checked up to the entry time.
    """
    t = traj.times
    N = traj.N
    x, v = np.asarray(traj.x), np.asarray(traj.v)
    X, V = np.asarray(traj.X), np.asarray(traj.V)
    sX, sV = np.sqrt(X), np.sqrt(V)
    free = not np.any(traj.u != 0.0)

    a_diam = kernel(np.sqrt(2.0 * N * X))
    # at X = 0 the right derivative of sqrt(X) is ||v_i - v_j|| based, i.e. sqrt(V)
    d_sX = _safe_ratio(_B(x, v), sX, sV)
    app3 = _viol(d_sX - sV)

    app1 = app2 = app4 = inv = None
    if free:
        acc = _free_accel(x, v, kernel)
        dV = 2.0 * _B(v, acc)
        app1 = _viol(dV + 2.0 * a_diam * V)
        app2 = _viol(_safe_ratio(0.5 * dV, sV, 0.0) + a_diam * sV)
        app4 = _viol(sV + _tail_between(float(X[0]), X, kernel, N) - sV[0])
        if kernel.integrable:
            vp = v - v.mean(axis=1, keepdims=True)
            ap = acc - acc.mean(axis=1, keepdims=True)
            norms = np.linalg.norm(vp, axis=2)
            lead = np.argmax(norms, axis=1)
            k = np.arange(t.size)
            dmax = _safe_ratio(np.einsum("kd,kd->k", vp[k, lead], ap[k, lead]), norms[k, lead], 0.0)
            d_gamma = -a_diam * d_sX
            inv = _viol(dmax - d_gamma)

    iV = iX = None
    if alpha is not None:
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        end = t[-1] if traj.entry_time is None else traj.entry_time
        m = t <= end + 1e-12
        bound_V = np.maximum(sV[0] - 0.5 * alpha * t[m], 0.0) ** 2
        iV = _viol(V[m] - bound_V)
        iX = _viol(X[m] - (2.0 * X[0] + 2.0 * N**2 * V[0] ** 2 / alpha**2))

    c1 = None
    if kernel.integrable:
        g = np.asarray(traj.gamma)
        inside = np.flatnonzero(traj.max_perp < g)
        if inside.size:
            k0 = inside[0]
            c1 = _viol(traj.max_perp[k0:] - g[k0:])
    return LemmaReport(app1, app2, app3, app4, inv, iV, iX, c1)
