"""Right-hand sides, fixed-step RK4 integration and sampling solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    AgentCloud,
    CommKernel,
    CuckerSmaleKernel,
    Diagnostics,
    dispersion,
    gamma_threshold,
    laplacian,
    perp_norms,
)

Policy = Callable[[np.ndarray, np.ndarray], Optional[np.ndarray]]

BLOWUP = 1e12
ENTRY_TOL = 1e-4
NONE, SEVERAL = -1, -2


class IntegrationError(RuntimeError):
    """The state left the finite range (non-finite or above the blow-up guard)."""


def _accel(x: np.ndarray, v: np.ndarray, kernel: CommKernel) -> np.ndarray:
    diff = x[None, :, :] - x[:, None, :]
    W = kernel.of_squared(np.einsum("ijk,ijk->ij", diff, diff))
    return (W @ v - W.sum(axis=1)[:, None] * v) / x.shape[0]


def uncontrolled_rhs(cloud: AgentCloud, kernel: CommKernel):
    """``(x_dot, v_dot)`` of the free alignment system."""
    return cloud.v.copy(), _accel(cloud.x, cloud.v, kernel)


def matrix_form_rhs(cloud: AgentCloud, kernel: CommKernel):
    """Same field written as ``(v, -L_x v)``."""
    return cloud.v.copy(), -laplacian(cloud, kernel) @ cloud.v


def controlled_rhs(cloud: AgentCloud, kernel: CommKernel, u):
    xdot, vdot = uncontrolled_rhs(cloud, kernel)
    return xdot, vdot + np.asarray(u, dtype=float).reshape(vdot.shape)


def active_index(u: np.ndarray) -> int:
    """Index of the single nonzero row, ``NONE`` or ``SEVERAL``."""
    nz = np.flatnonzero(np.any(u != 0.0, axis=1))
    if nz.size == 0:
        return NONE
    return int(nz[0]) if nz.size == 1 else SEVERAL


@dataclass(frozen=True)
class Trajectory:
    """Discrete run of the controlled system.

    ``u[k]`` is the control evaluated at node ``k`` (for sampled runs, the
    frozen value applied on ``[t_k, t_{k+1})``).  ``active`` holds the
    active agent per node, ``-1`` for none and ``-2`` when several agents
    are controlled at once.
    """

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    X: np.ndarray
    V: np.ndarray
    gamma: np.ndarray
    max_perp: np.ndarray
    active: np.ndarray
    entry_time: Optional[float]
    switch_log: tuple = ()
    step: float = 0.0
    tau: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def N(self) -> int:
        return self.x.shape[1]

    @property
    def sqrtV(self) -> np.ndarray:
        return np.sqrt(self.V)

    def state(self, k: int) -> AgentCloud:
        return AgentCloud(self.x[k], self.v[k])

    def diagnostics_at(self, k: int) -> Diagnostics:
        return Diagnostics(float(self.X[k]), float(self.V[k]), float(self.gamma[k]), float(self.max_perp[k]))

    @property
    def final(self) -> AgentCloud:
        return self.state(-1)

    def control_norms(self) -> np.ndarray:
        return np.linalg.norm(self.u, axis=2).sum(axis=1)

    def control_effort(self) -> float:
        """``int sum_i ||u_i|| dt`` with the node control held over each step."""
        return float(np.sum(self.control_norms()[:-1] * np.diff(self.times)))

    def interventions(self) -> int:
        """Activations counted at sampling instants where the active set changes.

        Each activation of the sparse law touches one component; switching
        the control off costs nothing.  Without a switch log the node-wise
        active record is used.
        """
        seq = [a for _, a in self.switch_log] if self.switch_log else [
            None if a == NONE else int(a) for a in self.active
        ]
        count, prev = 0, None
        for a in seq:
            if a is not None and a != prev:
                count += self.N if a == SEVERAL else 1
            prev = a
        return count


def _make_step(kernel: CommKernel):
    def step(x, v, h, control):
        if callable(control):
            u1 = control(x, v)
            k1v = _accel(x, v, kernel) + u1
            x2, v2 = x + 0.5 * h * v, v + 0.5 * h * k1v
            k2v = _accel(x2, v2, kernel) + control(x2, v2)
            x3, v3 = x + 0.5 * h * v2, v + 0.5 * h * k2v
            k3v = _accel(x3, v3, kernel) + control(x3, v3)
            x4, v4 = x + h * v3, v + h * k3v
            k4v = _accel(x4, v4, kernel) + control(x4, v4)
        else:
            u = control
            k1v = _accel(x, v, kernel) + u
            x2, v2 = x + 0.5 * h * v, v + 0.5 * h * k1v
            k2v = _accel(x2, v2, kernel) + u
            x3, v3 = x + 0.5 * h * v2, v + 0.5 * h * k2v
            k3v = _accel(x3, v3, kernel) + u
            x4, v4 = x + h * v3, v + h * k3v
            k4v = _accel(x4, v4, kernel) + u
        xn = x + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
        vn = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        return xn, vn

    return step


def _zero_policy(x, v):
    return np.zeros_like(v)


def _wrap(policy: Optional[Policy]) -> Policy:
    if policy is None:
        return _zero_policy

    def wrapped(x, v):
        u = policy(x, v)
        return np.zeros_like(v) if u is None else np.asarray(u, dtype=float).reshape(v.shape)

    return wrapped


def _march(
    initial: AgentCloud,
    kernel: CommKernel,
    policy: Optional[Policy],
    T: float,
    h: float,
    tau: Optional[float],
    stop_on_entry: bool,
    entry_tol: float,
) -> Trajectory:
    if not (h > 0 and T > 0):
        raise ValueError("step and horizon must be positive")
    N = initial.N
    pol = _wrap(policy)
    step = _make_step(kernel)
    has_gamma = kernel.integrable

    def g_of(x, v):
        V = float(dispersion(v))
        gam = gamma_threshold(float(dispersion(x)), kernel, N)
        return math.sqrt(V) - gam

    n_full = int(math.floor(T / h + 1e-9))
    sizes = [h] * n_full
    rem = T - n_full * h
    if rem > 1e-12 * max(T, 1.0):
        sizes.append(rem)
    n_sub = None if tau is None else int(round(tau / h))

    K = len(sizes) + 1
    xs = np.empty((K,) + initial.x.shape)
    vs = np.empty_like(xs)
    us = np.zeros_like(xs)
    ts = np.empty(K)
    x, v = initial.x.copy(), initial.v.copy()
    xs[0], vs[0], ts[0] = x, v, 0.0
    switch_log = []
    entry_time = None
    g_prev = g_of(x, v) if has_gamma else math.nan
    if has_gamma and g_prev <= 0:
        entry_time = 0.0
    t = 0.0
    frozen = None
    last = 0
    for k, hk in enumerate(sizes):
        if n_sub is not None:
            if k % n_sub == 0:
                frozen = pol(x, v)
                a = active_index(frozen)
                switch_log.append((t, None if a == NONE else a))
            control = frozen
            us[k] = frozen
        else:
            control = pol
            us[k] = pol(x, v)
        xn, vn = step(x, v, hk, control)
        if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(vn))) or max(
            np.abs(xn).max(), np.abs(vn).max()
        ) > BLOWUP:
            raise IntegrationError(f"state blew up at t={t + hk:.6g}")
        t_next = (k + 1) * h if hk == h else T
        if has_gamma and entry_time is None:
            g_new = g_of(xn, vn)
            if g_prev > 0 >= g_new:
                lo, hi = 0.0, hk
                while hi - lo > entry_tol:
                    mid = 0.5 * (lo + hi)
                    if g_of(*step(x, v, mid, control)) > 0:
                        lo = mid
                    else:
                        hi = mid
                entry_time = t + hi
                if stop_on_entry:
                    xn, vn = step(x, v, hi, control)
                    t_next = entry_time
            g_prev = g_new
        x, v, t = xn, vn, t_next
        xs[k + 1], vs[k + 1], ts[k + 1] = x, v, t
        last = k + 1
        if stop_on_entry and entry_time is not None:
            break
    K = last + 1
    xs, vs, us, ts = xs[:K], vs[:K], us[:K], ts[:K]
    # control at the final node
    if n_sub is not None:
        if K - 1 < len(sizes) and (K - 1) % n_sub != 0:
            us[-1] = frozen
        else:
            us[-1] = pol(x, v)
    else:
        us[-1] = pol(x, v)
    return _finish(ts, xs, vs, us, kernel, entry_time, tuple(switch_log), h, tau)


def _finish(ts, xs, vs, us, kernel, entry_time, switch_log, h, tau) -> Trajectory:
    N = xs.shape[1]
    X = dispersion(xs)
    V = dispersion(vs)
    gam = gamma_threshold(X, kernel, N) if kernel.integrable else np.full_like(X, np.nan)
    active = np.array([active_index(u) for u in us], dtype=int)
    for arr in (ts, xs, vs, us, X, V, gam, active):
        arr.setflags(write=False)
    return Trajectory(
        times=ts,
        x=xs,
        v=vs,
        u=us,
        X=X,
        V=V,
        gamma=np.asarray(gam, dtype=float),
        max_perp=perp_norms(vs).max(axis=1),
        active=active,
        entry_time=entry_time,
        switch_log=switch_log,
        step=h,
        tau=tau,
    )


def trajectory_from_arrays(times, x, v, u, kernel: CommKernel, h: float | None = None) -> Trajectory:
    """Wrap externally computed states (e.g. an optimal extremal) as a trajectory.

    The entry time is taken at the first node inside the consensus region.
    """
    times = np.array(times, dtype=float)
    xs, vs, us = (np.array(a, dtype=float) for a in (x, v, u))
    entry = None
    if kernel.integrable:
        g = np.sqrt(dispersion(vs)) - gamma_threshold(dispersion(xs), kernel, xs.shape[1])
        inside = np.flatnonzero(g <= 0)
        entry = float(times[inside[0]]) if inside.size else None
    return _finish(times, xs, vs, us, kernel, entry, (), h or float(times[1] - times[0]), None)


def integrate(
    initial: AgentCloud,
    kernel: CommKernel,
    control_policy: Optional[Policy] = None,
    T: float = 10.0,
    h: float = 1e-2,
    *,
    stop_on_entry: bool = False,
    entry_tol: float = ENTRY_TOL,
) -> Trajectory:
    """Classical RK4 with the feedback evaluated at every stage.

    ``control_policy(x, v)`` returns an ``(N, d)`` control or ``None``.  The
    consensus-region entry time (first time ``sqrt(V) <= gamma(X)``) is
    located by bisection inside the bracketing step.
    """
    return _march(initial, kernel, control_policy, T, h, None, stop_on_entry, entry_tol)


def sampling_solve(
    initial: AgentCloud,
    kernel: CommKernel,
    feedback: Policy,
    tau: float,
    T: float,
    h: Optional[float] = None,
    *,
    stop_on_entry: bool = False,
    entry_tol: float = ENTRY_TOL,
) -> Trajectory:
    """Sampling solution: the feedback is frozen at ``k*tau`` for ``[k*tau, (k+1)*tau]``.

    The inner step defaults to ``min(tau/10, 1e-2)`` and is shrunk so that
    ``tau`` is an integer multiple of it.
    """
    if not tau > 0:
        raise ValueError("sampling time must be positive")
    h = min(tau / 10.0, 1e-2) if h is None else h
    n_sub = max(1, int(math.ceil(tau / h - 1e-9)))
    return _march(initial, kernel, feedback, T, tau / n_sub, tau, stop_on_entry, entry_tol)


# ---------------------------------------------------------------------------
# two agents on a line
# ---------------------------------------------------------------------------

TWO_AGENT_KERNEL = CuckerSmaleKernel(K=1.0, sigma=1.0, beta=1.0)
"""Rate function whose two-agent relative dynamics is ``v' = -v / (1 + x^2)``."""


def two_agent_cloud(x0: float, v0: float) -> AgentCloud:
    """Symmetric pair on the line with relative state ``(x0, v0)``."""
    return AgentCloud(np.array([[0.5 * x0], [-0.5 * x0]]), np.array([[0.5 * v0], [-0.5 * v0]]))


def two_agent_relative(traj: Trajectory):
    """Relative position and consensus parameter ``x_1 - x_2``, ``v_1 - v_2``."""
    return traj.x[:, 0, 0] - traj.x[:, 1, 0], traj.v[:, 0, 0] - traj.v[:, 1, 0]


def two_agent_invariant_residual(x, v, x0: float, v0: float):
    """``(v + arctan x) - (v0 + arctan x0)``; identically zero on exact solutions."""
    return (np.asarray(v) + np.arctan(x)) - (v0 + math.atan(x0))


def two_agent_tends_to_consensus(x0: float, v0: float) -> bool:
    return abs(math.atan(x0) + v0) <= 0.5 * math.pi
