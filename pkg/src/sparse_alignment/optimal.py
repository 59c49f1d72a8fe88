"""Finite-horizon optimal control with an l1-l2 penalty: adjoint system,
pointwise Hamiltonian minimization, costate regions and a damped
forward-backward sweep."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .controls import ControlVector, RegionLabel
from .core import TIE_TOL, AgentCloud, CommKernel
from .dynamics import Trajectory, _accel, _make_step

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """The sweep did not reach the requested tolerance."""

    def __init__(self, message: str, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class Extremal:
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    p_x: np.ndarray
    p_v: np.ndarray
    u: np.ndarray
    cost: float
    sparsity_weight: float
    M: float
    iterations: int = 0
    residuals: tuple = ()
    costs: tuple = ()

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def pmp_residual(self) -> np.ndarray:
        """Per-node sup-norm distance between the control and the minimizer of the costate."""
        best = _minimizers(np.asarray(self.p_v), self.sparsity_weight, self.M)
        return np.abs(best - self.u).reshape(len(self.times), -1).max(axis=1)

    def to_trajectory(self, kernel: CommKernel) -> Trajectory:
        from .dynamics import trajectory_from_arrays

        h = float(self.times[1] - self.times[0])
        return trajectory_from_arrays(self.times, self.x, self.v, self.u, kernel, h)


CostateRegion = RegionLabel


# ---------------------------------------------------------------------------
# cost and Hamiltonian
# ---------------------------------------------------------------------------


def running_cost(v: np.ndarray, u: np.ndarray, w: float) -> np.ndarray:
    """``sum_i ||v_i - v_bar||^2 + w sum_i ||u_i||`` at each node of a stack."""
    v = np.asarray(v, dtype=float)
    vp = v - v.mean(axis=-2, keepdims=True)
    return np.einsum("...ik,...ik->...", vp, vp) + w * np.linalg.norm(u, axis=-1).sum(axis=-1)


def cost_functional(traj, sparsity_weight: float) -> float:
    """Composite-trapezoid value of
    ``int_0^T (sum_i ||v_perp_i||^2 + w sum_i ||u_i||) dt`` on the stored grid."""
    return _trapz(running_cost(traj.v, traj.u, sparsity_weight), np.asarray(traj.times))


def _trapz(y, t) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def hamiltonian(cloud: AgentCloud, p_x, p_v, u, kernel: CommKernel, sparsity_weight: float) -> float:
    """``<p_x, v> + <p_v, f(x, v) + u> + running cost``."""
    x, v = cloud.x, cloud.v
    f = _accel(x, v, kernel) + u
    return float(np.sum(p_x * v) + np.sum(p_v * f) + running_cost(v, u, sparsity_weight))


def _adjoint(x, v, px, pv, kernel):
    N = x.shape[0]
    dx = x[:, None, :] - x[None, :, :]  # x_k - x_j
    r2 = (dx * dx).sum(axis=-1)
    W = kernel.of_squared(r2)
    D = kernel.derivative_over_r(np.sqrt(r2))
    dv = v[None, :, :] - v[:, None, :]  # v_j - v_k
    dp = pv[None, :, :] - pv[:, None, :]  # p_j - p_k
    s = D * (dp * dv).sum(axis=-1)  # zero on the diagonal since dv vanishes there
    pxdot = (s[:, :, None] * dx).sum(axis=1) / N
    coupling = (W @ pv - W.sum(axis=1)[:, None] * pv) / N
    pvdot = -px - coupling - 2.0 * (v - v.mean(axis=0))
    return pxdot, pvdot


def adjoint_rhs(cloud: AgentCloud, costate, kernel: CommKernel):
    """Time derivative ``(p_x', p_v')`` of the costate, i.e. minus the state
    gradient of the Hamiltonian.

    The position line reads
    ``p_x_k' = (1/N) sum_j (a'(r)/r) <p_v_j - p_v_k, v_j - v_k> (x_k - x_j)``
    with ``r = ||x_j - x_k||``; the factor is taken as zero for coincident
    agents.
    """
    px, pv = (np.asarray(c, dtype=float) for c in costate)
    return _adjoint(cloud.x, cloud.v, px, pv, kernel)


def _tied_max(norms: np.ndarray):
    m = float(norms.max())
    tied = np.flatnonzero(norms >= m - TIE_TOL * m)
    return m, tied


def hamiltonian_minimizer(p_v, sparsity_weight: float, M: float) -> ControlVector:
    """Minimize ``sum_i <p_v_i, w_i> + weight sum_i ||w_i||`` over ``sum_i ||w_i|| <= M``.

    Zero when every ``||p_v_i||`` is below the weight; otherwise the whole
    budget goes to the smallest index of maximal ``||p_v_i||`` along
    ``-p_v_i``.  On exact equality with the weight any amount in ``[0, M]``
    is optimal and zero is returned.
    """
    p = np.asarray(p_v, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    u = np.zeros_like(p)
    norms = np.linalg.norm(p, axis=1)
    m, tied = _tied_max(norms)
    if m <= sparsity_weight or m == 0.0:
        return ControlVector(u, M)
    j = int(tied[0])
    u[j] = -M * p[j] / norms[j]
    return ControlVector(u, M)


def classify_costate_region(p_v, sparsity_weight: float) -> RegionLabel:
    """O1: all ``||p_v_i|| < w``; O2/O5: one/several on ``w``, the rest below;
    O3/O4: one/several tied maximizers above ``w``.  Relative tolerance ``1e-10``."""
    p = np.asarray(p_v, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    norms = np.linalg.norm(p, axis=1)
    w = sparsity_weight
    m, tied = _tied_max(norms)
    tol = TIE_TOL * max(m, w)
    idx = tuple(int(i) for i in tied)
    if m < w - tol:
        return RegionLabel("O1", ())
    if abs(m - w) <= tol:
        on = tuple(int(i) for i in np.flatnonzero(np.abs(norms - w) <= tol))
        return RegionLabel("O2" if len(on) == 1 else "O5", on)
    return RegionLabel("O3" if len(idx) == 1 else "O4", idx)


# ---------------------------------------------------------------------------
# forward-backward sweep
# ---------------------------------------------------------------------------


def _forward(x0, v0, u, h, step):
    n = u.shape[0] - 1
    xs = np.empty((n + 1,) + x0.shape)
    vs = np.empty_like(xs)
    xs[0], vs[0] = x0, v0
    for k in range(n):
        xs[k + 1], vs[k + 1] = step(xs[k], vs[k], h, u[k])
    return xs, vs


def _adjoint_operators(x, v, kernel):
    """Costate equation at a stack of states, written as
    ``p_x' = Jx p_v`` and ``p_v' = -p_x + Lw p_v - 2 v_perp``.

    Shapes: ``x, v`` are ``(P, N, d)``; returns ``Jx (P, Nd, Nd)``,
    ``Lw (P, N, N)`` and ``v_perp (P, N, d)``.
    """
    P, N, d = x.shape
    dx = x[:, :, None, :] - x[:, None, :, :]  # x_k - x_j
    r2 = (dx * dx).sum(axis=-1)
    W = kernel.of_squared(r2)
    D = kernel.derivative_over_r(np.sqrt(r2))
    dv = v[:, None, :, :] - v[:, :, None, :]  # v_j - v_k
    C = (D / N)[..., None, None] * dx[..., :, None] * dv[..., None, :]  # (P, k, j, a, b)
    diag = C.sum(axis=2)
    idx = np.arange(N)
    C[:, idx, idx] -= diag
    Jx = C.transpose(0, 1, 3, 2, 4).reshape(P, N * d, N * d)
    Lw = (W.sum(axis=2)[:, :, None] * np.eye(N) - W) / N
    return Jx, Lw, v - v.mean(axis=1, keepdims=True)


def _state_midpoints(xs, vs, u, h, kernel):
    acc = np.stack([_accel(a, b, kernel) for a, b in zip(xs, vs)])
    f0, f1 = acc[:-1] + u[:-1], acc[1:] + u[:-1]
    xm = 0.5 * (xs[1:] + xs[:-1]) + h / 8.0 * (vs[:-1] - vs[1:])
    vm = 0.5 * (vs[1:] + vs[:-1]) + h / 8.0 * (f0 - f1)
    return xm, vm


def _backward(xs, vs, u, h, kernel, chunk=2_000_000):
    """RK4 for the costate from ``p(T) = 0`` down to ``t = 0``.

    Interval midpoints of the state come from cubic Hermite interpolation
    with the interval's control in the end slopes.
    """
    n = xs.shape[0] - 1
    N, d = xs.shape[1:]
    px = np.zeros_like(xs)
    pv = np.zeros_like(vs)
    xm, vm = _state_midpoints(xs, vs, u, h, kernel)
    if (2 * n + 1) * (N * d) ** 2 > chunk:
        # operators would not fit comfortably; evaluate them on the fly
        for k in range(n, 0, -1):
            p1x, p1v = px[k], pv[k]
            k1 = _adjoint(xs[k], vs[k], p1x, p1v, kernel)
            k2 = _adjoint(xm[k - 1], vm[k - 1], p1x - 0.5 * h * k1[0], p1v - 0.5 * h * k1[1], kernel)
            k3 = _adjoint(xm[k - 1], vm[k - 1], p1x - 0.5 * h * k2[0], p1v - 0.5 * h * k2[1], kernel)
            k4 = _adjoint(xs[k - 1], vs[k - 1], p1x - h * k3[0], p1v - h * k3[1], kernel)
            px[k - 1] = p1x - (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            pv[k - 1] = p1v - (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        return px, pv
    Jn, Ln, Qn = _adjoint_operators(xs, vs, kernel)
    Jm, Lm, Qm = _adjoint_operators(xm, vm, kernel)
    Nd = N * d

    def f(J, L, Q, qx, qv):
        return (J @ qv.reshape(Nd)).reshape(N, d), -qx + L @ qv - 2.0 * Q

    for k in range(n, 0, -1):
        qx, qv = px[k], pv[k]
        a1, b1 = f(Jn[k], Ln[k], Qn[k], qx, qv)
        a2, b2 = f(Jm[k - 1], Lm[k - 1], Qm[k - 1], qx - 0.5 * h * a1, qv - 0.5 * h * b1)
        a3, b3 = f(Jm[k - 1], Lm[k - 1], Qm[k - 1], qx - 0.5 * h * a2, qv - 0.5 * h * b2)
        a4, b4 = f(Jn[k - 1], Ln[k - 1], Qn[k - 1], qx - h * a3, qv - h * b3)
        px[k - 1] = qx - (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        pv[k - 1] = qv - (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
    return px, pv


def _cost(t, vs, u, w):
    return _trapz(running_cost(vs, u, w), t)


def _minimizers(pv, w, M):
    """Row-wise :func:`hamiltonian_minimizer` over a stack ``(n, N, d)``."""
    norms = np.linalg.norm(pv, axis=-1)
    m = norms.max(axis=1)
    first = np.argmax(norms >= (m - TIE_TOL * m)[:, None], axis=1)
    on = np.flatnonzero((m > w) & (m > 0))
    u = np.zeros_like(pv)
    j = first[on]
    u[on, j] = -M * pv[on, j] / norms[on, j][:, None]
    return u


def _segment_breaks(n0, n1, w):
    """Points of ``(0, 1)`` where, with norms interpolated linearly, some norm
    crosses ``w`` or the leading agent changes."""
    out = []
    g0, g1 = n0 - w, n1 - w
    cross = g0 * g1 < 0
    out.extend((g0[cross] / (g0[cross] - g1[cross])).tolist())
    N = n0.size
    scale = TIE_TOL * max(float(n0.max()), float(n1.max()), w)
    for i in range(N):
        d0, d1 = n0[i] - n0[i + 1 :], n1[i] - n1[i + 1 :]
        flip = ((d0 > scale) & (d1 < -scale)) | ((d0 < -scale) & (d1 > scale))
        out.extend((d0[flip] / (d0[flip] - d1[flip])).tolist())
    return sorted(b for b in out if 0.0 < b < 1.0)


def _interval_controls(pv, w, M):
    """Control held on each interval ``[t_k, t_k+1)``.

    Away from switches it is the minimizer at ``t_k``.  On an interval
    whose end nodes select different controls, the costate is interpolated
    linearly and the pointwise minimizer is averaged over the pieces; a
    switch inside the interval then shows up as a fractional budget, which
    keeps the update continuous in the costate.
    """
    B = _minimizers(pv, w, M)
    norms = np.linalg.norm(pv, axis=-1)
    n = pv.shape[0] - 1
    sig = np.where(np.abs(B).sum(axis=-1) > 0, 1, 0)
    mixed = np.flatnonzero(np.any(sig[:-1] != sig[1:], axis=1))
    out = B.copy()
    mixed = mixed[mixed < n]
    for k in mixed:
        breaks = [0.0] + _segment_breaks(norms[k], norms[k + 1], w) + [1.0]
        acc = np.zeros_like(pv[k])
        for a, b in zip(breaks[:-1], breaks[1:]):
            s = 0.5 * (a + b)
            nm = (1.0 - s) * norms[k] + s * norms[k + 1]
            m = float(nm.max())
            if m <= w or m == 0.0:
                continue
            j = int(np.argmax(nm >= m - TIE_TOL * m))
            pm = (1.0 - s) * pv[k, j] + s * pv[k + 1, j]
            acc[j] += (b - a) * (-M * pm / np.linalg.norm(pm))
        out[k] = acc
    return out, mixed


def _secant(u, r, u_old, r_old, fallback, M):
    """Entrywise secant step towards ``r = 0`` on the switching intervals.

    The held control there is a scalar fixed point whose slope can be far
    from the damping's contraction range; the previous iterate supplies the
    slope.  Entries without a usable (negative) slope keep the damped value.
    """
    du, dr = u - u_old, r - r_old
    out = fallback.copy()
    ok = (np.abs(du) > 1e-14) & (np.abs(r) > 0)
    slope = np.where(ok, dr / np.where(ok, du, 1.0), 0.0)
    use = ok & (slope < 0)
    out[use] = u[use] - r[use] / slope[use]
    # keep every node inside the budget
    tot = np.linalg.norm(out, axis=-1).sum(axis=-1)
    over = tot > M
    out[over] *= (M / tot[over])[:, None, None]
    return out


def forward_backward_solve(
    initial: AgentCloud,
    kernel: CommKernel,
    T: float,
    sparsity_weight: float,
    M: float,
    grid_points: int = 1000,
    damping: float = 0.3,
    max_iter: int = 500,
    tol: float = 1e-6,
    initial_control: Optional[np.ndarray] = None,
) -> Extremal:
    """Damped sweep for the optimality system.

    Each iteration integrates the state forward (RK4, control held on each
    of the ``grid_points`` intervals), the costate backward from zero, and
    moves the control a fraction ``damping`` towards the pointwise
    Hamiltonian minimizer.  A step that raises the cost is retried with half
    the damping.  Convergence is declared when the control is within ``tol``
    of the minimizer of its own costate at every node; the stored control is
    then replaced by that minimizer and the extremal recomputed.
    """
    if grid_points < 100:
        raise ValueError("grid_points must be at least 100")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if not (T > 0 and M > 0 and sparsity_weight >= 0):
        raise ValueError("need T > 0, M > 0 and a nonnegative sparsity weight")
    n = int(grid_points)
    h = T / n
    t = np.linspace(0.0, T, n + 1)
    step = _make_step(kernel)
    x0, v0 = np.array(initial.x), np.array(initial.v)
    w = sparsity_weight

    u = np.zeros((n + 1,) + v0.shape) if initial_control is None else np.array(initial_control, dtype=float)
    xs, vs = _forward(x0, v0, u, h, step)
    px, pv = _backward(xs, vs, u, h, kernel)
    J = _cost(t, vs, u, w)
    residuals, costs = [], [J]
    theta = damping
    it = 0
    converged = False
    prev = None
    while it < max_iter:
        best, mixed = _interval_controls(pv, w, M)
        r = best - u
        res = float(np.abs(r).max())
        residuals.append(res)
        if res <= tol:
            converged = True
            break
        it += 1
        while True:
            cand = (1.0 - theta) * u + theta * best
            if prev is not None and np.array_equal(prev[2], mixed) and mixed.size:
                cand[mixed] = _secant(u[mixed], r[mixed], prev[0][mixed], prev[1][mixed], cand[mixed], M)
            cx, cv = _forward(x0, v0, cand, h, step)
            cJ = _cost(t, cv, cand, w)
            if cJ <= J * (1 + 1e-12) + 1e-15 or theta < 1e-8:
                break
            theta *= 0.5
            log.debug("cost rose to %.6g, damping now %.3g", cJ, theta)
        prev = (u, r, mixed)
        u, xs, vs, J = cand, cx, cv, cJ
        px, pv = _backward(xs, vs, u, h, kernel)
        costs.append(J)
        # let the step size recover after a back-off
        theta = min(damping, 2.0 * theta)
    if not converged:
        raise ConvergenceError(
            f"sweep did not converge in {max_iter} iterations (last residual {residuals[-1]:.3g})",
            residuals,
        )
    # snap to the update target and recompute the extremal
    u, _ = _interval_controls(pv, w, M)
    xs, vs = _forward(x0, v0, u, h, step)
    px, pv = _backward(xs, vs, u, h, kernel)
    J = _cost(t, vs, u, w)
    costs.append(J)
    for arr in (t, xs, vs, px, pv, u):
        arr.setflags(write=False)
    return Extremal(
        times=t,
        x=xs,
        v=vs,
        p_x=px,
        p_v=pv,
        u=u,
        cost=J,
        sparsity_weight=w,
        M=M,
        iterations=it,
        residuals=tuple(residuals),
        costs=tuple(costs),
    )
