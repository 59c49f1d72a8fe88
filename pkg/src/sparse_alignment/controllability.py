"""Linearization at a consensus point, Kalman and spectral controllability
tests, and minimal-energy steering of the linear system through one agent."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import integrate, linalg

from .core import AgentCloud, CommKernel, laplacian

RANK_TOL = 1e-10
SPECTRAL_TOL = 1e-8


class SingularGramianError(np.linalg.LinAlgError):
    """The controllability Gramian is (numerically) singular."""


@dataclass(frozen=True)
class LinearizedSystem:
    """``z' = A z + b u`` per coordinate axis, with ``A = -L`` at the
    consensus configuration and ``b`` the indicator of the controlled agent.

    ``eigenvalues`` are sorted in decreasing order (the first is 0),
    ``P`` holds the matching orthonormal eigenvectors and ``alpha = P.T @ b``
    are the modal input coefficients.
    """

    A: np.ndarray
    b: np.ndarray
    control_index: int
    eigenvalues: np.ndarray
    P: np.ndarray
    alpha: np.ndarray
    x_tilde: np.ndarray

    @property
    def N(self) -> int:
        return self.A.shape[0]


def linearize_at_consensus(x_tilde, kernel: CommKernel, i: int) -> LinearizedSystem:
    x = np.array(x_tilde, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N = x.shape[0]
    if not 0 <= i < N:
        raise ValueError(f"control index {i} outside 0..{N - 1}")
    L = laplacian(AgentCloud(x, np.zeros_like(x)), kernel)
    A = -0.5 * (L + L.T)
    lam, P = np.linalg.eigh(A)
    lam, P = lam[::-1].copy(), P[:, ::-1].copy()
    b = np.zeros(N)
    b[i] = 1.0
    for arr in (A, b, lam, P, x):
        arr.setflags(write=False)
    alpha = P.T @ b
    alpha.setflags(write=False)
    return LinearizedSystem(A, b, i, lam, P, alpha, x)


@dataclass(frozen=True)
class SpectralReport:
    distinct_eigenvalues: bool
    nonzero_coefficients: bool
    min_gap: float
    min_coefficient: float

    @property
    def controllable(self) -> bool:
        return self.distinct_eigenvalues and self.nonzero_coefficients


class KalmanResult(NamedTuple):
    controllable: bool
    rank: int
    spectral: SpectralReport

    @property
    def criteria_agree(self) -> bool:
        return self.controllable == self.spectral.controllable


def kalman_matrix(sys: LinearizedSystem, normalized: bool = True) -> np.ndarray:
    """``[b, A b, ..., A^(N-1) b]``.

    With ``normalized`` the monomials are replaced by Chebyshev polynomials
    of ``A`` shifted and scaled to spectrum ``[-1, 1]``, and each column is
    scaled to unit length.  Column ``k`` is then a combination of
    ``b, ..., A^k b`` with a nonzero leading coefficient, so the column
    space, hence the rank, is unchanged.  The monomial basis is a Vandermonde
    matrix in the eigenvalues and loses about a digit per column when they
    cluster; the Chebyshev basis keeps the singular values of controllable
    configurations well above the rank threshold.
    """
    A = np.asarray(sys.A)
    b = np.asarray(sys.b, dtype=float)
    if not normalized:
        cols = [b]
        for _ in range(sys.N - 1):
            cols.append(A @ cols[-1])
        return np.stack(cols, axis=1)
    lam = np.asarray(sys.eigenvalues)
    c, r = 0.5 * (lam.max() + lam.min()), 0.5 * (lam.max() - lam.min())
    S = (A - c * np.eye(sys.N)) / r if r > 0 else A
    cols = [b, S @ b]
    for _ in range(sys.N - 2):
        cols.append(2.0 * S @ cols[-1] - cols[-2])
    cols = cols[: sys.N]
    return np.stack([col / n if (n := np.linalg.norm(col)) > 0 else col for col in cols], axis=1)


def kalman_test(sys: LinearizedSystem) -> KalmanResult:
    """Rank of the Kalman matrix (singular values above ``1e-10`` times the
    largest) together with the spectral criterion: pairwise distinct
    eigenvalues and nonzero modal coefficients."""
    sv = np.linalg.svd(kalman_matrix(sys), compute_uv=False)
    rank = int(np.sum(sv > RANK_TOL * sv[0]))
    lam = np.asarray(sys.eigenvalues)
    scale = max(float(np.abs(lam).max()), 1e-300)
    gap = float(np.min(np.abs(np.diff(lam)))) / scale if lam.size > 1 else math.inf
    coef = float(np.min(np.abs(sys.alpha)))
    spec = SpectralReport(
        distinct_eigenvalues=gap > SPECTRAL_TOL,
        nonzero_coefficients=coef > SPECTRAL_TOL,
        min_gap=gap,
        min_coefficient=coef,
    )
    return KalmanResult(rank == sys.N, rank, spec)


# ---------------------------------------------------------------------------
# Gramian and steering
# ---------------------------------------------------------------------------


def controllability_gramian(sys: LinearizedSystem, T: float) -> np.ndarray:
    """``W = int_0^T e^{A s} b b^T e^{A^T s} ds`` by adaptive vector quadrature.

    The integrand is written in the eigenbasis of ``A`` so that no matrix
    exponential is needed inside the quadrature.
    """
    if not T > 0:
        raise ValueError("horizon must be positive")
    lam, al = np.asarray(sys.eigenvalues), np.asarray(sys.alpha)
    outer = np.outer(al, al)
    lsum = lam[:, None] + lam[None, :]

    def f(s):
        return outer * np.exp(lsum * s)

    G, _ = integrate.quad_vec(f, 0.0, T, epsabs=0.0, epsrel=1e-13, limit=400)
    P = np.asarray(sys.P)
    W = P @ G @ P.T
    return 0.5 * (W + W.T)


def gramian_closed_form(sys: LinearizedSystem, T: float) -> np.ndarray:
    """Closed form of the same integral, for cross-checking."""
    lam, al = np.asarray(sys.eigenvalues), np.asarray(sys.alpha)
    ls = lam[:, None] + lam[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(np.abs(ls * T) < 1e-12, T, np.expm1(ls * T) / ls)
    P = np.asarray(sys.P)
    return P @ (np.outer(al, al) * k) @ P.T


def augmented_gramian(sys: LinearizedSystem, T: float) -> np.ndarray:
    """Gramian of the position-augmented system ``x' = v, v' = A v + b u``."""
    N = sys.N
    F = np.zeros((2 * N, 2 * N))
    F[:N, N:] = np.eye(N)
    F[N:, N:] = sys.A
    g = np.concatenate([np.zeros(N), sys.b])

    def f(s):
        e = linalg.expm(F * s) @ g
        return np.outer(e, e)

    W, _ = integrate.quad_vec(f, 0.0, T, epsabs=0.0, epsrel=1e-12, limit=200)
    return 0.5 * (W + W.T)


def _check_gramian(W: np.ndarray) -> None:
    ev = np.linalg.eigvalsh(W)
    if ev[-1] <= 0 or ev[0] <= RANK_TOL * ev[-1]:
        raise SingularGramianError(
            f"Gramian is singular: eigenvalue ratio {ev[0] / ev[-1] if ev[-1] > 0 else 0.0:.3g}, "
            f"numerical rank {int(np.sum(ev > RANK_TOL * max(ev[-1], 0.0)))} of {W.shape[0]}"
        )


@dataclass(frozen=True)
class SteeringControl:
    """Open-loop minimal-energy control ``u_i(t) = b^T e^{A^T (T - t)} eta``.

    Calling it returns the ``(N, d)`` control at time ``t``; only the row of
    the controlled agent is nonzero.
    """

    sys: LinearizedSystem
    T: float
    eta: np.ndarray
    gramian: np.ndarray

    def agent_input(self, t) -> np.ndarray:
        """Input of the controlled agent, shape ``(d,)`` (or ``(len(t), d)``)."""
        P, lam = np.asarray(self.sys.P), np.asarray(self.sys.eigenvalues)
        modal = P.T @ self.eta  # (N, d)
        t = np.asarray(t, dtype=float)
        w = np.exp(np.multiply.outer(self.T - t, lam)) * np.asarray(self.sys.alpha)
        return w @ modal

    def __call__(self, t) -> np.ndarray:
        u = np.zeros((self.sys.N, self.eta.shape[1]))
        u[self.sys.control_index] = self.agent_input(t)
        return u

    def energy(self) -> float:
        """``int_0^T ||u||^2 dt``; equals ``tr(eta^T W eta)``."""
        return float(np.trace(self.eta.T @ self.gramian @ self.eta))


def _as_states(z, N):
    if isinstance(z, AgentCloud):
        return np.asarray(z.v, dtype=float)
    z = np.asarray(z, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def minimal_energy_steering(
    sys: LinearizedSystem, initial, target, T: float, *, augmented: bool = False
) -> SteeringControl:
    """Minimal-energy control steering the linearized consensus parameters
    from ``initial`` to ``target`` in time ``T`` through agent ``i`` only.

    ``initial``/``target`` are ``(N, d)`` arrays of consensus parameters or
    agent clouds (their ``v`` is used).  The ``d`` axes decouple and share
    one Gramian.  With ``augmented=True`` the integrator states ``x`` are
    appended; that system always has rank ``N + 1`` because ``v - A x``
    only moves along ``b``, so a :class:`SingularGramianError` follows.
    """
    if not T > 0:
        raise ValueError("horizon must be positive")
    if augmented:
        _check_gramian(augmented_gramian(sys, T))
    z0, z1 = _as_states(initial, sys.N), _as_states(target, sys.N)
    if z0.shape != z1.shape or z0.shape[0] != sys.N:
        raise ValueError("initial and target must be (N, d) with matching shapes")
    W = controllability_gramian(sys, T)
    _check_gramian(W)
    eAT = np.asarray(sys.P) @ np.diag(np.exp(np.asarray(sys.eigenvalues) * T)) @ np.asarray(sys.P).T
    rhs = z1 - eAT @ z0
    eta = linalg.solve(W, rhs, assume_a="pos")
    return SteeringControl(sys, float(T), eta, W)


def simulate_linear(sys: LinearizedSystem, z0, control: SteeringControl, steps: int = 2000) -> np.ndarray:
    """Forward RK4 of ``z' = A z + b u_i(t)``; returns ``z(T)``."""
    A = np.asarray(sys.A)
    z = _as_states(z0, sys.N).copy()
    i, T = sys.control_index, control.T
    h = T / steps

    def f(t, z):
        dz = A @ z
        dz[i] += control.agent_input(t)
        return dz

    t = 0.0
    for _ in range(steps):
        k1 = f(t, z)
        k2 = f(t + 0.5 * h, z + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, z + 0.5 * h * k2)
        k4 = f(t + h, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return z


def simulate_nonlinear(initial: AgentCloud, kernel: CommKernel, control, T: float, steps: int = 2000) -> AgentCloud:
    """Forward RK4 of the full alignment system under an open-loop ``control(t)``."""
    from .dynamics import _accel

    x, v = np.array(initial.x, dtype=float), np.array(initial.v, dtype=float)
    h = T / steps

    def f(t, x, v):
        return v, _accel(x, v, kernel) + control(t)

    t = 0.0
    for _ in range(steps):
        a1, b1 = f(t, x, v)
        a2, b2 = f(t + 0.5 * h, x + 0.5 * h * a1, v + 0.5 * h * b1)
        a3, b3 = f(t + 0.5 * h, x + 0.5 * h * a2, v + 0.5 * h * b2)
        a4, b4 = f(t + h, x + h * a3, v + h * b3)
        x = x + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        v = v + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        t += h
    return AgentCloud(x, v)


def controllability_report(x_tilde, kernel: CommKernel, i: Optional[int] = None) -> list:
    """Kalman results for one or every choice of controlled agent."""
    x = np.asarray(x_tilde, dtype=float)
    idx = range(x.shape[0]) if i is None else [i]
    return [(j, kalman_test(linearize_at_consensus(x, kernel, j))) for j in idx]
