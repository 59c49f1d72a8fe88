"""State representation, bilinear forms, communication kernels and the
consensus-region threshold.

An agent cloud holds ``N`` agents in ``R^d``: positions ``x`` (the main
state) and consensus parameters ``v``.  Everything here is a pure function of
its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

TIE_TOL = 1e-10
PSD_TOL = 1e-12


class NonIntegrableKernelError(ValueError):
    """The rate function is not in L1(0, inf), so the threshold is undefined."""


@dataclass(frozen=True)
class AgentCloud:
    """Positions ``x`` and consensus parameters ``v``, both ``(N, d)``."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        v = np.array(self.v, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if x.shape != v.shape or x.ndim != 2:
            raise ValueError(f"x and v must share an (N, d) shape, got {x.shape} and {v.shape}")
        if x.shape[0] < 2:
            raise ValueError("an agent cloud needs at least two agents")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("agent states must be finite")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def with_v(self, v) -> "AgentCloud":
        return AgentCloud(self.x, v)


# ---------------------------------------------------------------------------
# communication kernels
# ---------------------------------------------------------------------------


class CommKernel:
    """A nonincreasing, nonnegative rate function ``a(r)`` on ``[0, inf)``.

    Subclasses provide ``__call__``.  ``of_squared`` and ``derivative_over_r``
    exist so the hot loops can avoid square roots and the ``0/0`` at
    coincident agents.
    """

    integrable: bool = False

    def __call__(self, r):
        raise NotImplementedError

    def of_squared(self, r2):
        return self(np.sqrt(r2))

    @property
    def a0(self) -> float:
        return float(self(0.0))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        step = 1e-6 * np.maximum(1.0, r)
        lo = np.maximum(r - step, 0.0)
        return (self(r + step) - self(lo)) / (r + step - lo)

    def derivative_over_r(self, r):
        """``a'(r) / r`` with the value 0 at ``r = 0``."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        nz = r > 0
        out[nz] = self.derivative(r[nz]) / r[nz]
        return out

    def tail_integral(self, lower, scale: float):
        """Closed form of ``int_lower^inf a(scale * r) dr`` or ``None``."""
        return None


@dataclass(frozen=True)
class CuckerSmaleKernel(CommKernel):
    """``a(r) = K / (sigma^2 + r^2)^beta``."""

    K: float = 1.0
    sigma: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.K > 0 or not self.sigma > 0 or not self.beta >= 0:
            raise ValueError("Cucker-Smale kernel needs K > 0, sigma > 0, beta >= 0")

    @property
    def integrable(self) -> bool:
        return self.beta > 0.5

    def __call__(self, r):
        return self.of_squared(np.square(r))

    def of_squared(self, r2):
        base = self.sigma**2 + r2
        if self.beta == 1.0:
            return self.K / base
        return self.K * base ** (-self.beta)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return r * self.derivative_over_r(r)

    def derivative_over_r(self, r):
        r = np.asarray(r, dtype=float)
        return -2.0 * self.beta * self.K * (self.sigma**2 + r * r) ** (-self.beta - 1.0)

    def tail_integral(self, lower, scale: float):
        if not self.integrable:
            return None
        u0 = scale * np.asarray(lower, dtype=float) / self.sigma
        pre = self.K * self.sigma ** (1.0 - 2.0 * self.beta) / scale
        if self.beta == 1.0:
            return pre * (0.5 * np.pi - np.arctan(u0))
        # int_{u0}^inf (1+u^2)^-beta du = B(1/(1+u0^2); beta-1/2, 1/2) / 2
        a, b = self.beta - 0.5, 0.5
        t0 = 1.0 / (1.0 + u0 * u0)
        return pre * 0.5 * special.beta(a, b) * special.betainc(a, b, t0)


@dataclass(frozen=True)
class GeneralKernel(CommKernel):
    """A user-supplied rate function with a declared integrability flag.

    Monotonicity and nonnegativity are spot-checked on a 1024-point grid of
    ``[0, check_radius]``; they cannot be proven for arbitrary callables.
    """

    func: Callable[[np.ndarray], np.ndarray]
    integrable: bool = False
    deriv: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    check_radius: float = 100.0

    def __post_init__(self):
        grid = np.linspace(0.0, self.check_radius, 1024)
        vals = np.asarray(self.func(grid), dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("rate function must be finite and nonnegative")
        if np.any(np.diff(vals) > 1e-12 * max(1.0, float(np.max(vals)))):
            raise ValueError("rate function must be nonincreasing")

    def __call__(self, r):
        return np.asarray(self.func(np.asarray(r, dtype=float)), dtype=float)

    def derivative(self, r):
        if self.deriv is not None:
            return np.asarray(self.deriv(np.asarray(r, dtype=float)), dtype=float)
        return super().derivative(r)


# ---------------------------------------------------------------------------
# bilinear forms and derived quantities
# ---------------------------------------------------------------------------


def _as_agents(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def mean_consensus(cloud: AgentCloud) -> np.ndarray:
    """Mean consensus parameter ``v_bar``; invariant under the free dynamics."""
    return cloud.v.mean(axis=0)


def perp_projection(cloud: AgentCloud) -> np.ndarray:
    """Component of ``v`` orthogonal to the consensus directions: ``v_i - v_bar``."""
    return cloud.v - cloud.v.mean(axis=0)


def bilinear_B(u, v) -> float:
    """``B(u, v) = 1/(2 N^2) sum_ij <u_i - u_j, v_i - v_j>``.

    Evaluated from the pairwise definition; ``O(N^2 d)``.
    """
    u, v = _as_agents(u), _as_agents(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    n = u.shape[0]
    du = u[:, None, :] - u[None, :, :]
    dv = v[:, None, :] - v[None, :, :]
    return float(np.einsum("ijk,ijk->", du, dv) / (2.0 * n * n))


def dispersion(x) -> np.ndarray:
    """``X = B(x, x)`` for one cloud ``(N, d)`` or a stack ``(..., N, d)``."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean(axis=-2, keepdims=True)
    return np.einsum("...ik,...ik->...", c, c) / x.shape[-2]


def dispersion_X(cloud: AgentCloud) -> float:
    return float(dispersion(cloud.x))


def disagreement_V(cloud: AgentCloud) -> float:
    return float(dispersion(cloud.v))


def perp_norms(v) -> np.ndarray:
    """``||v_i - v_bar||`` per agent; works on stacks ``(..., N, d)``."""
    v = np.asarray(v, dtype=float)
    return np.linalg.norm(v - v.mean(axis=-2, keepdims=True), axis=-1)


def interaction_weights(x: np.ndarray, kernel: CommKernel) -> np.ndarray:
    """Matrix ``a(||x_j - x_i||) / N``."""
    diff = x[None, :, :] - x[:, None, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    return kernel.of_squared(r2) / x.shape[0]


def laplacian(cloud: AgentCloud, kernel: CommKernel) -> np.ndarray:
    """Graph Laplacian ``L_x = D - A`` of ``A_ij = a(||x_j - x_i||)/N``."""
    A = interaction_weights(cloud.x, kernel)
    return np.diag(A.sum(axis=1)) - A


# ---------------------------------------------------------------------------
# consensus threshold
# ---------------------------------------------------------------------------


def _require_integrable(kernel: CommKernel) -> None:
    if not kernel.integrable:
        raise NonIntegrableKernelError(
            "threshold requires an integrable rate function (beta > 1/2 for Cucker-Smale)"
        )


def gamma_quadrature(X: float, kernel: CommKernel, N: int) -> float:
    """Threshold by adaptive quadrature after mapping ``r = sqrt(X) + tan(theta)``."""
    _require_integrable(kernel)
    s = math.sqrt(max(float(X), 0.0))
    c = math.sqrt(2.0 * N)

    def f(theta):
        t = math.tan(theta)
        return float(kernel(c * (s + t))) * (1.0 + t * t)

    val, _ = integrate.quad(f, 0.0, 0.5 * math.pi, epsabs=1e-10, epsrel=1e-10, limit=400)
    return val


def gamma_threshold(X, kernel: CommKernel, N: int, method: str = "auto"):
    """Consensus threshold ``gamma(X) = int_{sqrt X}^inf a(sqrt(2N) r) dr``.

    ``method`` is ``"auto"`` (closed form when the kernel has one, otherwise
    quadrature), ``"closed"`` or ``"quadrature"``.  Array input is accepted;
    the quadrature path loops over it.
    """
    _require_integrable(kernel)
    X = np.asarray(X, dtype=float)
    if np.any(X < 0):
        raise ValueError("dispersion must be nonnegative")
    scale = math.sqrt(2.0 * N)
    if method in ("auto", "closed"):
        closed = kernel.tail_integral(np.sqrt(X), scale)
        if closed is not None:
            return float(closed) if closed.ndim == 0 else closed
        if method == "closed":
            raise ValueError("kernel has no closed-form tail integral")
    elif method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if X.ndim == 0:
        return gamma_quadrature(float(X), kernel, N)
    return np.vectorize(lambda s: gamma_quadrature(s, kernel, N), otypes=[float])(X)


@dataclass(frozen=True)
class Diagnostics:
    X: float
    V: float
    gamma_of_X: float
    max_perp_norm: float

    @property
    def sqrtV(self) -> float:
        return math.sqrt(self.V)


def diagnostics(cloud: AgentCloud, kernel: CommKernel) -> Diagnostics:
    X = dispersion_X(cloud)
    return Diagnostics(
        X=X,
        V=disagreement_V(cloud),
        gamma_of_X=gamma_threshold(X, kernel, cloud.N),
        max_perp_norm=float(perp_norms(cloud.v).max()),
    )
