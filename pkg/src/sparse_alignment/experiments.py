"""Initial-data generators and the experiment runners behind the CLI."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import stabilization_bounds, consensus_region_check
from .config import ConfigError, ExperimentConfig, explicit_arrays, two_agent_params
from .controls import DistributedFeedback, SparseFeedback
from .core import AgentCloud, CuckerSmaleKernel, disagreement_V
from .dynamics import Trajectory, integrate, sampling_solve, two_agent_cloud
from .optimal import forward_backward_solve

log = logging.getLogger(__name__)


def example_symmetric() -> AgentCloud:
    """Four agents on the plane, each moving radially outward."""
    x = np.array([[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0]])
    return AgentCloud(x, x.copy())


def example_circle_20() -> AgentCloud:
    """Twenty agents with quasi-periodic positions and consensus parameters."""
    i = np.arange(1, 21, dtype=float)
    r2, r3 = math.sqrt(2.0), math.sqrt(3.0)
    x = np.stack([np.cos(i + r2), np.cos(i + 2.0 * r2)], axis=1)
    v = np.stack([2.0 * np.sin(i * r3 - 1.0), 2.0 * np.sin(i * r3 - 2.0)], axis=1)
    return AgentCloud(x, v)


def random_cloud(N: int, d: int, seed: int, scale: float = 1.0) -> AgentCloud:
    rng = np.random.default_rng(seed)
    return AgentCloud(scale * rng.normal(size=(N, d)), scale * rng.normal(size=(N, d)))


# rate-function amplitude each generator is usually run with
_DEFAULT_K = {"example-symmetric": 2.0, "example-circle-20": 1.0, "two-agent": 1.0}


def initial_cloud(cfg: ExperimentConfig) -> AgentCloud:
    init = cfg.init.strip()
    if cfg.x0 is not None or init == "explicit":
        x, v = explicit_arrays(cfg)
        return AgentCloud(x, v)
    pair = two_agent_params(init)
    if pair is not None:
        return two_agent_cloud(*pair)
    if init == "two-agent":
        return two_agent_cloud(0.0, 2.0)
    if init == "example-symmetric":
        return example_symmetric()
    if init == "example-circle-20":
        return example_circle_20()
    if init == "random":
        return random_cloud(cfg.N, cfg.d or 2, cfg.seed)
    raise ConfigError(f"unknown initial data {init!r}")


def kernel_for(cfg: ExperimentConfig) -> CuckerSmaleKernel:
    if cfg.K is not None:
        K = cfg.K
    else:
        name = "two-agent" if cfg.init.startswith("two-agent") else cfg.init
        K = _DEFAULT_K.get(name, 1.0)
    return CuckerSmaleKernel(K=K, sigma=cfg.sigma, beta=cfg.beta)


@dataclass
class RunResult:
    trajectory: Trajectory
    summary: dict
    config: ExperimentConfig
    extremal: object = None
    initial: Optional[AgentCloud] = field(default=None, repr=False)


def _sampling_time(cfg, cloud, kernel) -> Optional[float]:
    if cfg.tau == "auto":
        if not kernel.integrable:
            raise ConfigError("tau = auto needs an integrable rate function (beta > 1/2)")
        tau = stabilization_bounds(cloud, kernel, cfg.M).tau0
        return None if math.isinf(tau) else tau
    return cfg.tau


def run(cfg: ExperimentConfig, cloud: Optional[AgentCloud] = None) -> RunResult:
    """Execute one configured experiment.

    The sparse law is sampled with ``tau`` (continuous when ``tau`` is
    none); distributed laws are evaluated continuously.  The ``optimal``
    strategy solves the sweep on ``grid_points`` intervals of ``[0, T]``.
    """
    cloud = initial_cloud(cfg) if cloud is None else cloud
    kernel = kernel_for(cfg)
    t0 = time.perf_counter()
    extremal = None
    tau_used = None
    kw = dict(stop_on_entry=cfg.stop_on_entry)
    if cfg.strategy == "none":
        traj = integrate(cloud, kernel, None, cfg.T, cfg.h, **kw)
    elif cfg.strategy == "sparse":
        tau_used = _sampling_time(cfg, cloud, kernel)
        pol = SparseFeedback(kernel, cfg.M)
        if tau_used is None:
            traj = integrate(cloud, kernel, pol, cfg.T, cfg.h, **kw)
        else:
            traj = sampling_solve(cloud, kernel, pol, tau_used, cfg.T, min(cfg.h, tau_used), **kw)
    elif cfg.strategy.startswith("distributed-"):
        mode = cfg.strategy.split("-", 1)[1]
        pol = DistributedFeedback(cfg.M, mode, cloud.v, kernel if kernel.integrable else None)
        traj = integrate(cloud, kernel, pol, cfg.T, cfg.h, **kw)
    elif cfg.strategy == "optimal":
        extremal = forward_backward_solve(
            cloud, kernel, cfg.T, cfg.sparsity_weight, cfg.M, cfg.grid_points, cfg.damping, cfg.max_iter, cfg.tol
        )
        traj = extremal.to_trajectory(kernel)
    else:  # pragma: no cover - validated earlier
        raise ConfigError(f"unknown strategy {cfg.strategy!r}")
    elapsed = time.perf_counter() - t0
    return RunResult(traj, summarize(traj, cloud, kernel, cfg, tau_used, elapsed, extremal), cfg, extremal, cloud)


def summarize(traj, cloud, kernel, cfg, tau_used=None, elapsed=None, extremal=None) -> dict:
    s = {
        "strategy": cfg.strategy,
        "N": cloud.N,
        "d": cloud.d,
        "T": float(traj.times[-1]),
        "tau": tau_used,
        "entry_time": traj.entry_time,
        "interventions": traj.interventions(),
        "control_effort": traj.control_effort(),
        "final_sqrtV": float(np.sqrt(traj.V[-1])),
        "final_gammaX": float(traj.gamma[-1]) if kernel.integrable else None,
        "final_X": float(traj.X[-1]),
    }
    if kernel.integrable:
        s["in_consensus_region_at_start"] = consensus_region_check(cloud, kernel)
        if disagreement_V(cloud) > 0:
            b = stabilization_bounds(cloud, kernel, cfg.M, cfg.T)
            s.update({f"bound_{k}": v for k, v in b.as_dict().items()})
    if extremal is not None:
        s["cost"] = extremal.cost
        s["sweep_iterations"] = extremal.iterations
    if elapsed is not None:
        s["runtime_s"] = elapsed
    return s


def compare(configs: list) -> list:
    """Run several strategies on shared initial data; one summary row each."""
    if not configs:
        return []
    ref = initial_cloud(configs[0])
    refk = kernel_for(configs[0])
    rows = []
    for cfg in configs:
        c, k = initial_cloud(cfg), kernel_for(cfg)
        if c.x.shape != ref.x.shape or not (np.array_equal(c.x, ref.x) and np.array_equal(c.v, ref.v)):
            raise ConfigError("compared runs must share their initial data")
        if k != refk:
            raise ConfigError("compared runs must share the rate function")
        res = run(cfg, ref)
        s = res.summary
        rows.append({key: s.get(key) for key in (
            "strategy", "entry_time", "interventions", "control_effort", "final_sqrtV", "final_gammaX", "final_X",
        )})
    return rows
