"""Command-line entry point.

Every subcommand takes ``--config FILE`` (flat ``key = value`` text) and
flag overrides named after the configuration keys.  Exit status: 0 on
success, 2 for configuration errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import consensus_region_check, stabilization_bounds, steering_time_bound
from .config import KEYS, ConfigError, build_config, parse_value, read_config_file, two_agent_params
from .controllability import SingularGramianError, controllability_report
from .core import NonIntegrableKernelError, disagreement_V
from .csvio import write_table_csv, write_trajectory_csv
from .dynamics import IntegrationError, integrate, two_agent_invariant_residual, two_agent_relative
from .experiments import compare, initial_cloud, kernel_for, run
from .optimal import ConvergenceError, classify_costate_region

log = logging.getLogger("sparse_alignment")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_FLAGS = {"plot", "stop_on_entry"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key = value configuration file")
    g = p.add_argument_group("configuration overrides")
    for key in KEYS:
        names = {f"--{key}", f"--{key.replace('_', '-')}"}
        if key in _FLAGS:
            g.add_argument(*sorted(names), dest=key, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            g.add_argument(*sorted(names), dest=key, default=None, metavar="VALUE")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _config(args, defaults=None, **forced):
    file_vals = read_config_file(args.config) if args.config else {}
    flags = {k: parse_value(k, getattr(args, k)) for k in KEYS if getattr(args, k, None) is not None}
    return build_config(defaults or {}, file_vals, flags, forced)


def _print_summary(summary: dict, out=None) -> None:
    out = out or sys.stdout
    for k, v in summary.items():
        if isinstance(v, float):
            v = "inf" if math.isinf(v) else f"{v:.10g}"
        print(f"{k}: {v}", file=out)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    res = run(cfg)
    path = write_trajectory_csv(res.trajectory, cfg.output, cfg.output_stride)
    _print_summary(res.summary)
    print(f"csv: {path}")
    if cfg.plot:
        from .plotting import trajectory_figures

        for fig in trajectory_figures(res.trajectory, path, cfg.strategy):
            print(f"figure: {fig}")
    return EXIT_OK


def cmd_compare(args) -> int:
    base = _config(args)
    names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    cfgs = [base.replace(strategy=s) for s in names]
    rows = compare(cfgs)
    width = max(len(r["strategy"]) for r in rows)
    print(f"{'strategy':<{width}}  entry_time  interventions  control_effort  final_sqrtV  final_gammaX")
    for r in rows:
        et = "never" if r["entry_time"] is None else f"{r['entry_time']:.4f}"
        g = "nan" if r["final_gammaX"] is None else f"{r['final_gammaX']:.4g}"
        print(f"{r['strategy']:<{width}}  {et:>10}  {r['interventions']:>13}  {r['control_effort']:>14.6g}"
              f"  {r['final_sqrtV']:>11.4g}  {g:>11}")
    path = write_table_csv(rows, base.output)
    print(f"csv: {path}")
    if base.plot:
        from .plotting import plot_comparison

        trajs = {c.strategy: run(c).trajectory for c in cfgs}
        print(f"figure: {plot_comparison(trajs, Path(path).with_suffix('').as_posix() + '_sqrtV.png')}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _config(args)
    cloud, kernel = initial_cloud(cfg), kernel_for(cfg)
    b = stabilization_bounds(cloud, kernel, cfg.M, cfg.T)
    Xc, Tc = steering_time_bound(cloud, kernel, cfg.M, sampled=False)
    _print_summary({
        "V0": disagreement_V(cloud),
        "in_consensus_region": consensus_region_check(cloud, kernel),
        "X_bar": b.X_bar,
        "T0": b.T0,
        "tau0": b.tau0,
        "n_bound": b.n_bound,
        "continuous_X_bar": Xc,
        "continuous_T0": Tc,
    })
    return EXIT_OK


def cmd_controllability(args) -> int:
    cfg = _config(args)
    cloud, kernel = initial_cloud(cfg), kernel_for(cfg)
    agent = None if cfg.agent is None else cfg.agent - 1
    if agent is not None and agent >= cloud.N:
        raise ConfigError(f"agent must lie in 1..{cloud.N}")
    print("agent  controllable  rank  distinct_eigenvalues  min_gap      min_coefficient  criteria_agree")
    for i, r in controllability_report(cloud.x, kernel, agent):
        s = r.spectral
        print(f"{i + 1:>5}  {str(r.controllable):>12}  {r.rank:>4}  {str(s.distinct_eigenvalues):>20}"
              f"  {s.min_gap:<11.4g}  {s.min_coefficient:<15.4g}  {r.criteria_agree}")
    return EXIT_OK


def cmd_optimal(args) -> int:
    cfg = _config(args, strategy="optimal")
    res = run(cfg)
    e = res.extremal
    path = write_trajectory_csv(res.trajectory, cfg.output, cfg.output_stride)
    consistent = float(np.mean(e.pmp_residual() <= cfg.tol))
    _print_summary(dict(res.summary, pmp_consistent_fraction=consistent,
                        terminal_region=classify_costate_region(e.p_v[-1], cfg.sparsity_weight).label))
    print(f"csv: {path}")
    if cfg.plot:
        from .plotting import trajectory_figures

        for fig in trajectory_figures(res.trajectory, path, "optimal"):
            print(f"figure: {fig}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _config(args, {"init": "two-agent", "T": 50.0})
    pair = two_agent_params(cfg.init) if cfg.init != "two-agent" else (0.0, 2.0)
    if pair is None:
        raise ConfigError("oracle needs init = two-agent(x0,v0)")
    x0, v0 = pair
    cloud, kernel = initial_cloud(cfg), kernel_for(cfg)
    traj = integrate(cloud, kernel, None, cfg.T, cfg.h)
    x, v = two_agent_relative(traj)
    c = math.atan(x0) + v0
    _print_summary({
        "invariant": c,
        "predicted_consensus": abs(c) <= 0.5 * math.pi,
        "predicted_limit_abs_v": max(abs(c) - 0.5 * math.pi, 0.0),
        "final_abs_v": float(abs(v[-1])),
        "final_abs_x": float(abs(x[-1])),
        "invariant_residual": float(np.max(np.abs(two_agent_invariant_residual(x, v, x0, v0)))),
    })
    if kernel.K != 1.0 or kernel.sigma != 1.0 or kernel.beta != 1.0:
        log.warning("the invariant v + arctan(x) holds for K = sigma = beta = 1 only")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparse-alignment", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    specs = [
        ("simulate", cmd_simulate, "integrate one strategy and write the trajectory CSV"),
        ("compare", cmd_compare, "run several strategies on the same initial data"),
        ("bounds", cmd_bounds, "print the steering-time, sampling-time and consensus-number bounds"),
        ("controllability", cmd_controllability, "Kalman test of the linearization at the initial positions"),
        ("optimal", cmd_optimal, "solve the l1-penalized optimal control problem by forward-backward sweep"),
        ("oracle", cmd_oracle, "two-agent invariant check against the analytic consensus criterion"),
    ]
    for name, fn, help_ in specs:
        sp = sub.add_parser(name, help=help_, description=help_)
        _add_config_flags(sp)
        if name == "compare":
            sp.add_argument("--strategies", default="sparse,distributed-uniform",
                            help="comma-separated strategies (default: %(default)s)")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, NonIntegrableKernelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, ConvergenceError, SingularGramianError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
