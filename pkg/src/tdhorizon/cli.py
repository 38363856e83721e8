"""Command line interface.

Three subcommands:

  analyze   horizon certificates, fixed points, and approximation bounds
            for one problem, as a JSON report
  run       one solver or sampled run, as a CSV trace plus a verdict line
  sweep     a grid of (algorithm, horizon, seed) cells, each a CSV, plus
            a deterministic summary.json

Outputs are deterministic: rerunning a command writes byte-identical files.
A diverging run is a faithfully reported outcome, not a process failure;
the exit code is 2 only for configuration and input errors.

The default output directory is $TDHORIZON_OUT, falling back to the current
directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    ConfigurationError,
    EnumerationLimitError,
    SingularSystemError,
    StationaryDistributionError,
)
from .operators import (
    DEFAULT_N_MAX,
    contraction_horizon,
    error_bounds,
    fixed_point,
    hurwitz_horizon,
    projection,
    true_solution,
)
from .problems import ProblemSpec, load_problem
from .reports import json_report, write_iter_trace, write_json, write_stoch_trace
from .sampling import DEFAULT_SCHEDULE, RNG_LABEL, StepSizeSchedule, run_stochastic
from .solvers import (
    curvature,
    find_stable_alpha,
    gradient_descent_run,
    npvi_run,
    schur_certificate,
    system_iteration_run,
)
from .version import __version__

OUTPUT_DIR_ENV = "TDHORIZON_OUT"

ALGORITHMS = ("npvi", "gd_i", "gd_ii", "system", "ntd", "ngtd")
_STOCHASTIC = ("ntd", "ngtd")
_GRADIENT = ("gd_i", "gd_ii")


def normalize_algorithm(token) -> str:
    name = str(token).strip().lower().replace("-", "_")
    if name not in ALGORITHMS:
        raise ConfigurationError(
            f"unknown algorithm {token!r}; expected one of: {', '.join(ALGORITHMS)}"
        )
    return name


@dataclass(frozen=True)
class SweepConfig:
    """Validated grid for the sweep command."""

    n_values: Tuple[int, ...]
    algorithms: Tuple[str, ...]
    seeds: Tuple[int, ...]
    output_dir: str

    def __post_init__(self):
        n_values = tuple(self.n_values)
        if not n_values:
            raise ConfigurationError("sweep needs at least one horizon n")
        for n in n_values:
            if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
                raise ConfigurationError(f"sweep horizon must be a positive integer, got {n!r}")
        algorithms = tuple(normalize_algorithm(a) for a in self.algorithms)
        if not algorithms:
            raise ConfigurationError("sweep needs at least one algorithm")
        seeds = tuple(self.seeds)
        if not seeds:
            raise ConfigurationError("sweep needs at least one seed")
        for seed in seeds:
            if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
                raise ConfigurationError(f"sweep seed must be a nonnegative integer, got {seed!r}")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigurationError("sweep output_dir must be a nonempty string")
        object.__setattr__(self, "n_values", tuple(int(n) for n in n_values))
        object.__setattr__(self, "algorithms", algorithms)
        object.__setattr__(self, "seeds", tuple(int(s) for s in seeds))


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV) or os.getcwd()


def _parse_schedule(text: str) -> StepSizeSchedule:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigurationError(
            f"schedule must be three comma-separated numbers a,b,c, got {text!r}"
        )
    try:
        a, b, c = (float(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"schedule has a non-numeric part: {text!r}")
    return StepSizeSchedule(a, b, c)


def _parse_seeds(text: str) -> List[int]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ConfigurationError("at least one seed is required")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ConfigurationError(f"seeds must be comma-separated integers, got {text!r}")


def resolve_horizon(setup, algorithm: str, n: Optional[int]) -> int:
    """Pick n when not given: the contraction horizon for the projected
    methods, and the larger of both certificate horizons for the methods
    that iterate the bootstrapped system itself."""
    if n is not None:
        if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
            raise ConfigurationError(f"n must be a positive integer, got {n!r}")
        return int(n)
    if algorithm in ("npvi", "gd_i", "gd_ii"):
        return contraction_horizon(setup)
    report = hurwitz_horizon(setup)
    n_bar = report.n_bar_star if report.n_bar_star is not None else report.n_star
    return max(report.n_star, n_bar)


def _resolve_stochastic_schedule(alpha: Optional[float], schedule: Optional[str]):
    if alpha is not None and schedule is not None:
        raise ConfigurationError("pass either --alpha or --schedule, not both")
    if alpha is not None:
        return float(alpha)
    if schedule is not None:
        return _parse_schedule(schedule)
    return DEFAULT_SCHEDULE


def _schedule_metadata(schedule) -> str:
    if isinstance(schedule, StepSizeSchedule):
        return schedule.label()
    return f"constant({float(schedule)!r})"


# ---------------------------------------------------------------- analyze


def _solution_entry(problem: ProblemSpec, n: int, n_star: int) -> Dict:
    setup = problem.setup
    entry: Dict = {"n": int(n)}
    try:
        theta = fixed_point(setup, n)
        entry["theta"] = theta.tolist()
        entry["error"] = None
    except SingularSystemError as exc:
        entry["theta"] = None
        entry["error"] = str(exc)
        entry["bound_value"] = None
        entry["bound_gap"] = None
        entry["actual_value_error"] = None
        entry["actual_gap"] = None
        entry["note"] = "no unique fixed point at this n"
        return entry
    if n < n_star:
        entry["bound_value"] = None
        entry["bound_gap"] = None
        entry["actual_value_error"] = None
        entry["actual_gap"] = None
        entry["note"] = (
            f"approximation bounds need n >= n_star = {n_star}, where the "
            "projected backup is a certified contraction"
        )
    else:
        report = error_bounds(setup, n)
        entry["bound_value"] = report.bound_value
        entry["bound_gap"] = report.bound_gap
        entry["actual_value_error"] = report.actual_value_error
        entry["actual_gap"] = report.actual_gap
    return entry


def cmd_analyze(args) -> int:
    problem = load_problem(args.problem)
    setup = problem.setup
    n_max = args.n_max if args.n_max is not None else DEFAULT_N_MAX
    horizon = hurwitz_horizon(setup, n_max=n_max)
    proj = projection(setup)
    v_pi, best_coef = true_solution(setup)

    extras = [int(n) for n in (args.n or [])]
    for n in extras:
        if n < 1:
            raise ConfigurationError(f"--n must be positive, got {n}")
    targets = {1, horizon.n_star}
    if horizon.n_bar_star is not None:
        targets.add(horizon.n_bar_star)
    targets.update(extras)

    report = {
        "tool_version": __version__,
        "problem": {
            "name": problem.name,
            "source": problem.source,
            "hash": problem.content_hash,
            "num_states": setup.num_states,
            "num_actions": setup.base_mdp.num_actions,
            "num_features": setup.num_features,
            "gamma": setup.gamma,
        },
        "projection_inf_norm": proj.inf_norm,
        "n_star": horizon.n_star,
        "n_bar_star": horizon.n_bar_star,
        "per_n": [
            {
                "n": row.n,
                "contraction_bound": row.contraction_bound,
                "sym_part_max_eigenvalue": row.sym_part_max_eigenvalue,
                "a_n_nonsingular": row.a_n_nonsingular,
            }
            for row in horizon.per_n
        ],
        "solutions": [_solution_entry(problem, n, horizon.n_star) for n in sorted(targets)],
        "true_values": v_pi.tolist(),
        "best_coef": best_coef.tolist(),
    }
    if horizon.n_bar_star is None:
        report["n_bar_star_note"] = (
            f"the symmetrized system matrix was not negative definite for any "
            f"n up to {n_max}; raise --n-max to extend the search"
        )
    if args.out:
        write_json(args.out, report)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(json_report(report))
    return 0


# -------------------------------------------------------------------- run


def _run_metadata(problem: ProblemSpec, algorithm: str, n: int) -> Dict:
    return {
        "tool_version": __version__,
        "problem": problem.name,
        "problem_hash": problem.content_hash,
        "source": problem.source,
        "algorithm": algorithm,
        "n": n,
    }


def _default_run_path(problem: ProblemSpec, algorithm: str, n: int, seed: Optional[int]) -> str:
    stem = f"run_{problem.name}_{algorithm}_n{n}"
    if seed is not None:
        stem += f"_seed{seed}"
    return os.path.join(default_output_dir(), stem + ".csv")


def _deterministic_cell(problem: ProblemSpec, algorithm: str, n: int, args) -> Tuple:
    """Run one deterministic solver; returns (trace, metadata, certificate)."""
    setup = problem.setup
    metadata = _run_metadata(problem, algorithm, n)
    certificate: Dict = {}
    if algorithm == "npvi":
        if args.alpha is not None:
            raise ConfigurationError("npvi has no step size; do not pass --alpha")
        factor = (setup.gamma**n) * projection(setup).inf_norm
        certificate = {"contraction_bound": factor, "certified": bool(factor < 1.0)}
        metadata["contraction_bound"] = factor
        trace = npvi_run(setup, n, max_iters=args.iters, tol=args.tol)
    elif algorithm in _GRADIENT:
        if args.alpha is not None:
            raise ConfigurationError(
                "gradient descent derives its step from the curvature; do not pass --alpha"
            )
        kind = "projected" if algorithm == "gd_i" else "gram"
        report = curvature(setup, n, kind)
        certificate = {
            "mu": report.mu,
            "lip": report.lip,
            "step_size": report.step_size,
            "weight": report.weight,
        }
        metadata["alpha"] = report.step_size
        trace = gradient_descent_run(setup, n, kind=kind, max_iters=args.iters, tol=args.tol)
    elif algorithm == "system":
        alpha = float(args.alpha) if args.alpha is not None else find_stable_alpha(setup, n)
        rho, stable = schur_certificate(setup, n, alpha)
        certificate = {"alpha": alpha, "spectral_radius": rho, "stable": stable}
        metadata["alpha"] = alpha
        metadata["spectral_radius"] = rho
        trace = system_iteration_run(setup, n, alpha, max_iters=args.iters, tol=args.tol)
    else:
        raise ConfigurationError(f"not a deterministic algorithm: {algorithm}")
    return trace, metadata, certificate


def _stochastic_cell(
    problem: ProblemSpec, algorithm: str, n: int, seed: int, args
) -> Tuple:
    setup = problem.setup
    schedule = _resolve_stochastic_schedule(args.alpha, args.schedule)
    trace = run_stochastic(
        setup,
        n,
        algorithm,
        schedule=schedule,
        iters=args.iters,
        seed=seed,
        log_every=args.log_every,
    )
    metadata = _run_metadata(problem, algorithm, n)
    metadata["schedule"] = _schedule_metadata(schedule)
    metadata["seed"] = seed
    metadata["iters"] = args.iters
    metadata["log_every"] = args.log_every
    metadata["rng"] = RNG_LABEL
    certificate = {"schedule": _schedule_metadata(schedule), "rng": RNG_LABEL}
    return trace, metadata, certificate


def cmd_run(args) -> int:
    problem = load_problem(args.problem)
    algorithm = normalize_algorithm(args.algo)
    n = resolve_horizon(problem.setup, algorithm, args.n)
    if algorithm in _STOCHASTIC:
        trace, metadata, _ = _stochastic_cell(problem, algorithm, n, args.seed, args)
        out = args.out or _default_run_path(problem, algorithm, n, args.seed)
        write_stoch_trace(out, trace, metadata)
        last_dist = float(trace.dist_to_fixed_point[-1])
        if trace.diverged:
            verdict = f"diverged after {trace.iterations} iterations"
        else:
            verdict = f"completed {trace.iterations} iterations, final distance {last_dist:.6g}"
    else:
        trace, metadata, _ = _deterministic_cell(problem, algorithm, n, args)
        out = args.out or _default_run_path(problem, algorithm, n, None)
        write_iter_trace(out, trace, metadata)
        if trace.diverged:
            verdict = f"diverged after {trace.iterations_used} iterations"
        elif trace.converged:
            verdict = (
                f"converged after {trace.iterations_used} iterations, "
                f"final residual {trace.final_residual:.6g}"
            )
        else:
            verdict = (
                f"stopped at the iteration budget ({trace.iterations_used}), "
                f"final residual {trace.final_residual:.6g}"
            )
    print(f"{algorithm} n={n} on {problem.name}: {verdict}")
    print(f"wrote {out}")
    return 0


# ------------------------------------------------------------------ sweep


def _cell_filename(algorithm: str, n: int, seed: int) -> str:
    return f"{algorithm}_n{n}_seed{seed}.csv"


def _sweep_cell(payload: Dict) -> Dict:
    """Run one sweep cell; meant to be called in a worker process."""
    problem = load_problem(payload["source"])
    setup = problem.setup
    algorithm = payload["algorithm"]
    n = payload["n"]
    seed = payload["seed"]
    args = argparse.Namespace(
        alpha=payload["alpha"],
        schedule=payload["schedule"],
        iters=payload["iters"],
        tol=payload["tol"],
        log_every=payload["log_every"],
    )
    filename = _cell_filename(algorithm, n, seed)
    path = os.path.join(payload["output_dir"], filename)
    cell: Dict = {"algorithm": algorithm, "n": n, "seed": seed, "csv": filename}
    if algorithm in _STOCHASTIC:
        trace, metadata, certificate = _stochastic_cell(problem, algorithm, n, seed, args)
        write_stoch_trace(path, trace, metadata)
        cell["outcome"] = "diverged" if trace.diverged else "completed"
        cell["iterations"] = trace.iterations
        cell["final_theta"] = trace.final_theta.tolist()
        if trace.final_lambda is not None:
            cell["final_lambda"] = trace.final_lambda.tolist()
        cell["final_dist_to_fixed_point"] = float(trace.dist_to_fixed_point[-1])
    else:
        trace, metadata, certificate = _deterministic_cell(problem, algorithm, n, args)
        metadata["seed"] = seed  # recorded for provenance; the math ignores it
        write_iter_trace(path, trace, metadata)
        if trace.diverged:
            cell["outcome"] = "diverged"
        elif trace.converged:
            cell["outcome"] = "converged"
        else:
            cell["outcome"] = "max_iters"
        cell["iterations"] = trace.iterations_used
        cell["final_theta"] = trace.final_theta.tolist()
        cell["final_residual_inf"] = trace.final_residual
    cell["certificate"] = certificate
    return cell


def cmd_sweep(args) -> int:
    problem = load_problem(args.problem)
    if not args.n:
        raise ConfigurationError("sweep needs at least one --n")
    if not args.algo:
        raise ConfigurationError("sweep needs at least one --algo")
    output_dir = args.out or os.path.join(default_output_dir(), f"sweep_{problem.name}")
    config = SweepConfig(
        n_values=tuple(args.n),
        algorithms=tuple(args.algo),
        seeds=tuple(_parse_seeds(args.seeds)),
        output_dir=output_dir,
    )
    if args.jobs < 1:
        raise ConfigurationError(f"--jobs must be at least 1, got {args.jobs}")
    os.makedirs(config.output_dir, exist_ok=True)

    payloads = [
        {
            "source": args.problem,
            "algorithm": algorithm,
            "n": n,
            "seed": seed,
            "alpha": args.alpha,
            "schedule": args.schedule,
            "iters": args.iters,
            "tol": args.tol,
            "log_every": args.log_every,
            "output_dir": config.output_dir,
        }
        for algorithm in config.algorithms
        for n in config.n_values
        for seed in config.seeds
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            cells = list(pool.map(_sweep_cell, payloads))
    else:
        cells = [_sweep_cell(payload) for payload in payloads]
    cells.sort(key=lambda c: (c["algorithm"], c["n"], c["seed"]))

    summary = {
        "tool_version": __version__,
        "problem": {
            "name": problem.name,
            "source": problem.source,
            "hash": problem.content_hash,
        },
        "config": {
            "n_values": list(config.n_values),
            "algorithms": list(config.algorithms),
            "seeds": list(config.seeds),
            "iters": args.iters,
            "log_every": args.log_every,
            "alpha": args.alpha,
            "schedule": args.schedule,
        },
        "cells": cells,
    }
    summary_path = os.path.join(config.output_dir, "summary.json")
    write_json(summary_path, summary)
    print(f"wrote {len(cells)} cells and {summary_path}")
    return 0


# ------------------------------------------------------------------- main


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="tdhorizon",
        description="multi-step TD horizon analysis on finite problems",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="horizon certificates and fixed points")
    analyze.add_argument("--problem", required=True, help="builtin name, file path, or random-k token")
    analyze.add_argument("--n", action="append", type=int, help="extra horizon to solve (repeatable)")
    analyze.add_argument("--n-max", type=int, default=None, help="cap for the horizon search")
    analyze.add_argument("--out", default=None, help="JSON output path (default: stdout)")
    analyze.set_defaults(func=cmd_analyze)

    run = sub.add_parser("run", help="one solver or sampled run")
    run.add_argument("--problem", required=True)
    run.add_argument("--algo", required=True, help=f"one of: {', '.join(ALGORITHMS)}")
    run.add_argument("--n", type=int, default=None, help="horizon (default: certified)")
    run.add_argument("--alpha", type=float, default=None, help="constant step size")
    run.add_argument("--schedule", default=None, help="decaying steps a,b,c")
    run.add_argument("--iters", type=int, default=100_000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--tol", type=float, default=1e-10)
    run.add_argument("--log-every", type=int, default=1000)
    run.add_argument("--out", default=None, help="CSV output path")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="grid of runs with a summary")
    sweep.add_argument("--problem", required=True)
    sweep.add_argument("--n", action="append", type=int, help="horizon (repeatable)")
    sweep.add_argument("--algo", action="append", help="algorithm (repeatable)")
    sweep.add_argument("--seeds", default="0", help="comma-separated seeds")
    sweep.add_argument("--alpha", type=float, default=None)
    sweep.add_argument("--schedule", default=None)
    sweep.add_argument("--iters", type=int, default=10_000)
    sweep.add_argument("--tol", type=float, default=1e-10)
    sweep.add_argument("--log-every", type=int, default=1000)
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", default=None, help="output directory")
    sweep.set_defaults(func=cmd_sweep)

    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except (
        ConfigurationError,
        StationaryDistributionError,
        EnumerationLimitError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
