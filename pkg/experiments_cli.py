#!/usr/bin/env python3
"""
Command-line front end for the American put solver.

Subcommands reproduce the pricing, convergence, boundary, timing and
step-profile experiments and print CSV (stdout or --out). Diagnostics go
to stderr through logging so the CSV stays clean.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from scipy.interpolate import BarycentricInterpolator

from integrator import Method, Solution, solve
from market_model import MarketParams
from oracle_pricers import (BinomialConfig, convergence_rates, crr_american_put, format_rate,
                            measure_errors, reference_solution)
from run_config import RunConfig, load_config_file, solver_threads
from solver_errors import ConfigurationError, SolverError
from stencil_factory import (GridSpec, NodeDistribution, describe, scheme_a, scheme_b, scheme_c,
                             sf_second_scheme)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

READOUT_POINTS = 7

# Published CRR reference prices, keyed by (preset, spot)
BENCHMARKS = {
    ("ex-c", 90.0): 11.6976,
    ("ex-c", 100.0): 6.9320,
    ("ex-c", 110.0): 4.1550,
}


# ============================================================================
# SPOT READOUT
# ============================================================================

def lagrange_readout(values: np.ndarray, grid: GridSpec, x: float) -> float:
    """Degree-6 Lagrange interpolation on the 7 nodes nearest x, shifted inward at the ends"""
    if len(values) != grid.n_x + 1:
        raise ConfigurationError(f"expected {grid.n_x + 1} nodal values, got {len(values)}")
    nearest = int(round(x / grid.h))
    start = min(max(nearest - READOUT_POINTS // 2, 0), grid.n_x + 1 - READOUT_POINTS)
    idx = np.arange(start, start + READOUT_POINTS)
    return float(BarycentricInterpolator(idx * grid.h, values[idx])(x))


def spot_readout(solution: Solution, spot: float) -> tuple:
    """(price, delta) at a spot from the terminal state"""
    s_f = solution.state.s_f
    x = math.log(spot / s_f) if spot != s_f else 0.0
    strike = solution.params.strike
    if x <= 0.0:
        return strike - spot, -1.0
    if x >= solution.grid.x_max:
        return 0.0, 0.0
    price = lagrange_readout(solution.u_nodes(), solution.grid, x)
    delta = lagrange_readout(solution.w_nodes(), solution.grid, x) / spot
    return price, delta


# ============================================================================
# PARALLEL SOLVE CELLS
# ============================================================================

@dataclass(frozen=True)
class SolveTask:
    """One independent solve of a sweep or ladder"""
    cfg: RunConfig
    h: float
    method: Method
    k: Optional[float] = None
    rho: Optional[float] = None
    reference: bool = False
    params: Optional[MarketParams] = None
    label: str = ""


@dataclass
class TaskResult:
    task: SolveTask
    solution: Solution
    seconds: float


def run_task(task: SolveTask) -> TaskResult:
    cfg = task.cfg
    p = task.params or cfg.market_params()
    grid = cfg.grid(task.h)
    scheme = cfg.boundary_scheme()
    ctl = cfg.step_control(task.rho)
    start = time.perf_counter()
    if task.reference:
        solution = reference_solution(p, grid, scheme, ctl, method=task.method, fixed_k=task.k,
                                      variant=cfg.operator_variant(), curvature=cfg.curvature_method())
    else:
        solution = solve(p, grid, scheme, ctl, method=task.method, fixed_k=task.k,
                         variant=cfg.operator_variant(), curvature=cfg.curvature_method())
    seconds = time.perf_counter() - start
    logger.info(f"cell {task.label or task.method.value} h={task.h:g}: {seconds:.2f}s, "
                f"s_f(T)={solution.state.s_f:.6f}")
    return TaskResult(task=task, solution=solution, seconds=seconds)


def run_pool(fn: Callable, tasks: Sequence) -> list:
    """Map fn over tasks in a process pool capped by SOLVER_THREADS; 1 runs in-process"""
    workers = min(solver_threads(), len(tasks))
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _main_task(cfg: RunConfig, **overrides) -> SolveTask:
    base = SolveTask(cfg=cfg, h=cfg.h, method=cfg.solve_method(), k=cfg.k)
    return replace(base, **overrides)


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def price(cfg: RunConfig) -> tuple:
    """Price and delta at each spot"""
    result = run_task(_main_task(cfg))
    header = ["S", "price", "delta", "benchmark", "abs_diff"]
    rows = []
    for spot in cfg.spots:
        value, delta = spot_readout(result.solution, spot)
        bench = BENCHMARKS.get((cfg.preset, float(spot))) if _is_pure_preset(cfg) else None
        rows.append([spot, value, delta, "" if bench is None else bench,
                     "" if bench is None else abs(value - bench)])
    return header, rows


def _is_pure_preset(cfg: RunConfig) -> bool:
    return all(v is None for v in (cfg.strike, cfg.rate, cfg.vol, cfg.maturity))


def check_ladder(ladder: Sequence[float], xmax: float):
    if len(ladder) < 2:
        raise ConfigurationError("convergence needs at least two grid spacings")
    for coarse, fine in zip(ladder, ladder[1:]):
        if abs(coarse / fine - 2.0) > 1e-9:
            raise ConfigurationError(f"ladder must halve h at each level, got {coarse} -> {fine}")
    GridSpec.from_spacing(xmax, ladder[-1] / 4)


def convergence(cfg: RunConfig) -> tuple:
    """Max-norm errors and rates over a grid ladder"""
    check_ladder(cfg.ladder, cfg.xmax)
    ref_h = cfg.ladder[-1] / 4
    tasks = [_main_task(cfg, h=ref_h, reference=True, label="reference")]
    tasks += [_main_task(cfg, h=h, label=f"level {i}") for i, h in enumerate(cfg.ladder)]
    results = run_pool(run_task, tasks)
    reference = results[0].solution
    reports = [measure_errors(r.solution, reference) for r in results[1:]]

    columns = ("option", "delta", "boundary", "boundary_slope")
    rates = {c: convergence_rates([getattr(rep, c) for rep in reports]) for c in columns}
    header = ["h"]
    for c in columns:
        header += [f"{c}_error", f"{c}_rate"]
    rows = []
    for i, rep in enumerate(reports):
        row = [rep.h]
        for c in columns:
            row += [getattr(rep, c), format_rate(rates[c][i])]
        rows.append(row)
    return header, rows


def boundary(cfg: RunConfig) -> tuple:
    """Exercise boundary trajectory with its derivatives"""
    result = run_task(_main_task(cfg))
    header = ["tau", "s_f", "sf_prime", "sf_second", "k"]
    rows = [[t.tau, t.s_f, t.sf_prime, t.sf_second, t.k] for t in result.solution.trajectory]
    return header, rows


def timing(cfg: RunConfig) -> tuple:
    """Wall time and accuracy of adaptive versus fixed steps"""
    tasks = [_main_task(cfg, method=Method.BS32, k=None, rho=rho, label=f"bs32 rho={rho:g}")
             for rho in (cfg.rhos or (cfg.rho,))]
    tasks += [_main_task(cfg, method=Method.SSPRK3, k=k, label=f"ssprk3 k={k:g}") for k in cfg.ks]
    results = run_pool(run_task, tasks)

    header = ["method", "rho", "k", "wall_s"] + [f"P({s:g})" for s in cfg.spots]
    header += ["k_min", "k_min_settled", "k_avg", "k_max", "accepted", "rejected"]
    rows = []
    for r in results:
        stats = r.solution.stats
        adaptive = r.task.method is Method.BS32
        row = [r.task.method.value,
               (r.task.rho or cfg.rho) if adaptive else "",
               "" if adaptive else r.task.k,
               round(r.seconds, 3)]
        row += [spot_readout(r.solution, s)[0] for s in cfg.spots]
        row += [stats.k_min, stats.k_min_after_startup, stats.k_avg, stats.k_max,
                stats.accepted, stats.rejected]
        rows.append(row)
    return header, rows


def stencil(cfg: RunConfig) -> tuple:
    """Boundary-scheme weights and constants for the node offsets"""
    dist = NodeDistribution.complete(cfg.gamma)
    schemes = [scheme_a(dist), scheme_b(dist), scheme_c(dist), sf_second_scheme()]
    header = ["name", "nodes", "w0", "weights", "v1", "v2", "v3", "v4", "C", "max_residual"]
    rows = []
    for scheme in schemes:
        d = describe(scheme)
        rows.append([d["name"], " ".join(f"{g:g}" for g in d["nodes"]), d["w0"],
                     " ".join(_fmt(w) for w in d["weights"]),
                     d["v1"], d["v2"], d["v3"], d["v4"], d["C"], d["max_residual"]])
    return header, rows


def oracle(cfg: RunConfig) -> tuple:
    """Binomial reference prices"""
    p = cfg.market_params()
    binomial = BinomialConfig(steps=cfg.binomial_steps)
    rows = [[s, crr_american_put(p, s, binomial), binomial.steps] for s in cfg.spots]
    return ["S", "crr_price", "steps"], rows


def profile(cfg: RunConfig) -> tuple:
    """Accepted step sizes across a volatility or rate sweep"""
    base = cfg.market_params()
    if cfg.vols:
        name, cells = "vol", [(v, replace(base, volatility=v)) for v in cfg.vols]
    elif cfg.rates:
        name, cells = "rate", [(r, replace(base, rate=r)) for r in cfg.rates]
    else:
        name, cells = "vol", [(base.volatility, base)]
    tasks = [_main_task(cfg, method=Method.BS32, k=None, params=p, label=f"{name}={v:g}") for v, p in cells]
    results = run_pool(run_task, tasks)
    rows = []
    for (value, _), r in zip(cells, results):
        rows += [[name, value, t.tau, t.k] for t in r.solution.trajectory[1:]]
    return ["param", "value", "tau", "k"], rows


COMMANDS = {
    "price": price,
    "convergence": convergence,
    "boundary": boundary,
    "timing": timing,
    "stencil": stencil,
    "oracle": oracle,
    "profile": profile,
}


# ============================================================================
# OUTPUT AND ARGUMENTS
# ============================================================================

def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(header: Sequence[str], rows: Sequence[Sequence], out: Optional[str] = None):
    def dump(stream):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])

    if out:
        with open(out, "w", newline="") as f:
            dump(f)
        logger.info(f"wrote {len(rows)} rows to {out}")
    else:
        dump(sys.stdout)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with defaults for any flag")
    common.add_argument("--preset", choices=["ex-a", "ex-b", "ex-c"])
    common.add_argument("--strike", type=float)
    common.add_argument("--rate", type=float)
    common.add_argument("--vol", type=float)
    common.add_argument("--maturity", type=float)
    common.add_argument("--h", type=float, help="grid spacing in x")
    common.add_argument("--xmax", type=float, help="truncation of the x domain (default 3)")
    common.add_argument("--scheme", choices=["cs55", "cs54"])
    common.add_argument("--gamma", help="node offsets, e.g. 2,3,4,5")
    common.add_argument("--eps", type=float, help="adaptive error tolerance")
    common.add_argument("--rho", type=float, help="step-size safety factor")
    common.add_argument("--method", choices=["bs32", "ssprk3"])
    common.add_argument("--k", type=float, help="fixed time step for ssprk3")
    common.add_argument("--curvature", choices=["flow", "stencil"],
                        help="s_f'' from the velocity relation along the flow (default) or the four-node scheme")
    common.add_argument("--spots", help="spot prices for readout, e.g. 90,100,110")
    common.add_argument("--out", help="CSV output path (default stdout)")
    rows = common.add_mutually_exclusive_group()
    rows.add_argument("--b4", action="store_const", const="b4", dest="variant",
                      help="fourth-order near-boundary rows")
    rows.add_argument("--b6", action="store_const", const="b6", dest="variant",
                      help="sixth-order near-boundary rows")
    common.add_argument("--swap-exponents", action="store_const", const=True, dest="swap_exponents",
                        help="use exponent 1/3 on accept and 1/2 on reject")
    common.add_argument("--steps", type=int, dest="binomial_steps", help="binomial tree steps")
    common.add_argument("--ladder", help="grid spacings for convergence, e.g. 0.05,0.025,0.0125")
    common.add_argument("--rhos", help="safety factors swept by timing")
    common.add_argument("--ks", help="fixed ssprk3 steps swept by timing")
    common.add_argument("--vols", help="volatilities swept by profile")
    common.add_argument("--rates", help="interest rates swept by profile")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")

    parser = argparse.ArgumentParser(description="American put solver with a front-fixing compact scheme")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip())
    return parser


FILE_ALIASES = {"steps": "binomial_steps", "b4": "variant", "b6": "variant"}


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the --config file and explicit flags"""
    settings = {}
    if args.config:
        for key, value in load_config_file(args.config).items():
            target = FILE_ALIASES.get(key, key)
            if target == "variant" and key in ("b4", "b6"):
                if str(value).lower() in ("1", "true", "yes", "on"):
                    settings["variant"] = key
                continue
            settings[target] = value
    for field in RunConfig.model_fields:
        value = getattr(args, field, None)
        if value is not None:
            settings[field] = value
    return RunConfig(**settings)


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="[%(name)s] %(message)s", stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        cfg = build_config(args)
        header, rows = COMMANDS[args.command](cfg)
        write_csv(header, rows, cfg.out)
    except (ValidationError, ConfigurationError, OSError) as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except SolverError as e:
        logger.error(f"solver failure: {e}")
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
