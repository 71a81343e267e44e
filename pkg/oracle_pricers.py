"""
Reference prices for checking the front-fixing solver: a Cox-Ross-Rubinstein
binomial lattice and a fine-grid self-reference for convergence errors.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from integrator import Method, Solution, StepControl, solve
from market_model import MarketParams
from solver_errors import ConfigurationError
from stencil_factory import BoundaryScheme, GridSpec

logger = logging.getLogger(__name__)

REFERENCE_REFINEMENT = 4
REFERENCE_TIGHTENING = 100.0
REFERENCE_DIFFUSION_CFL = 0.04


@dataclass(frozen=True)
class BinomialConfig:
    steps: int = 15000

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"binomial tree needs at least 1 step, got {self.steps}")


def crr_american_put(p: MarketParams, S0: float, cfg: BinomialConfig = BinomialConfig()) -> float:
    """American put on a CRR lattice with early exercise at every node"""
    if not S0 > 0:
        raise ConfigurationError(f"spot must be positive, got {S0}")
    n = cfg.steps
    dt = p.maturity / n
    up = math.exp(p.volatility * math.sqrt(dt))
    down = 1.0 / up
    growth = math.exp(p.rate * dt)
    q = (growth - down) / (up - down)
    if not 0.0 < q < 1.0:
        raise ConfigurationError(f"risk-neutral probability {q:.6f} outside (0, 1); use more steps")
    disc = 1.0 / growth
    log_up = p.volatility * math.sqrt(dt)

    j = np.arange(n + 1)
    values = np.maximum(p.strike - S0 * np.exp(log_up * (2 * j - n)), 0.0)
    for i in range(n - 1, -1, -1):
        cont = disc * (q * values[1:i + 2] + (1.0 - q) * values[:i + 1])
        spots = S0 * np.exp(log_up * (2 * j[:i + 1] - i))
        values = np.maximum(cont, p.strike - spots)
    return float(values[0])


def reference_step(p: MarketParams, grid: GridSpec, fixed_k: float) -> float:
    """Fixed step for a reference run: fixed_k, capped at REFERENCE_DIFFUSION_CFL h^2 / sigma^2"""
    cap = REFERENCE_DIFFUSION_CFL * grid.h ** 2 / p.volatility ** 2
    return min(fixed_k, cap)


def reference_solution(p: MarketParams, grid: GridSpec, scheme: BoundaryScheme,
                       ctl: Optional[StepControl] = None, method: Method = Method.BS32,
                       fixed_k: Optional[float] = None, **solve_kwargs) -> Solution:
    """Main solver on a fine grid, with the adaptive tolerance tightened 100x
    or the fixed step kept inside the fine grid's diffusion limit"""
    if Method(method) is Method.BS32:
        ctl = ctl or StepControl()
        ctl = replace(ctl, eps=ctl.eps / REFERENCE_TIGHTENING)
    elif fixed_k is not None and fixed_k > 0:
        k_ref = reference_step(p, grid, fixed_k)
        if k_ref < fixed_k:
            logger.info(f"reference step reduced from {fixed_k:.3e} to {k_ref:.3e}")
        fixed_k = k_ref
    logger.info(f"reference run: n_x={grid.n_x}, h={grid.h:.6g}")
    return solve(p, grid, scheme, ctl, method=method, fixed_k=fixed_k, **solve_kwargs)


@dataclass(frozen=True)
class ErrorReport:
    """Max-norm errors of a coarse run against a reference on shared nodes"""
    h: float
    option: float
    delta: float
    boundary: float
    boundary_slope: float

    def as_row(self) -> tuple:
        return (self.option, self.delta, self.boundary, self.boundary_slope)


def refinement_ratio(coarse: GridSpec, fine: GridSpec) -> int:
    if abs(coarse.x_max - fine.x_max) > 1e-12 * fine.x_max or fine.n_x % coarse.n_x:
        raise ConfigurationError(f"grids do not share nodes: n_x={coarse.n_x} vs {fine.n_x}")
    return fine.n_x // coarse.n_x


def measure_errors(run: Solution, reference: Solution) -> ErrorReport:
    ratio = refinement_ratio(run.grid, reference.grid)
    u_err = np.max(np.abs(run.u_nodes() - reference.u_nodes()[::ratio]))
    w_err = np.max(np.abs(run.w_nodes() - reference.w_nodes()[::ratio]))
    return ErrorReport(
        h=run.grid.h,
        option=float(u_err),
        delta=float(w_err),
        boundary=abs(run.terminal.s_f - reference.terminal.s_f),
        boundary_slope=abs(run.terminal.sf_prime - reference.terminal.sf_prime),
    )


def convergence_rates(errors: Sequence[float]) -> list:
    """log2(e_2h / e_h) between consecutive ladder levels; None where undefined"""
    rates = [None]
    for coarse, fine in zip(errors, errors[1:]):
        if coarse > 0 and fine > 0:
            rates.append(math.log2(coarse / fine))
        else:
            rates.append(None)
    return rates


def format_rate(rate: Optional[float]) -> str:
    return "~" if rate is None else f"{rate:.3f}"
