"""
Time integration of the coupled semi-discrete system (u, w, s_f).

    du/dtau   = (sigma^2/2) D2 u + beta w - r u
    dw/dtau   = (sigma^2/2) D2 w + beta D2 u - r w
    ds_f/dtau = g s_f,        beta = nu + g

D2 is the compact operator with Dirichlet data u(0) = E - s_f, w(0) = -s_f
and zero at x_max; g comes from the staggered boundary scheme and is
recomputed at every stage. Steppers work on the flat vector
y = [u, w, s_f] and know nothing about the model.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from compact_operator import BoundaryValues, CompactSystem, OperatorVariant, assemble
from free_boundary import (CurvatureMethod, boundary_residual, flow_second_derivative_sf, relative_velocity,
                           second_derivative_sf, velocity_rate)
from market_model import ClampCounter, MarketParams, beta
from solver_errors import (ConfigurationError, MaxRejectsError, NegativeDiscriminant,
                           NonFiniteStateError, SolverError)
from stencil_factory import BoundaryScheme, GridSpec

logger = logging.getLogger(__name__)

RHS = Callable[[np.ndarray], np.ndarray]

STAGE_FAILURE_SHRINK = 0.25
MONOTONE_SLACK = 1e-10
RAMP_STEPS = 32
MAX_SPLIT_DEPTH = 20


class Method(Enum):
    BS32 = "bs32"
    SSPRK3 = "ssprk3"


@dataclass
class SolverState:
    """Interior u and w, the boundary s_f, and the time reached"""
    u: np.ndarray
    w: np.ndarray
    s_f: float
    tau: float = 0.0
    k: float = 0.0

    @classmethod
    def payoff(cls, p: MarketParams, grid: GridSpec) -> "SolverState":
        n = grid.n_x - 1
        return cls(u=np.zeros(n), w=np.zeros(n), s_f=p.strike)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.u, self.w, [self.s_f]])

    @classmethod
    def unpack(cls, y: np.ndarray, tau: float = 0.0, k: float = 0.0) -> "SolverState":
        n = (len(y) - 1) // 2
        return cls(u=y[:n].copy(), w=y[n:2 * n].copy(), s_f=float(y[-1]), tau=tau, k=k)


@dataclass(frozen=True)
class StepControl:
    """Error-per-step controller settings"""
    eps: float = 1e-4
    rho: float = 0.9
    k_init: float = 1e-6
    k_min: float = 1e-12
    k_max: Optional[float] = None
    max_rejects: int = 50
    swap_exponents: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError(f"tolerance must be positive, got {self.eps}")
        if not 0 < self.rho < 1:
            raise ConfigurationError(f"safety factor must lie in (0, 1), got {self.rho}")
        if not 0 < self.k_min <= self.k_init:
            raise ConfigurationError(f"need 0 < k_min <= k_init, got k_min={self.k_min}, k_init={self.k_init}")
        if self.k_max is not None and self.k_init > self.k_max:
            raise ConfigurationError(f"k_init={self.k_init} exceeds k_max={self.k_max}")
        if self.max_rejects < 1:
            raise ConfigurationError(f"max_rejects must be >= 1, got {self.max_rejects}")

    def resolved(self, maturity: float) -> "StepControl":
        """Fill k_max = T/10 when unset"""
        if self.k_max is not None:
            return self
        k_max = maturity / 10.0
        return replace(self, k_max=k_max, k_init=min(self.k_init, k_max), k_min=min(self.k_min, k_max))

    @property
    def exponents(self) -> tuple:
        """(accept, reject) exponents"""
        return (1.0 / 3.0, 0.5) if self.swap_exponents else (0.5, 1.0 / 3.0)


@dataclass(frozen=True)
class TrajectoryPoint:
    tau: float
    k: float
    s_f: float
    sf_prime: float
    sf_second: float


@dataclass
class StepStats:
    """Accepted-step sizes; the settled minimum skips the run-up from k_init and the clipped last step"""
    accepted: int = 0
    rejected: int = 0
    k_min: float = math.inf
    k_max: float = 0.0
    k_total: float = 0.0
    k_min_settled: float = math.inf
    settled: bool = False

    def record(self, k: float, last: bool = False):
        self.accepted += 1
        self.k_min = min(self.k_min, k)
        self.k_max = max(self.k_max, k)
        self.k_total += k
        if self.settled and not last:
            self.k_min_settled = min(self.k_min_settled, k)

    def reject(self):
        self.rejected += 1
        self.settled = True

    @property
    def k_avg(self) -> float:
        return self.k_total / self.accepted if self.accepted else 0.0

    @property
    def k_min_after_startup(self) -> float:
        """Smallest step once the controller first hit the tolerance; k_min if it never did"""
        return self.k_min_settled if math.isfinite(self.k_min_settled) else self.k_min


@dataclass
class Solution:
    """Terminal state, per-step boundary trajectory and step statistics"""
    state: SolverState
    trajectory: list
    stats: StepStats
    grid: GridSpec
    params: MarketParams
    method: Method
    max_g_residual: float = 0.0
    clamped: int = 0

    def u_nodes(self) -> np.ndarray:
        """u on every node, boundary values included"""
        return np.concatenate([[self.params.strike - self.state.s_f], self.state.u, [0.0]])

    def w_nodes(self) -> np.ndarray:
        return np.concatenate([[-self.state.s_f], self.state.w, [0.0]])

    def trajectory_array(self) -> np.ndarray:
        """Rows of (tau, k, s_f, s_f', s_f'')"""
        return np.array([(t.tau, t.k, t.s_f, t.sf_prime, t.sf_second) for t in self.trajectory])

    @property
    def terminal(self) -> TrajectoryPoint:
        return self.trajectory[-1]


# ============================================================================
# SEMI-DISCRETE RIGHT-HAND SIDE
# ============================================================================

def physical_velocity(g: float) -> float:
    """The put boundary never rises in tau; a positive root is an under-resolved startup artifact"""
    return min(g, 0.0)


def semidiscrete_rhs(state: SolverState, sys: CompactSystem, scheme: BoundaryScheme, p: MarketParams,
                     counter: Optional[ClampCounter] = None) -> tuple:
    """(L_u, L_w, L_sf) at a state"""
    if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(state.w)) and math.isfinite(state.s_f)):
        raise NonFiniteStateError(f"non-finite state at tau={state.tau}")
    if state.s_f <= 0:
        raise NonFiniteStateError(f"boundary left (0, E]: s_f={state.s_f}")

    g, _, _ = relative_velocity(state.u, state.s_f, scheme, sys.grid, p, counter)
    g = physical_velocity(g)
    beta_t = beta(p, g)
    half_var = 0.5 * p.volatility ** 2

    d_u, d_w = sys.second_derivative_pair(
        state.u, BoundaryValues(left=p.strike - state.s_f),
        state.w, BoundaryValues(left=-state.s_f),
    )
    L_u = half_var * d_u + beta_t * state.w - p.rate * state.u
    L_w = half_var * d_w + beta_t * d_u - p.rate * state.w
    return L_u, L_w, g * state.s_f


class SemiDiscreteSystem:
    """Flat-vector view of the semi-discrete model for the generic steppers"""

    def __init__(self, p: MarketParams, sys: CompactSystem, scheme: BoundaryScheme):
        self.p = p
        self.sys = sys
        self.scheme = scheme
        self.n = sys.size
        self.counter = ClampCounter()
        self.blocks = (slice(0, self.n), slice(self.n, 2 * self.n), slice(2 * self.n, 2 * self.n + 1))

    def __call__(self, y: np.ndarray) -> np.ndarray:
        L_u, L_w, L_sf = semidiscrete_rhs(SolverState.unpack(y), self.sys, self.scheme, self.p, self.counter)
        return np.concatenate([L_u, L_w, [L_sf]])


# ============================================================================
# STEPPERS
# ============================================================================

def bs32_step(y: np.ndarray, k: float, rhs: RHS, k1: Optional[np.ndarray] = None,
              blocks: Optional[Sequence[slice]] = None) -> tuple:
    """One Bogacki-Shampine 3(2) step.

    Returns the third-order value, the max-norm gap to the embedded
    second-order value on each block, and the slope at the new value
    (reusable as the first stage of the next step).
    """
    if not k > 0:
        raise ConfigurationError(f"step must be positive, got {k}")
    K1 = rhs(y) if k1 is None else k1
    K2 = rhs(y + 0.5 * k * K1)
    K3 = rhs(y + 0.75 * k * K2)
    y3 = y + k * (2.0 / 9.0 * K1 + 1.0 / 3.0 * K2 + 4.0 / 9.0 * K3)
    K4 = rhs(y3)
    y2 = y + k / 24.0 * (7.0 * K1 + 6.0 * K2 + 8.0 * K3 + 3.0 * K4)

    gap = np.abs(y3 - y2)
    if blocks is None:
        blocks = (slice(None),)
    errors = tuple(float(np.max(gap[b])) if gap[b].size else 0.0 for b in blocks)
    return y3, errors, K4


def ssprk3_step(y: np.ndarray, k: float, rhs: RHS) -> np.ndarray:
    """Three-stage third-order SSP Runge-Kutta in Shu-Osher form"""
    y1 = y + k * rhs(y)
    y2 = 0.75 * y + 0.25 * (y1 + k * rhs(y1))
    return y / 3.0 + 2.0 / 3.0 * (y2 + k * rhs(y2))


def ssprk3_split_step(y: np.ndarray, k: float, rhs: RHS, max_depth: int = MAX_SPLIT_DEPTH) -> tuple:
    """SSPRK3 over k, halving the step wherever a stage fails.

    Returns the value at the end of k and the number of splits taken.
    """
    try:
        y_new = ssprk3_step(y, k, rhs)
        if np.all(np.isfinite(y_new)):
            return y_new, 0
        failure = "non-finite result"
    except (NegativeDiscriminant, NonFiniteStateError) as e:
        failure = str(e)
    if max_depth <= 0:
        raise NonFiniteStateError(f"fixed step k={k:.3e} still fails after splitting: {failure}")
    logger.debug(f"splitting fixed step k={k:.3e}: {failure}")
    y_mid, first = ssprk3_split_step(y, 0.5 * k, rhs, max_depth - 1)
    y_end, second = ssprk3_split_step(y_mid, 0.5 * k, rhs, max_depth - 1)
    return y_end, 1 + first + second


def fixed_schedule(T: float, k: float, ramp: int = RAMP_STEPS) -> np.ndarray:
    """End times of fixed steps: quadratically graded from k/(2 ramp) up to k, then uniform k, ending on T"""
    if not k > 0:
        raise ConfigurationError(f"step must be positive, got {k}")
    t_ramp = 0.5 * ramp * k
    if T <= t_ramp:
        return T * (np.arange(1, ramp + 1) / ramp) ** 2
    graded = t_ramp * (np.arange(1, ramp + 1) / ramp) ** 2
    steps = max(1, math.ceil((T - t_ramp) / k - 1e-9))
    uniform = t_ramp + k * np.arange(1, steps + 1)
    uniform[-1] = T
    return np.concatenate([graded, uniform])


def adapt_step(e_u: float, e_w: float, e_sf: float, k_old: float, ctl: StepControl,
               remaining: float = math.inf) -> tuple:
    """Accept/reject and next step size; remaining is T - tau before the step"""
    k_max = ctl.k_max if ctl.k_max is not None else math.inf
    err = max(e_u, e_w, e_sf)
    accept_exp, reject_exp = ctl.exponents

    if not math.isfinite(err):
        accept = False
        k_new = k_old * STAGE_FAILURE_SHRINK
    elif err == 0.0:
        accept = True
        k_new = k_max
    elif err < ctl.eps:
        accept = True
        k_new = ctl.rho * k_old * (ctl.eps / err) ** accept_exp
    else:
        accept = False
        k_new = ctl.rho * k_old * (ctl.eps / err) ** reject_exp

    k_new = min(max(k_new, ctl.k_min), k_max)
    left = remaining - k_old if accept else remaining
    if left > 0:
        if left <= k_new:
            k_new = left
        elif left < 2.0 * k_new:
            # two even steps instead of a full one and a sliver
            k_new = 0.5 * left
    return accept, k_new


# ============================================================================
# DRIVER
# ============================================================================

def _check_layout(grid: GridSpec, scheme: BoundaryScheme):
    deepest = max(int(n) for n in scheme.active_nodes)
    if deepest > grid.n_x - 1:
        raise ConfigurationError(f"boundary scheme reaches node {deepest} but the grid has n_x={grid.n_x}")


class _Recorder:
    """Per-step boundary bookkeeping shared by both methods"""

    def __init__(self, model: SemiDiscreteSystem, grid: GridSpec, curvature: Optional[CurvatureMethod]):
        self.model = model
        self.grid = grid
        self.curvature = curvature
        self.trajectory = []
        self.max_residual = 0.0
        self.final_y = None

    def record(self, y: np.ndarray, tau: float, k: float, slope: Optional[np.ndarray] = None):
        """slope is the right-hand side at y when the stepper already has it"""
        state = SolverState.unpack(y)
        p = self.model.p
        g_root = float("nan")
        try:
            g_root, M, _ = relative_velocity(state.u, state.s_f, self.model.scheme, self.grid, p)
        except SolverError:
            pass
        else:
            res = abs(boundary_residual(M, self.model.scheme, p, self.grid.h, g_root))
            self.max_residual = max(self.max_residual, res / max(abs(M), 1e-300))
        g = physical_velocity(g_root) if math.isfinite(g_root) else g_root
        sf_second = float("nan")
        if self.curvature is not None and tau > 0 and math.isfinite(g):
            try:
                sf_second = self._curvature(y, state, g_root, g, slope)
            except SolverError as e:
                logger.debug(f"no curvature at tau={tau:.6e}: {e}")
        self.trajectory.append(TrajectoryPoint(tau=tau, k=k, s_f=state.s_f,
                                               sf_prime=g * state.s_f, sf_second=sf_second))

    def _curvature(self, y: np.ndarray, state: SolverState, g_root: float, g: float,
                   slope: Optional[np.ndarray]) -> float:
        p = self.model.p
        if self.curvature is CurvatureMethod.STENCIL:
            return second_derivative_sf(state.u, state.s_f, g, p, self.grid)
        if g_root > 0.0:
            # velocity held at zero
            return 0.0
        if slope is None:
            slope = self.model(y)
        g_rate = velocity_rate(state.u, state.s_f, g, slope[self.model.blocks[0]], float(slope[-1]),
                               self.model.scheme, self.grid, p)
        return flow_second_derivative_sf(state.s_f, g, g_rate)


def solve(p: MarketParams, grid: GridSpec, scheme: BoundaryScheme, ctl: Optional[StepControl] = None,
          method: Method = Method.BS32, fixed_k: Optional[float] = None,
          variant: OperatorVariant = OperatorVariant.B5, system: Optional[CompactSystem] = None,
          with_sf_second: bool = True, curvature: CurvatureMethod = CurvatureMethod.FLOW) -> Solution:
    """Integrate from the payoff (u = w = 0, s_f = E) to tau = T.

    SSPRK3 takes a fixed step k after a short graded start from the payoff;
    BS3(2) adapts k to the tolerance in ctl. s_f'' is recorded per accepted
    step with the chosen curvature evaluation unless with_sf_second is off.
    """
    p.require_free_boundary()
    method = Method(method)
    _check_layout(grid, scheme)
    if system is None:
        system = assemble(grid, variant)
    model = SemiDiscreteSystem(p, system, scheme)
    recorder = _Recorder(model, grid, CurvatureMethod(curvature) if with_sf_second else None)

    y = SolverState.payoff(p, grid).pack()
    recorder.record(y, 0.0, 0.0)
    stats = StepStats()
    logger.info(f"solve {method.value}: n_x={grid.n_x}, h={grid.h:.6g}, T={p.maturity}, scheme={scheme.name}")

    if method is Method.SSPRK3:
        if fixed_k is None or not fixed_k > 0:
            raise ConfigurationError("ssprk3 needs a positive fixed step k")
        tau = _run_fixed(y, p, fixed_k, model, recorder, stats)
    else:
        ctl = (ctl or StepControl()).resolved(p.maturity)
        tau = _run_adaptive(y, p, ctl, model, recorder, stats)

    final = recorder.trajectory[-1]
    state = SolverState.unpack(recorder.final_y, tau=tau, k=final.k)
    logger.info(f"solve finished: s_f(T)={state.s_f:.6f}, accepted={stats.accepted}, rejected={stats.rejected}, "
                f"k min/avg/max={stats.k_min:.3e}/{stats.k_avg:.3e}/{stats.k_max:.3e}")
    if model.counter.clamped:
        logger.debug(f"{model.counter.clamped} of {model.counter.evaluated} radicands clamped at zero")
    return Solution(state=state, trajectory=recorder.trajectory, stats=stats, grid=grid, params=p,
                    method=method, max_g_residual=recorder.max_residual, clamped=model.counter.clamped)


def _rose(y_old: np.ndarray, y_new: np.ndarray, p: MarketParams) -> bool:
    return y_new[-1] > y_old[-1] + MONOTONE_SLACK * p.strike


def _run_fixed(y: np.ndarray, p: MarketParams, k: float, model: SemiDiscreteSystem,
               recorder: _Recorder, stats: StepStats) -> float:
    schedule = fixed_schedule(p.maturity, k)
    tau = 0.0
    for n, tau_next in enumerate(schedule):
        step = float(tau_next) - tau
        y_new, splits = ssprk3_split_step(y, step, model)
        if splits:
            stats.rejected += splits
            logger.debug(f"step k={step:.3e} at tau={tau:.6e} taken in {splits + 1} pieces")
        if _rose(y, y_new, p):
            logger.warning(f"boundary increased at tau={tau_next:.6e}: {y[-1]:.10f} -> {y_new[-1]:.10f}")
        y = y_new
        tau = float(tau_next)
        stats.record(step, last=n == len(schedule) - 1)
        recorder.record(y, tau, step)
    recorder.final_y = y
    return tau


def _run_adaptive(y: np.ndarray, p: MarketParams, ctl: StepControl, model: SemiDiscreteSystem,
                  recorder: _Recorder, stats: StepStats) -> float:
    T = p.maturity
    tau = 0.0
    k = ctl.k_init
    k1 = None
    rejects = 0
    while tau < T:
        remaining = T - tau
        k = min(k, remaining)
        try:
            y_new, errors, k4 = bs32_step(y, k, model, k1, model.blocks)
            if not np.all(np.isfinite(y_new)):
                errors = (math.inf,) * 3
            elif _rose(y, y_new, p):
                logger.debug(f"boundary rose over k={k:.3e} at tau={tau:.6e}")
                errors = (math.inf,) * 3
        except (NegativeDiscriminant, NonFiniteStateError) as e:
            logger.debug(f"stage failure at tau={tau:.6e}, k={k:.3e}: {e}")
            errors = (math.inf,) * 3

        accept, k_next = adapt_step(*errors, k, ctl, remaining)
        if accept:
            last = k >= remaining
            tau = T if last else tau + k
            y = y_new
            k1 = k4
            rejects = 0
            stats.record(k, last=last)
            recorder.record(y, tau, k, slope=k4)
        else:
            k1 = None
            rejects += 1
            stats.reject()
            logger.debug(f"rejected k={k:.3e} at tau={tau:.6e} (err={max(errors):.3e})")
            if rejects == ctl.max_rejects // 2:
                logger.warning(f"{rejects} consecutive rejections at tau={tau:.6e}")
            if rejects >= ctl.max_rejects:
                raise MaxRejectsError(tau, k, rejects)
        k = k_next
    recorder.final_y = y
    return tau
