"""
Black-Scholes American put model on the front-fixed domain.

Time runs backwards from expiry: tau in [0, T] is time-to-maturity. The
front-fixing change of variable x = ln S - ln s_f(tau) pins the optimal
exercise boundary at x = 0; U(x, tau) is the option value and
W = dU/dx the delta sensitivity on that domain.

Near the boundary the solver works with the square-root transform
Q = sqrt(U - E + e^x s_f), whose derivatives at x = 0 are known in closed
form. They follow from V = Q^2, which satisfies

    V_tau = (sigma^2/2) V_xx + beta V_x - r V - r E,   V(0) = V_x(0) = 0,

by differentiating the boundary conditions in tau.
"""

import math
import threading
from dataclasses import dataclass
from typing import Union

import numpy as np

from solver_errors import ConfigurationError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class MarketParams:
    """Strike, rate, volatility and maturity of an American put"""
    strike: float
    rate: float
    volatility: float
    maturity: float

    def __post_init__(self):
        for name in ("strike", "rate", "volatility", "maturity"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigurationError(f"{name} must be finite, got {value!r}")
        if self.strike <= 0:
            raise ConfigurationError(f"strike must be positive, got {self.strike}")
        if self.volatility <= 0:
            raise ConfigurationError(f"volatility must be positive, got {self.volatility}")
        if self.maturity <= 0:
            raise ConfigurationError(f"maturity must be positive, got {self.maturity}")
        if self.rate < 0:
            raise ConfigurationError(f"rate must be non-negative, got {self.rate}")

    @property
    def sqrt_rE(self) -> float:
        return math.sqrt(self.rate * self.strike)

    def require_free_boundary(self):
        """Reject parameters the boundary formulas cannot handle (they divide by sqrt(rE))"""
        if self.rate <= 0:
            raise ConfigurationError("free-boundary solve needs rate > 0")


PRESETS: dict[str, MarketParams] = {
    "ex-a": MarketParams(strike=100.0, rate=0.05, volatility=0.2, maturity=0.5),
    "ex-b": MarketParams(strike=100.0, rate=0.1, volatility=0.3, maturity=1.0),
    "ex-c": MarketParams(strike=100.0, rate=0.08, volatility=0.2, maturity=3.0),
}


def preset(name: str) -> MarketParams:
    """Look up a named parameter preset"""
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class TransformedPoint:
    """A point (x, tau) of the front-fixed domain"""
    x: float
    tau: float

    @classmethod
    def from_spot(cls, spot: float, s_f: float, tau: float) -> "TransformedPoint":
        return cls(x=to_fixed_domain(spot, s_f), tau=tau)

    @property
    def in_continuation(self) -> bool:
        return self.x >= 0.0


@dataclass(frozen=True)
class BoundaryDerivatives:
    """Q, Q', Q'', Q''' at x = 0"""
    q0: float
    q1: float
    q2: float
    q3: float


class ClampCounter:
    """Thread-safe tally of square-root radicands clamped at zero"""

    def __init__(self):
        self.clamped = 0
        self.evaluated = 0
        self.lock = threading.Lock()

    def record(self, clamped: int, evaluated: int):
        with self.lock:
            self.clamped += clamped
            self.evaluated += evaluated

    def reset(self):
        with self.lock:
            self.clamped = 0
            self.evaluated = 0


def drift_nu(p: MarketParams) -> float:
    """nu = r - sigma^2/2"""
    return p.rate - 0.5 * p.volatility ** 2


def beta(p: MarketParams, g: float) -> float:
    """Convection coefficient nu + g, with g = (1/s_f) ds_f/dtau"""
    return drift_nu(p) + g


def to_fixed_domain(spot: float, s_f: float) -> float:
    """Log-moneyness x = ln(S / s_f)"""
    if not (spot > 0 and s_f > 0):
        raise ConfigurationError(f"spot and boundary must be positive, got S={spot}, s_f={s_f}")
    if spot == s_f:
        return 0.0
    return math.log(spot / s_f)


def q_transform(u: ArrayLike, x: ArrayLike, s_f: float, p: MarketParams,
                counter: ClampCounter = None) -> ArrayLike:
    """Square-root transform sqrt(max(u - E + e^x s_f, 0))"""
    radicand = np.asarray(u, dtype=float) - p.strike + np.exp(x) * s_f
    negative = radicand < 0.0
    if counter is not None:
        counter.record(int(np.count_nonzero(negative)), int(radicand.size))
    q = np.sqrt(np.where(negative, 0.0, radicand))
    if q.ndim == 0:
        return float(q)
    return q


def q_boundary_derivatives(p: MarketParams, beta_t: float) -> BoundaryDerivatives:
    """Closed-form Q derivatives at x = 0 for the current convection coefficient"""
    p.require_free_boundary()
    s = p.sqrt_rE
    sigma = p.volatility
    return BoundaryDerivatives(
        q0=0.0,
        q1=s / sigma,
        q2=-2.0 * beta_t * s / (3.0 * sigma ** 3),
        q3=2.0 * beta_t ** 2 * s / (3.0 * sigma ** 5) + p.rate * s / (2.0 * sigma ** 3),
    )


def q4_sf_second_coefficient(p: MarketParams, s_f: float) -> float:
    """Coefficient of d2s_f/dtau2 in Q''''(0)"""
    p.require_free_boundary()
    return -4.0 * p.sqrt_rE / (5.0 * p.volatility ** 5 * s_f)


def q4_known_terms(p: MarketParams, beta_t: float, g: float) -> float:
    """Part of Q''''(0) that does not involve d2s_f/dtau2"""
    p.require_free_boundary()
    s = p.sqrt_rE
    sigma = p.volatility
    return (4.0 * s * g ** 2 / (5.0 * sigma ** 5)
            - 32.0 * beta_t ** 3 * s / (45.0 * sigma ** 7)
            - 14.0 * beta_t * p.rate * s / (15.0 * sigma ** 5))


def q_fourth_derivative(p: MarketParams, beta_t: float, g: float, s_f: float,
                        sf_second: float) -> float:
    """Q''''(0) given the boundary, its relative velocity and its second derivative"""
    return q4_sf_second_coefficient(p, s_f) * sf_second + q4_known_terms(p, beta_t, g)
