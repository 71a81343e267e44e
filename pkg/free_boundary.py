"""
Optimal exercise boundary velocity and curvature.

A staggered boundary scheme applied to Q = sqrt(U - E + e^x s_f) gives

    M = sum_m w_m Q(gamma_m h) = v1 h Q'(0) + v2 h^2 Q''(0) + v3 h^3 Q'''(0),

and the closed-form Q derivatives at x = 0 depend on beta = nu + g. Solving
the relation for g = (1/s_f) ds_f/dtau is a quadratic; its minus-branch root
is the physical (negative) velocity.

The boundary curvature has two evaluations: the four-node scheme at
x-bar = 2h, which reads Q''''(0) off the samples, and the time derivative of
the velocity relation along the semi-discrete flow. The scheme divides by
v4 x-bar^4, so on fine grids the second is the one recorded during a solve.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from market_model import (ClampCounter, MarketParams, beta, drift_nu, q4_known_terms,
                          q4_sf_second_coefficient, q_boundary_derivatives, q_transform)
from solver_errors import ConfigurationError, NegativeDiscriminant, SingularSystemError
from stencil_factory import BoundaryScheme, GridSpec, sf_second_scheme

logger = logging.getLogger(__name__)

DISCRIMINANT_CLAMP = 1e-12
SF_SECOND_STRIDE = 2

_SF_SECOND = sf_second_scheme()


class CurvatureMethod(Enum):
    FLOW = "flow"
    STENCIL = "stencil"


@dataclass(frozen=True)
class BoundaryState:
    """Boundary location with its first and second tau-derivatives"""
    s_f: float
    g: float
    sf_prime: float
    sf_second: float = float("nan")


@dataclass(frozen=True)
class QuadraticCoeffs:
    """a2 g^2 + a1 g + a0 = 0"""
    a2: float
    a1: float
    a0: float

    @property
    def discriminant(self) -> float:
        return self.a1 ** 2 - 4.0 * self.a2 * self.a0

    def evaluate(self, g: float) -> float:
        return (self.a2 * g + self.a1) * g + self.a0


def _grid_indices(nodes, grid: GridSpec) -> np.ndarray:
    """Interior-vector indices of the integer node offsets"""
    offsets = np.asarray(nodes, dtype=float)
    if not np.all(offsets == np.round(offsets)):
        raise ConfigurationError(f"node offsets must be integers, got {tuple(nodes)}")
    idx = offsets.astype(int)
    if idx.max() > grid.n_x - 1:
        raise ConfigurationError(f"node offset {idx.max()} lies beyond the last interior node "
                                 f"(n_x = {grid.n_x})")
    return idx


def sample_q(u: np.ndarray, s_f: float, scheme: BoundaryScheme, grid: GridSpec, p: MarketParams,
             counter: Optional[ClampCounter] = None) -> np.ndarray:
    """Q at the scheme's active nodes gamma_m h"""
    idx = _grid_indices(scheme.active_nodes, grid)
    x = idx * grid.h
    return q_transform(np.asarray(u)[idx - 1], x, s_f, p, counter)


def boundary_relation(scheme: BoundaryScheme, p: MarketParams, h: float, g: float) -> float:
    """Right-hand side v1 h Q' + v2 h^2 Q'' + v3 h^3 Q''' at beta = nu + g"""
    q = q_boundary_derivatives(p, beta(p, g))
    return scheme.derivative_combination(h, q.q1, q.q2, q.q3)


def velocity_quadratic(M: float, scheme: BoundaryScheme, p: MarketParams, h: float) -> QuadraticCoeffs:
    """Collect the boundary relation in powers of g"""
    p.require_free_boundary()
    s = p.sqrt_rE
    sigma = p.volatility
    nu = drift_nu(p)
    v1, v2, v3 = scheme.v1, scheme.v2, scheme.v3
    a2 = 2.0 * h ** 3 * v3 * s / (3.0 * sigma ** 5)
    a1 = -2.0 * h ** 2 * v2 * s / (3.0 * sigma ** 3) + 4.0 * nu * h ** 3 * v3 * s / (3.0 * sigma ** 5)
    a0 = (h * v1 * s / sigma
          - 2.0 * nu * h ** 2 * v2 * s / (3.0 * sigma ** 3)
          + h ** 3 * v3 * (2.0 * nu ** 2 * s / (3.0 * sigma ** 5) + p.rate * s / (2.0 * sigma ** 3))
          - M)
    return QuadraticCoeffs(a2=a2, a1=a1, a0=a0)


def boundary_velocity(q: QuadraticCoeffs) -> float:
    """Minus-branch root (-a1 - sqrt(D)) / (2 a2), or -a0/a1 when a2 = 0"""
    if q.a2 == 0.0:
        if q.a1 == 0.0:
            raise SingularSystemError("velocity relation does not depend on g")
        return -q.a0 / q.a1

    disc = q.discriminant
    scale = q.a1 ** 2
    if disc < 0.0:
        if disc > -DISCRIMINANT_CLAMP * scale:
            disc = 0.0
        else:
            raise NegativeDiscriminant(disc, scale)
    root = math.sqrt(disc)
    if q.a1 < 0.0:
        # same root, without cancelling -a1 against sqrt(D)
        return 2.0 * q.a0 / (-q.a1 + root)
    return (-q.a1 - root) / (2.0 * q.a2)


def boundary_residual(M: float, scheme: BoundaryScheme, p: MarketParams, h: float, g: float) -> float:
    """Imbalance of the boundary relation at velocity g"""
    return boundary_relation(scheme, p, h, g) - M


def relative_velocity(u: np.ndarray, s_f: float, scheme: BoundaryScheme, grid: GridSpec,
                      p: MarketParams, counter: Optional[ClampCounter] = None) -> tuple:
    """g together with the weighted Q-sum and the quadratic it came from"""
    samples = sample_q(u, s_f, scheme, grid, p, counter)
    M = float(np.dot(scheme.active_weights, samples))
    coeffs = velocity_quadratic(M, scheme, p, grid.h)
    return boundary_velocity(coeffs), M, coeffs


def second_derivative_sf(u: np.ndarray, s_f: float, g: float, p: MarketParams, grid: GridSpec,
                         scheme: BoundaryScheme = _SF_SECOND) -> float:
    """d2 s_f / dtau2 from the four-node scheme at x-bar = 2h and the exact Q''''(0) relation"""
    xbar = SF_SECOND_STRIDE * grid.h
    nodes = [SF_SECOND_STRIDE * int(n) for n in scheme.nodes]
    idx = _grid_indices(nodes, grid)
    samples = q_transform(np.asarray(u)[idx - 1], idx * grid.h, s_f, p)
    lhs = float(np.dot(scheme.w, samples))

    beta_t = beta(p, g)
    q = q_boundary_derivatives(p, beta_t)
    known = scheme.derivative_combination(xbar, q.q1, q.q2, q.q3)
    q4 = (lhs - known) / (scheme.v4 * xbar ** 4)
    return (q4 - q4_known_terms(p, beta_t, g)) / q4_sf_second_coefficient(p, s_f)


def velocity_rate(u: np.ndarray, s_f: float, g: float, u_rate: np.ndarray, sf_rate: float,
                  scheme: BoundaryScheme, grid: GridSpec, p: MarketParams) -> float:
    """dg/dtau along the semi-discrete flow.

    The velocity relation F(g, M) = a2 g^2 + a1 g + a0 - M = 0 holds at every
    tau, and only M moves with the state, so dg/dtau = (dM/dtau) / (2 a2 g + a1)
    with dM/dtau = sum_m w_m (du_m/dtau + e^(x_m) ds_f/dtau) / (2 Q_m).
    """
    idx = _grid_indices(scheme.active_nodes, grid)
    x = idx * grid.h
    q = q_transform(np.asarray(u)[idx - 1], x, s_f, p)
    if np.any(q <= 0.0):
        raise SingularSystemError("Q vanishes at a boundary-scheme node")
    q_rate = (np.asarray(u_rate)[idx - 1] + np.exp(x) * sf_rate) / (2.0 * q)
    m_rate = float(np.dot(scheme.active_weights, q_rate))
    coeffs = velocity_quadratic(0.0, scheme, p, grid.h)
    slope = 2.0 * coeffs.a2 * g + coeffs.a1
    if slope == 0.0:
        raise SingularSystemError("velocity relation is stationary in g")
    return m_rate / slope


def flow_second_derivative_sf(s_f: float, g: float, g_rate: float) -> float:
    """d2 s_f / dtau2 = s_f (dg/dtau + g^2), from s_f' = g s_f"""
    return s_f * (g_rate + g * g)


def boundary_state(u: np.ndarray, s_f: float, scheme: BoundaryScheme, grid: GridSpec,
                   p: MarketParams) -> BoundaryState:
    g, _, _ = relative_velocity(u, s_f, scheme, grid, p)
    return BoundaryState(s_f=s_f, g=g, sf_prime=g * s_f,
                         sf_second=second_derivative_sf(u, s_f, g, p, grid))
