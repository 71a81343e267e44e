"""
Finite-difference stencils used by the front-fixing solver.

Two families live here:

* Near-boundary rows for the compact second-derivative operator: one-sided
  relations between f'' at nodes 1..k and the three-point difference
  (f0 - 2 f1 + f2) / h^2. They never touch f'' at the boundary node itself.

* Staggered boundary schemes: combinations of f at offsets gamma_m * h
  from the left boundary that equal a combination of h f'(0), h^2 f''(0),
  h^3 f'''(0) up to a prescribed set of annihilated Taylor orders.

All boundary-scheme weights come from the moment conditions

    sum_m w_m * gamma_m^p = 0   for every p in the kill set,

solved in exact rational arithmetic with the farthest weight fixed. The
derivative weights are the surviving moments, v_k = sum_m w_m gamma_m^k / k!,
and the truncation constant is C = sum_m w_m gamma_m^8 / 8!.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from solver_errors import ConfigurationError, SchemeCancellationError, SingularSystemError

logger = logging.getLogger(__name__)

MIN_NODES = 12
CANCELLATION_TOLERANCE = 1e-9
CERTIFY_TOLERANCE = 1e-9

KILL_A = frozenset({4, 5, 6, 7})
KILL_B = frozenset({3, 4, 5, 6})
KILL_SF_SECOND = frozenset({5, 6, 7})


# ============================================================================
# GRID AND NODE DISTRIBUTIONS
# ============================================================================

@dataclass(frozen=True)
class GridSpec:
    """Uniform grid x_i = i h, i = 0..n_x, on [0, x_max]"""
    x_max: float
    n_x: int

    def __post_init__(self):
        if not (self.x_max > 0 and math.isfinite(self.x_max)):
            raise ConfigurationError(f"x_max must be positive, got {self.x_max}")
        if self.n_x < MIN_NODES:
            raise ConfigurationError(f"grid needs n_x >= {MIN_NODES}, got {self.n_x}")

    @classmethod
    def from_spacing(cls, x_max: float, h: float) -> "GridSpec":
        """Build a grid from its spacing; h must divide x_max"""
        if not h > 0:
            raise ConfigurationError(f"grid spacing must be positive, got {h}")
        n_x = int(round(x_max / h))
        if n_x < 1 or abs(n_x * h - x_max) > 1e-9 * x_max:
            raise ConfigurationError(f"h={h} does not divide x_max={x_max}")
        return cls(x_max=x_max, n_x=n_x)

    @property
    def h(self) -> float:
        return self.x_max / self.n_x

    @property
    def interior_size(self) -> int:
        return self.n_x - 1

    def nodes(self) -> np.ndarray:
        return np.arange(self.n_x + 1) * self.h

    def interior_nodes(self) -> np.ndarray:
        return np.arange(1, self.n_x) * self.h

    def refined(self, factor: int) -> "GridSpec":
        return GridSpec(x_max=self.x_max, n_x=self.n_x * factor)


@dataclass(frozen=True)
class NodeDistribution:
    """Five strictly increasing node offsets gamma_1..gamma_5, in units of h"""
    gammas: tuple

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        object.__setattr__(self, "gammas", gammas)
        if len(gammas) != 5:
            raise ConfigurationError(f"node distribution needs 5 offsets, got {len(gammas)}")
        if gammas[0] < 2:
            raise ConfigurationError(f"gamma_1 must be >= 2 (keep clear of the boundary), got {gammas[0]}")
        if any(b <= a for a, b in zip(gammas, gammas[1:])):
            raise ConfigurationError(f"offsets must be strictly increasing, got {gammas}")

    @classmethod
    def complete(cls, gammas: Sequence[float]) -> "NodeDistribution":
        """Accept 4 or 5 offsets; a 4-offset list gets gamma_5 = gamma_4 + (gamma_4 - gamma_3)"""
        gammas = [float(g) for g in gammas]
        if len(gammas) == 4:
            gammas.append(gammas[3] + (gammas[3] - gammas[2]))
        return cls(tuple(gammas))

    @property
    def is_integer(self) -> bool:
        return all(float(g).is_integer() for g in self.gammas)

    def check_fits(self, grid: GridSpec):
        """Staggered nodes must land on grid points inside the domain"""
        if not self.is_integer:
            raise ConfigurationError(f"offsets must be integers to land on grid nodes, got {self.gammas}")
        if self.gammas[-1] * grid.h > grid.x_max:
            raise ConfigurationError(f"gamma_5 h = {self.gammas[-1] * grid.h} exceeds x_max = {grid.x_max}")


# ============================================================================
# STAGGERED BOUNDARY SCHEMES
# ============================================================================

@dataclass(frozen=True)
class BoundaryScheme:
    """Signed weights of a one-sided boundary scheme and its surviving derivative weights"""
    name: str
    nodes: tuple
    kill_set: frozenset
    w0: float
    w: tuple
    v1: float
    v2: float
    v3: float
    v4: float
    C: float
    exact_weights: tuple = field(default=(), compare=False, repr=False)
    max_residual: float = 0.0

    @property
    def active_indices(self) -> tuple:
        """Positions of the nodes that carry a nonzero weight"""
        return tuple(i for i, wm in enumerate(self.w) if wm != 0.0)

    @property
    def active_nodes(self) -> tuple:
        return tuple(self.nodes[i] for i in self.active_indices)

    @property
    def active_weights(self) -> tuple:
        return tuple(self.w[i] for i in self.active_indices)

    def moment(self, p: int) -> float:
        return float(sum(wm * g ** p for wm, g in zip(self.w, self.nodes)))

    def apply(self, samples: Sequence[float], f0: float = 0.0) -> float:
        """Weighted sum w0 f(0) + sum_m w_m f(gamma_m h) over all nodes"""
        if len(samples) != len(self.w):
            raise ConfigurationError(f"expected {len(self.w)} samples, got {len(samples)}")
        return self.w0 * f0 + float(np.dot(self.w, samples))

    def derivative_combination(self, h: float, d1: float, d2: float, d3: float, d4: float = 0.0) -> float:
        """v1 h f' + v2 h^2 f'' + v3 h^3 f''' + v4 h^4 f''''"""
        return self.v1 * h * d1 + self.v2 * h ** 2 * d2 + self.v3 * h ** 3 * d3 + self.v4 * h ** 4 * d4


def _solve_exact(matrix: list, rhs: list) -> list:
    """Gauss-Jordan elimination over the rationals"""
    n = len(matrix)
    rows = [list(row) + [b] for row, b in zip(matrix, rhs)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if rows[r][col] != 0), None)
        if pivot is None:
            raise SingularSystemError(f"moment system is singular in column {col}")
        rows[col], rows[pivot] = rows[pivot], rows[col]
        lead = rows[col][col]
        rows[col] = [v / lead for v in rows[col]]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    return [rows[r][n] for r in range(n)]


def _moment(weights: Sequence[Fraction], nodes: Sequence[Fraction], p: int) -> Fraction:
    return sum((wm * g ** p for wm, g in zip(weights, nodes)), Fraction(0))


def _scheme_from_exact(name: str, nodes: Sequence[Fraction], kill_set: frozenset,
                       weights: Sequence[Fraction]) -> BoundaryScheme:
    moments = {p: _moment(weights, nodes, p) for p in range(9)}
    w_float = tuple(float(wm) for wm in weights)
    residual = 0.0
    for p in kill_set:
        scale = sum(abs(wm) * float(g) ** p for wm, g in zip(w_float, nodes))
        value = sum(wm * float(g) ** p for wm, g in zip(w_float, nodes))
        if scale > 0:
            residual = max(residual, abs(value) / scale)
    return BoundaryScheme(
        name=name,
        nodes=tuple(float(g) for g in nodes),
        kill_set=frozenset(kill_set),
        w0=float(-moments[0]),
        w=w_float,
        v1=float(moments[1]),
        v2=float(moments[2] / 2),
        v3=float(moments[3] / 6),
        v4=float(moments[4] / 24),
        C=float(moments[8] / math.factorial(8)),
        exact_weights=tuple(weights),
        max_residual=residual,
    )


def solve_moment_weights(nodes: Sequence[float], kill_set: Iterable[int], last_weight: float = 1.0,
                         name: str = "custom") -> BoundaryScheme:
    """Weights at the given nodes annihilating every Taylor order in kill_set, farthest weight fixed"""
    kill = frozenset(int(p) for p in kill_set)
    if len(nodes) != len(kill) + 1:
        raise ConfigurationError(f"{len(nodes)} nodes cannot carry {len(kill)} moment conditions "
                                 f"with the last weight fixed")
    if any(p < 1 for p in kill):
        raise ConfigurationError(f"kill set must contain orders >= 1, got {sorted(kill)}")
    exact_nodes = [Fraction(g) for g in nodes]
    if any(g <= 0 for g in exact_nodes) or len(set(exact_nodes)) != len(exact_nodes):
        raise ConfigurationError(f"nodes must be distinct and positive, got {tuple(nodes)}")
    last = Fraction(last_weight)
    orders = sorted(kill)
    matrix = [[g ** p for g in exact_nodes[:-1]] for p in orders]
    rhs = [-last * exact_nodes[-1] ** p for p in orders]
    weights = _solve_exact(matrix, rhs) + [last]
    return _scheme_from_exact(name, exact_nodes, kill, weights)


def scheme_a(dist: NodeDistribution) -> BoundaryScheme:
    """Five-node scheme keeping f', f'', f''' (orders 4-7 annihilated)"""
    scheme = solve_moment_weights(dist.gammas, KILL_A, 1.0, name="A")
    logger.debug(f"scheme A {dist.gammas}: C = {scheme.C:.5f}")
    return scheme


def scheme_b(dist: NodeDistribution) -> BoundaryScheme:
    """Five-node scheme keeping f', f'' (orders 3-6 annihilated)"""
    return solve_moment_weights(dist.gammas, KILL_B, 1.0, name="B")


def scheme_c(dist: NodeDistribution) -> BoundaryScheme:
    """Difference A - B; the gamma_5 weight cancels, leaving a four-node scheme"""
    a = scheme_a(dist)
    b = scheme_b(dist)
    weights = [wa - wb for wa, wb in zip(a.exact_weights, b.exact_weights)]
    residual = abs(float(weights[-1]))
    if residual > CANCELLATION_TOLERANCE:
        raise SchemeCancellationError(residual)
    weights[-1] = Fraction(0)
    nodes = [Fraction(g) for g in dist.gammas]
    scheme = _scheme_from_exact("C", nodes, frozenset({4, 5, 6}), weights)
    logger.debug(f"scheme C {dist.gammas[:4]}: v3 = {scheme.v3:.6g}")
    return scheme


def sf_second_scheme() -> BoundaryScheme:
    """Uniform four-node scheme at (1, 2, 3, 4) x-bar keeping up to the fourth derivative"""
    return solve_moment_weights((1, 2, 3, 4), KILL_SF_SECOND, -1.0, name="S2")


def boundary_scheme(family: str, gammas: Sequence[float]) -> BoundaryScheme:
    """Scheme for a solver family: cs55 uses scheme A on 5 nodes, cs54 scheme C on 4"""
    family = family.lower()
    if family == "cs55":
        if len(gammas) != 5:
            raise ConfigurationError(f"cs55 needs 5 offsets, got {len(gammas)}")
        return scheme_a(NodeDistribution(tuple(gammas)))
    if family == "cs54":
        if len(gammas) not in (4, 5):
            raise ConfigurationError(f"cs54 needs 4 offsets, got {len(gammas)}")
        return scheme_c(NodeDistribution.complete(gammas))
    raise ConfigurationError(f"unknown scheme family {family!r}")


@dataclass(frozen=True)
class CertificationReport:
    """Per-degree residuals of a scheme evaluated on monomials at h = 1"""
    residuals: dict
    relative: dict
    required: frozenset
    passed: bool

    def max_required(self) -> float:
        return max((self.relative[p] for p in self.required), default=0.0)


def certify_scheme(scheme: BoundaryScheme, degree: int) -> CertificationReport:
    """Apply the scheme to x^0..x^degree and compare with its claimed derivative combination"""
    if degree > 10:
        raise ConfigurationError(f"certification degree must be <= 10, got {degree}")
    claimed = {1: scheme.v1, 2: scheme.v2, 3: scheme.v3, 4: scheme.v4}
    residuals = {}
    relative = {}
    for p in range(degree + 1):
        terms = [wm * g ** p for wm, g in zip(scheme.w, scheme.nodes)]
        f0 = 1.0 if p == 0 else 0.0
        value = scheme.w0 * f0 + sum(terms)
        target = claimed.get(p, 0.0) * math.factorial(p)
        residuals[p] = value - target
        scale = abs(scheme.w0 * f0) + sum(abs(t) for t in terms)
        relative[p] = abs(residuals[p]) / scale if scale > 0 else 0.0
    required = frozenset(p for p in scheme.kill_set | {0} if p <= degree)
    passed = all(relative[p] <= CERTIFY_TOLERANCE for p in required)
    return CertificationReport(residuals=residuals, relative=relative, required=required, passed=passed)


# ============================================================================
# NEAR-BOUNDARY COMPACT ROWS
# ============================================================================

class NearBoundaryOrder(Enum):
    """Accuracy of the one-sided row next to a Dirichlet boundary"""
    FOURTH = 4
    FIFTH = 5
    SIXTH = 6


_NEAR_BOUNDARY_LHS = {
    NearBoundaryOrder.FOURTH: (Fraction(14), Fraction(-5), Fraction(4), Fraction(-1)),
    NearBoundaryOrder.FIFTH: tuple(Fraction(c, 60) for c in (897, -528, 582, -288, 57)),
    NearBoundaryOrder.SIXTH: tuple(Fraction(c, 120) for c in (1902, -1596, 2244, -1656, 654, -108)),
}


@dataclass(frozen=True)
class NearBoundaryRow:
    """sum_j lhs_j f''(x_j), j = 1..k  =  (12/h^2) (f0 - 2 f1 + f2)"""
    order: NearBoundaryOrder
    lhs: tuple
    rhs_scale: float = 12.0
    rhs_stencil: tuple = (1.0, -2.0, 1.0)

    @property
    def width(self) -> int:
        return len(self.lhs)

    @property
    def lhs_float(self) -> np.ndarray:
        return np.array([float(c) for c in self.lhs])

    def rhs_factor(self, h: float) -> float:
        return self.rhs_scale / h ** 2


def near_boundary_row(order: NearBoundaryOrder) -> NearBoundaryRow:
    """Hard-coded one-sided compact row of the requested accuracy"""
    order = NearBoundaryOrder(order)
    return NearBoundaryRow(order=order, lhs=_NEAR_BOUNDARY_LHS[order])


def certify_near_boundary_row(row: NearBoundaryRow, degree: int) -> dict:
    """Residual LHS - RHS of the row on monomials x^0..x^degree at h = 1, exact"""
    residuals = {}
    for p in range(degree + 1):
        lhs = sum((c * p * (p - 1) * Fraction(j) ** (p - 2) if p >= 2 else Fraction(0))
                  for j, c in enumerate(row.lhs, start=1))
        rhs = Fraction(int(row.rhs_scale)) * sum(Fraction(s) * Fraction(j) ** p
                                                 for j, s in enumerate(row.rhs_stencil))
        residuals[p] = lhs - rhs
    return residuals


def describe(scheme: BoundaryScheme) -> dict:
    """Flat summary used by the stencil CSV output"""
    return {
        "name": scheme.name,
        "nodes": scheme.nodes,
        "w0": scheme.w0,
        "weights": scheme.w,
        "v1": scheme.v1,
        "v2": scheme.v2,
        "v3": scheme.v3,
        "v4": scheme.v4,
        "C": scheme.C,
        "max_residual": scheme.max_residual,
    }
