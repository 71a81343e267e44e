"""
Sixth-order compact second-derivative operator on the interior nodes.

Solves  B f'' = A f + forcing  for f'' at nodes 1..n_x-1, where B is the
h-independent banded left-hand matrix and A carries every 1/h^2 factor.
Interior rows use

    (2/11) f''_{i-1} + f''_i + (2/11) f''_{i+1}
        = (12/11) (f_{i+1} - 2 f_i + f_{i-1}) / h^2
        + (3/11) (f_{i+2} - 2 f_i + f_{i-2}) / (4 h^2)

and rows 1 and n_x-1 use a one-sided near-boundary row (mirrored on the
right). B is factored once per grid and reused for every solve.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import lapack

from solver_errors import ConfigurationError, NonFiniteStateError, SingularSystemError
from stencil_factory import GridSpec, NearBoundaryOrder, near_boundary_row

logger = logging.getLogger(__name__)

ALPHA = 2.0 / 11.0
A_COEFF = 12.0 / 11.0
B_COEFF = 3.0 / 11.0


class OperatorVariant(Enum):
    """Which near-boundary row closes the system"""
    B4 = "b4"
    B5 = "b5"
    B6 = "b6"

    @property
    def order(self) -> NearBoundaryOrder:
        return {"b4": NearBoundaryOrder.FOURTH,
                "b5": NearBoundaryOrder.FIFTH,
                "b6": NearBoundaryOrder.SIXTH}[self.value]


@dataclass(frozen=True)
class BoundaryValues:
    """Dirichlet data at x = 0 and x = x_max"""
    left: float
    right: float = 0.0


class CompactSystem:
    """Assembled compact operator with a reusable banded LU of the left-hand matrix"""

    def __init__(self, grid: GridSpec, variant: OperatorVariant = OperatorVariant.B5):
        self.grid = grid
        self.variant = OperatorVariant(variant)
        self.size = grid.n_x - 1
        self.row = near_boundary_row(self.variant.order)
        self.kl = self.ku = self.row.width - 1

        self.lhs = self._build_lhs()
        self.rhs_operator = self._build_rhs()

        band = self._band_storage(self.lhs)
        lu, piv, info = lapack.dgbtrf(band, self.kl, self.ku)
        if info != 0:
            raise SingularSystemError(f"banded LU failed (info={info})")
        self._lu = lu
        self._piv = piv

        logger.debug(f"assembled {self.variant.value} operator: n_x={grid.n_x}, h={grid.h:.6g}, "
                     f"band=({self.kl},{self.ku})")

    def _build_lhs(self) -> sparse.csr_matrix:
        n = self.size
        lhs = sparse.lil_matrix((n, n))
        for i in range(n):
            if 0 < i < n - 1:
                lhs[i, i - 1] = ALPHA
                lhs[i, i] = 1.0
                lhs[i, i + 1] = ALPHA
        coeffs = self.row.lhs_float
        for j, c in enumerate(coeffs):
            lhs[0, j] = c
            lhs[n - 1, n - 1 - j] = c
        return lhs.tocsr()

    def _build_rhs(self) -> sparse.csr_matrix:
        n = self.size
        inv_h2 = 1.0 / self.grid.h ** 2
        near = self.row.rhs_factor(self.grid.h)
        wide = B_COEFF / 4.0 * inv_h2
        narrow = A_COEFF * inv_h2

        rhs = sparse.lil_matrix((n, n))
        for i in range(1, n - 1):
            rhs[i, i] = -2.0 * narrow - 2.0 * wide
            rhs[i, i - 1] = narrow
            rhs[i, i + 1] = narrow
            if i - 2 >= 0:
                rhs[i, i - 2] = wide
            if i + 2 <= n - 1:
                rhs[i, i + 2] = wide
        rhs[0, 0] = -2.0 * near
        rhs[0, 1] = near
        rhs[n - 1, n - 1] = -2.0 * near
        rhs[n - 1, n - 2] = near
        return rhs.tocsr()

    def _band_storage(self, matrix: sparse.csr_matrix) -> np.ndarray:
        """LAPACK general-band layout with kl extra rows for fill-in"""
        kl, ku = self.kl, self.ku
        band = np.zeros((2 * kl + ku + 1, self.size))
        coo = matrix.tocoo()
        band[kl + ku + coo.row - coo.col, coo.col] = coo.data
        return band

    @property
    def pivot_growth(self) -> float:
        """max |LU entries| / max |B|"""
        return float(np.max(np.abs(self._lu)) / np.max(np.abs(self.lhs.data)))

    def lhs_dense(self) -> np.ndarray:
        return self.lhs.toarray()

    def forcing(self, bc: BoundaryValues) -> np.ndarray:
        """Boundary taps of A moved to the right-hand side"""
        h = self.grid.h
        out = np.zeros(self.size)
        near = self.row.rhs_factor(h)
        wide = B_COEFF / (4.0 * h ** 2)
        out[0] += near * bc.left
        out[1] += wide * bc.left
        out[-1] += near * bc.right
        out[-2] += wide * bc.right
        return out

    def apply_rhs(self, f: np.ndarray, bc: BoundaryValues) -> np.ndarray:
        return self.rhs_operator @ f + self.forcing(bc)

    def _check_input(self, f: np.ndarray, bc: BoundaryValues) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.size,):
            raise ConfigurationError(f"expected {self.size} interior values, got shape {f.shape}")
        if not (np.all(np.isfinite(f)) and np.isfinite(bc.left) and np.isfinite(bc.right)):
            raise NonFiniteStateError("non-finite input to the compact operator")
        return f

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self._lu, self.kl, self.ku, rhs, self._piv)
        if info != 0:
            raise SingularSystemError(f"banded solve failed (info={info})")
        return x

    def second_derivative(self, f: np.ndarray, bc: BoundaryValues) -> np.ndarray:
        """f'' at the interior nodes"""
        f = self._check_input(f, bc)
        return self._solve(self.apply_rhs(f, bc))

    def second_derivative_pair(self, u: np.ndarray, bc_u: BoundaryValues,
                               w: np.ndarray, bc_w: BoundaryValues) -> tuple:
        """Both second derivatives through one two-column banded solve"""
        u = self._check_input(u, bc_u)
        w = self._check_input(w, bc_w)
        stacked = np.column_stack([self.apply_rhs(u, bc_u), self.apply_rhs(w, bc_w)])
        x = self._solve(stacked)
        return x[:, 0], x[:, 1]


def assemble(grid: GridSpec, variant: OperatorVariant = OperatorVariant.B5) -> CompactSystem:
    """Build and factor the compact operator for a grid"""
    return CompactSystem(grid, variant)
