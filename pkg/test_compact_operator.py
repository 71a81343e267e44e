#!/usr/bin/env python3
"""
Tests for the compact second-derivative operator
"""

import threading
import unittest

import numpy as np
from scipy.linalg import solve as dense_solve

from compact_operator import BoundaryValues, CompactSystem, OperatorVariant, assemble
from solver_errors import ConfigurationError, NonFiniteStateError
from stencil_factory import GridSpec


def sample(grid: GridSpec, fn):
    """Interior values and Dirichlet data of fn on a grid"""
    x = grid.nodes()
    values = fn(x)
    return values[1:-1], BoundaryValues(left=float(values[0]), right=float(values[-1]))


def max_error(sys: CompactSystem, fn, d2fn) -> float:
    f, bc = sample(sys.grid, fn)
    return float(np.max(np.abs(sys.second_derivative(f, bc) - d2fn(sys.grid.interior_nodes()))))


class TestAssembly(unittest.TestCase):
    """Matrix structure and factorization"""

    def test_01_band_widths(self):
        """Test that the band widens to fit the near-boundary rows"""
        grid = GridSpec.from_spacing(3.0, 0.1)
        for variant, width in [(OperatorVariant.B4, 3), (OperatorVariant.B5, 4), (OperatorVariant.B6, 5)]:
            with self.subTest(variant=variant):
                sys = assemble(grid, variant)
                self.assertEqual((sys.kl, sys.ku), (width, width))

    def test_02_lhs_rows(self):
        """Test interior (2/11, 1, 2/11) rows and the fifth-order boundary row"""
        lhs = assemble(GridSpec.from_spacing(3.0, 0.1)).lhs_dense()
        np.testing.assert_allclose(lhs[5, 4:7], [2 / 11, 1.0, 2 / 11])
        np.testing.assert_allclose(lhs[0, :5], np.array([897, -528, 582, -288, 57]) / 60)
        np.testing.assert_allclose(lhs[-1, -5:], np.array([57, -288, 582, -528, 897]) / 60)
        for row in lhs[1:-1]:
            diag = np.max(np.abs(row))
            self.assertGreater(diag, np.sum(np.abs(row)) - diag)

    def test_03_lhs_independent_of_h(self):
        """Test that refining the grid leaves the left-hand entries unchanged"""
        coarse = assemble(GridSpec.from_spacing(3.0, 0.1)).lhs_dense()
        fine = assemble(GridSpec.from_spacing(3.0, 0.05)).lhs_dense()
        np.testing.assert_array_equal(coarse[:8, :8], fine[:8, :8])

    def test_04_pivot_growth(self):
        """Test that the banded LU shows no pivot growth"""
        for variant in OperatorVariant:
            with self.subTest(variant=variant):
                sys = assemble(GridSpec.from_spacing(3.0, 0.01), variant)
                self.assertLessEqual(sys.pivot_growth, 10.0)

    def test_05_dense_cross_check(self):
        """Test the banded solve against a dense solve"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.05), OperatorVariant.B6)
        f, bc = sample(sys.grid, lambda x: np.sin(x) * np.exp(-x))
        expected = dense_solve(sys.lhs_dense(), sys.apply_rhs(f, bc))
        np.testing.assert_allclose(sys.second_derivative(f, bc), expected, rtol=1e-10, atol=1e-10)


class TestForcing(unittest.TestCase):
    """Boundary taps moved to the right-hand side"""

    def setUp(self):
        self.sys = assemble(GridSpec.from_spacing(3.0, 0.1))

    def test_01_zero_boundaries(self):
        """Test that zero data gives zero forcing"""
        np.testing.assert_array_equal(self.sys.forcing(BoundaryValues(0.0, 0.0)), 0.0)

    def test_02_left_unit(self):
        """Test row 1 = 12/h^2 and row 2 = (3/11)/(4h^2) for a unit left value"""
        out = self.sys.forcing(BoundaryValues(1.0, 0.0))
        self.assertAlmostEqual(out[0], 1200.0, places=9)
        self.assertAlmostEqual(out[1], 3.0 / (11.0 * 0.04), places=9)
        np.testing.assert_array_equal(out[2:], 0.0)

    def test_03_right_mirrored(self):
        """Test the mirrored taps at x_max"""
        out = self.sys.forcing(BoundaryValues(0.0, 2.0))
        self.assertAlmostEqual(out[-1], 2400.0, places=9)
        self.assertAlmostEqual(out[-2], 6.0 / (11.0 * 0.04), places=9)
        np.testing.assert_array_equal(out[:-2], 0.0)


class TestSecondDerivative(unittest.TestCase):
    """Accuracy and linearity of f'' = B^-1 (A f + forcing)"""

    def test_01_constant(self):
        """Test that constants are annihilated"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.05))
        c = 7.5
        f, bc = sample(sys.grid, lambda x: np.full_like(x, c))
        np.testing.assert_allclose(sys.second_derivative(f, bc), 0.0, atol=1e-11 * c / sys.grid.h ** 2)

    def test_02_linear(self):
        """Test that linears are annihilated"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.05))
        f, bc = sample(sys.grid, lambda x: 2.0 - 0.5 * x)
        np.testing.assert_allclose(sys.second_derivative(f, bc), 0.0, atol=1e-9 / sys.grid.h ** 2 * 3.0)

    def test_03_quadratic(self):
        """Test f = x^2 gives 2 at every node"""
        for variant in OperatorVariant:
            with self.subTest(variant=variant):
                sys = assemble(GridSpec.from_spacing(3.0, 0.05), variant)
                f, bc = sample(sys.grid, lambda x: x ** 2)
                np.testing.assert_allclose(sys.second_derivative(f, bc), 2.0, atol=1e-9)

    def test_04_polynomial_exactness(self):
        """Test exactness through degree 5 (B4), 6 (B5) and 7 (B6)"""
        grid = GridSpec.from_spacing(3.0, 0.1)
        for variant, degree in [(OperatorVariant.B4, 5), (OperatorVariant.B5, 6), (OperatorVariant.B6, 7)]:
            sys = assemble(grid, variant)
            for p in range(2, degree + 1):
                with self.subTest(variant=variant, degree=p):
                    exact = p * (p - 1) * grid.interior_nodes() ** (p - 2)
                    f, bc = sample(grid, lambda x: x ** p)
                    err = np.max(np.abs(sys.second_derivative(f, bc) - exact))
                    self.assertLessEqual(err, 1e-8 * np.max(np.abs(exact)))

    def test_05_degree_beyond_b5(self):
        """Test that B5 is not exact on x^7 near the boundary"""
        grid = GridSpec.from_spacing(3.0, 0.1)
        sys = assemble(grid, OperatorVariant.B5)
        exact = 42 * grid.interior_nodes() ** 5
        f, bc = sample(grid, lambda x: x ** 7)
        self.assertGreater(abs(sys.second_derivative(f, bc)[0] - exact[0]), 1e-8)

    def test_06_refinement_sin(self):
        """Test high-order error decay on sin(x)"""
        coarse = assemble(GridSpec.from_spacing(3.0, 0.1))
        fine = assemble(GridSpec.from_spacing(3.0, 0.05))
        ratio = max_error(coarse, np.sin, lambda x: -np.sin(x)) / max_error(fine, np.sin, lambda x: -np.sin(x))
        self.assertGreaterEqual(ratio, 20.0)

    def test_07_refinement_exp(self):
        """Test high-order error decay on e^-x"""
        fn = lambda x: np.exp(-x)
        coarse = assemble(GridSpec.from_spacing(3.0, 0.1))
        fine = assemble(GridSpec.from_spacing(3.0, 0.05))
        self.assertGreaterEqual(max_error(coarse, fn, fn) / max_error(fine, fn, fn), 20.0)

    def test_08_linearity(self):
        """Test op(a f + b g) = a op(f) + b op(g)"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.05))
        rng = np.random.default_rng(7)
        f, g = rng.standard_normal(sys.size), rng.standard_normal(sys.size)
        bf, bg = BoundaryValues(0.3, -0.1), BoundaryValues(-1.2, 0.4)
        a, b = 2.5, -0.75
        combined = sys.second_derivative(a * f + b * g, BoundaryValues(a * bf.left + b * bg.left,
                                                                        a * bf.right + b * bg.right))
        separate = a * sys.second_derivative(f, bf) + b * sys.second_derivative(g, bg)
        np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12 * np.max(np.abs(separate)))

    def test_09_zero(self):
        """Test that zero data gives zero"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.05))
        np.testing.assert_array_equal(sys.second_derivative(np.zeros(sys.size), BoundaryValues(0.0)), 0.0)

    def test_10_pair_matches_single(self):
        """Test the stacked two-column solve against separate solves"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.05))
        u, bu = sample(sys.grid, lambda x: np.exp(-x))
        w, bw = sample(sys.grid, lambda x: -np.exp(-2 * x))
        du, dw = sys.second_derivative_pair(u, bu, w, bw)
        np.testing.assert_allclose(du, sys.second_derivative(u, bu), rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(dw, sys.second_derivative(w, bw), rtol=1e-14, atol=1e-14)

    def test_11_bad_input(self):
        """Test rejection of non-finite data and wrong lengths"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.1))
        f = np.zeros(sys.size)
        f[3] = np.nan
        with self.assertRaises(NonFiniteStateError):
            sys.second_derivative(f, BoundaryValues(0.0))
        with self.assertRaises(NonFiniteStateError):
            sys.second_derivative(np.zeros(sys.size), BoundaryValues(float("inf")))
        with self.assertRaises(ConfigurationError):
            sys.second_derivative(np.zeros(sys.size + 1), BoundaryValues(0.0))

    def test_12_shared_across_threads(self):
        """Test that concurrent solves on one system are reproducible"""
        sys = assemble(GridSpec.from_spacing(3.0, 0.01))
        f, bc = sample(sys.grid, lambda x: np.exp(-x) * np.cos(3 * x))
        expected = sys.second_derivative(f, bc)
        results = [None] * 8

        def worker(i):
            results[i] = sys.second_derivative(f, bc)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for r in results:
            np.testing.assert_array_equal(r, expected)


if __name__ == '__main__':
    unittest.main(verbosity=2)
