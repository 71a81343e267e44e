#!/usr/bin/env python3
"""
Tests for the binomial oracle and the convergence-error bookkeeping
"""

import math
import unittest

import numpy as np
from scipy.stats import norm

from integrator import Method, Solution, SolverState, StepStats, TrajectoryPoint
from market_model import MarketParams, preset
from oracle_pricers import (BinomialConfig, convergence_rates, crr_american_put, format_rate, measure_errors,
                            reference_step, refinement_ratio)
from solver_errors import ConfigurationError
from stencil_factory import GridSpec


def european_put(p: MarketParams, S: float) -> float:
    d1 = (math.log(S / p.strike) + (p.rate + 0.5 * p.volatility ** 2) * p.maturity) / (
        p.volatility * math.sqrt(p.maturity))
    d2 = d1 - p.volatility * math.sqrt(p.maturity)
    return p.strike * math.exp(-p.rate * p.maturity) * norm.cdf(-d2) - S * norm.cdf(-d1)


def fake_solution(p: MarketParams, grid: GridSpec, s_f: float, sf_prime: float, shift: float = 0.0) -> Solution:
    """Solution whose u and w are smooth functions of x on the grid"""
    x = grid.interior_nodes()
    state = SolverState(u=np.exp(-x) + shift, w=-np.exp(-x), s_f=s_f, tau=p.maturity)
    point = TrajectoryPoint(tau=p.maturity, k=0.01, s_f=s_f, sf_prime=sf_prime, sf_second=0.0)
    return Solution(state=state, trajectory=[point], stats=StepStats(), grid=grid, params=p, method=Method.BS32)


class TestBinomialLattice(unittest.TestCase):
    """CRR American put"""

    def test_01_benchmark_values(self):
        """Test the lattice against published three-year put values"""
        p = preset("ex-c")
        cfg = BinomialConfig(steps=2000)
        for spot, expected in [(90.0, 11.6976), (100.0, 6.9320), (110.0, 4.1550)]:
            with self.subTest(spot=spot):
                self.assertAlmostEqual(crr_american_put(p, spot, cfg), expected, delta=0.01)

    def test_02_deep_in_the_money(self):
        """Test that deep in-the-money puts are worth their intrinsic value"""
        p = preset("ex-c")
        self.assertAlmostEqual(crr_american_put(p, 50.0, BinomialConfig(steps=500)), 50.0, places=10)

    def test_03_bounds(self):
        """Test intrinsic <= American <= E and American >= European"""
        p = preset("ex-b")
        cfg = BinomialConfig(steps=1000)
        for spot in (70.0, 90.0, 100.0, 130.0):
            with self.subTest(spot=spot):
                value = crr_american_put(p, spot, cfg)
                self.assertGreaterEqual(value, max(p.strike - spot, 0.0) - 1e-12)
                self.assertLessEqual(value, p.strike)
                self.assertGreaterEqual(value, european_put(p, spot) - 1e-2)

    def test_04_monotone(self):
        """Test that the value falls with spot and rises with volatility"""
        cfg = BinomialConfig(steps=800)
        p = preset("ex-a")
        values = [crr_american_put(p, s, cfg) for s in (80.0, 90.0, 100.0, 110.0)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))
        low = crr_american_put(MarketParams(100.0, 0.05, 0.15, 0.5), 100.0, cfg)
        high = crr_american_put(MarketParams(100.0, 0.05, 0.35, 0.5), 100.0, cfg)
        self.assertLess(low, high)

    def test_05_invalid(self):
        """Test rejection of bad spots, step counts and lattice probabilities"""
        with self.assertRaises(ConfigurationError):
            crr_american_put(preset("ex-a"), 0.0)
        with self.assertRaises(ConfigurationError):
            BinomialConfig(steps=0)
        with self.assertRaises(ConfigurationError):
            crr_american_put(MarketParams(100.0, 5.0, 0.01, 1.0), 100.0, BinomialConfig(steps=1))


class TestConvergenceBookkeeping(unittest.TestCase):
    """Errors on shared nodes and observed rates"""

    def setUp(self):
        self.p = preset("ex-b")
        self.coarse = GridSpec(x_max=3.0, n_x=12)
        self.fine = GridSpec(x_max=3.0, n_x=48)

    def test_01_rates(self):
        """Test log2 ratios and the undefined marker"""
        rates = convergence_rates([4e-3, 1e-3, 0.0, 1e-5])
        self.assertIsNone(rates[0])
        self.assertAlmostEqual(rates[1], 2.0, places=12)
        self.assertIsNone(rates[2])
        self.assertIsNone(rates[3])
        self.assertEqual(format_rate(None), "~")
        self.assertEqual(format_rate(rates[1]), "2.000")

    def test_02_refinement_ratio(self):
        """Test the node stride between nested grids"""
        self.assertEqual(refinement_ratio(self.coarse, self.fine), 4)
        with self.assertRaises(ConfigurationError):
            refinement_ratio(self.coarse, GridSpec(x_max=3.0, n_x=30))
        with self.assertRaises(ConfigurationError):
            refinement_ratio(self.coarse, GridSpec(x_max=2.0, n_x=48))

    def test_03_identical_profiles(self):
        """Test zero option and delta errors when the profiles agree on shared nodes"""
        report = measure_errors(fake_solution(self.p, self.coarse, 80.0, -5.0),
                                fake_solution(self.p, self.fine, 80.0, -5.0))
        self.assertAlmostEqual(report.option, 0.0, places=12)
        self.assertAlmostEqual(report.delta, 0.0, places=12)
        self.assertEqual(report.boundary, 0.0)
        self.assertEqual(report.h, 0.25)

    def test_04_offsets(self):
        """Test that each error picks up its own discrepancy"""
        report = measure_errors(fake_solution(self.p, self.coarse, 80.0, -5.0, shift=1e-3),
                                fake_solution(self.p, self.fine, 80.01, -5.5))
        # u(0) = E - s_f differs by 0.01 at x = 0
        self.assertAlmostEqual(report.option, 0.01, places=10)
        self.assertAlmostEqual(report.delta, 0.01, places=10)
        self.assertAlmostEqual(report.boundary, 0.01, places=10)
        self.assertAlmostEqual(report.boundary_slope, 0.5, places=12)
        self.assertEqual(len(report.as_row()), 4)

    def test_05_reference_step(self):
        """Test that a fine reference grid caps the fixed step at 0.04 h^2 / sigma^2"""
        p = preset("ex-a")
        fine = GridSpec.from_spacing(3.0, 0.0015625)
        self.assertAlmostEqual(reference_step(p, fine, 1e-5), 0.0015625 ** 2, delta=1e-18)
        self.assertEqual(reference_step(p, GridSpec.from_spacing(3.0, 0.05), 1e-5), 1e-5)


if __name__ == '__main__':
    unittest.main(verbosity=2)
