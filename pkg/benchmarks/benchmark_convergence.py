#!/usr/bin/env python3
"""
Spatial convergence ladder with fixed-step SSPRK3
Errors against a 4x finer self-reference and observed rates
"""

import sys
import os
import time
import json

# Add parent directory to path to import the solver modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from integrator import Method, solve
from market_model import preset
from oracle_pricers import convergence_rates, format_rate, measure_errors, reference_solution
from stencil_factory import GridSpec, boundary_scheme

COLUMNS = ("option", "delta", "boundary", "boundary_slope")


def run_ladder(family: str, gammas: tuple, ladder: tuple, k: float) -> list:
    p = preset("ex-a")
    scheme = boundary_scheme(family, gammas)
    print(f"  Reference h={ladder[-1] / 4:g}...", end="", flush=True)
    start = time.perf_counter()
    reference = reference_solution(p, GridSpec.from_spacing(3.0, ladder[-1] / 4), scheme,
                                   method=Method.SSPRK3, fixed_k=k, with_sf_second=False)
    print(f" {time.perf_counter() - start:.1f}s")

    reports = []
    for h in ladder:
        print(f"  Level h={h:g}...", end="", flush=True)
        start = time.perf_counter()
        run = solve(p, GridSpec.from_spacing(3.0, h), scheme, method=Method.SSPRK3, fixed_k=k,
                    with_sf_second=False)
        reports.append(measure_errors(run, reference))
        print(f" {time.perf_counter() - start:.1f}s")
    return reports


def run_benchmark(ladder: tuple, k: float):
    """Run the ladder for both scheme families"""

    print("\n" + "="*70)
    print(f"Spatial Convergence (ex-a, SSPRK3 k={k:g})")
    print("="*70)

    results = []
    for family, gammas in [("cs55", (2, 3, 4, 5, 6)), ("cs54", (2, 3, 4, 5)), ("cs54", (2, 4, 6, 8))]:
        label = f"{family.upper()}({','.join(str(g) for g in gammas)})"
        print(f"\nBenchmark: {label}")
        reports = run_ladder(family, gammas, ladder, k)
        rates = {c: convergence_rates([getattr(r, c) for r in reports]) for c in COLUMNS}
        for i, rep in enumerate(reports):
            row = {"scheme": label, "h": rep.h}
            for c in COLUMNS:
                row[f"{c}_error"] = getattr(rep, c)
                row[f"{c}_rate"] = rates[c][i]
            results.append(row)

        print(f"  {'h':<10}" + "".join(f"{c:<22}" for c in COLUMNS))
        for i, rep in enumerate(reports):
            cells = "".join(f"{getattr(rep, c):<10.3e} {format_rate(rates[c][i]):<11}" for c in COLUMNS)
            print(f"  {rep.h:<10g}{cells}")

    with open("benchmark_convergence_results.json", "w") as f:
        json.dump(results, f, indent=2)
    print(f"\nResults saved to benchmark_convergence_results.json")


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Spatial convergence ladder")
    parser.add_argument("--ladder", default="0.05,0.025,0.0125", help="Halving grid spacings")
    parser.add_argument("--k", type=float, default=1e-5, help="Fixed SSPRK3 step")

    args = parser.parse_args()
    run_benchmark(tuple(float(h) for h in args.ladder.split(",")), args.k)
