#!/usr/bin/env python3
"""
Adaptive BS3(2) versus fixed-step SSPRK3 on the three-year put
Wall time, P(90) accuracy and step statistics per run
"""

import sys
import os
import time
import statistics
import json

# Add parent directory to path to import the solver modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from experiments_cli import spot_readout
from integrator import Method, StepControl, solve
from market_model import preset
from stencil_factory import GridSpec, boundary_scheme

TRUE_P90 = 11.6976


def time_solve(repeats: int, **kwargs) -> tuple:
    """
    Solve `repeats` times and keep the wall times

    Returns:
        Tuple of (solution of the last run, list of seconds)
    """
    p = preset("ex-c")
    grid = GridSpec.from_spacing(3.0, kwargs.pop("h"))
    scheme = boundary_scheme("cs54", (2, 4, 6, 8))
    seconds = []
    solution = None
    for _ in range(repeats):
        start = time.perf_counter()
        solution = solve(p, grid, scheme, with_sf_second=False, **kwargs)
        seconds.append(time.perf_counter() - start)
    return solution, seconds


def run_benchmark(h: float = 0.02, repeats: int = 3):
    """Run the fixed-step and adaptive cells"""

    print("\n" + "="*70)
    print(f"Adaptive vs Fixed Time Stepping (ex-c, CS54(2,4,6,8), h={h:g})")
    print("="*70)

    cells = [("ssprk3", dict(method=Method.SSPRK3, fixed_k=k), k, None) for k in (4e-3, 8e-4, 4e-4)]
    cells += [("bs32", dict(ctl=StepControl(eps=1e-2, rho=rho)), None, rho) for rho in (0.2, 0.3, 0.5, 0.9)]

    results = []
    for name, kwargs, k, rho in cells:
        label = f"k={k:g}" if k else f"rho={rho:g}"
        print(f"\nBenchmark: {name} {label}")
        print(f"  Running {repeats} solves...", end="", flush=True)
        solution, seconds = time_solve(repeats, h=h, **kwargs)
        print(" Done")

        p90 = spot_readout(solution, 90.0)[0]
        stats = solution.stats
        results.append({
            "method": name,
            "k": k,
            "rho": rho,
            "median_seconds": statistics.median(seconds),
            "min_seconds": min(seconds),
            "p90": p90,
            "abs_error": abs(p90 - TRUE_P90),
            "accepted": stats.accepted,
            "rejected": stats.rejected,
            "k_min": stats.k_min,
            "k_avg": stats.k_avg,
            "k_max": stats.k_max,
        })
        print(f"  Median time: {statistics.median(seconds):.3f}s")
        print(f"  P(90) = {p90:.4f} (error {abs(p90 - TRUE_P90):.1e})")
        print(f"  Steps: {stats.accepted} accepted, {stats.rejected} rejected")

    print("\n" + "="*70)
    print("Summary")
    print("="*70)
    print(f"{'Run':<20} {'Time (s)':<12} {'P(90)':<12} {'Avg step':<12}")
    print("-"*70)
    for r in results:
        label = f"{r['method']} " + (f"k={r['k']:g}" if r["k"] else f"rho={r['rho']:g}")
        print(f"{label:<20} {r['median_seconds']:<12.3f} {r['p90']:<12.4f} {r['k_avg']:<12.3e}")

    with open("benchmark_timing_results.json", "w") as f:
        json.dump(results, f, indent=2)
    print(f"\nResults saved to benchmark_timing_results.json")

    accurate_fixed = [r for r in results if r["method"] == "ssprk3" and r["abs_error"] <= 5e-4]
    if accurate_fixed:
        baseline = min(r["median_seconds"] for r in accurate_fixed)
        print("\n" + "="*70)
        print("Speedup over the cheapest accurate fixed-step run")
        print("="*70)
        for r in results:
            if r["method"] == "bs32":
                print(f"rho={r['rho']:<5g} {baseline / r['median_seconds']:>6.2f}x")


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Adaptive vs fixed step timing")
    parser.add_argument("--h", type=float, default=0.02, help="Grid spacing")
    parser.add_argument("--repeats", type=int, default=3, help="Solves per cell")

    args = parser.parse_args()
    run_benchmark(args.h, args.repeats)
