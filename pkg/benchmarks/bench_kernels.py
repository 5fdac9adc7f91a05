#!/usr/bin/env python3
"""Benchmark the hot kernels on both execution paths.

Spawns one child per mode (BATTWIN_NUMBA=1 compiled, =0 pure numpy/Python),
times identical workloads, and prints the comparison. Compile time is paid
once before the timed region (cache-warm runs skip it entirely).

Usage: python benchmarks/bench_kernels.py [--steps 200000]
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from battwin import NUMBA_ENABLED, kernels
from battwin.ecm import OCV_COEFFS, load_charging_table, load_discharging_table

steps = int(sys.argv[1])
tc, td = load_charging_table(), load_discharging_table()
rng = np.random.default_rng(0)
i = rng.uniform(-15.0, 15.0, steps)
i[rng.random(steps) < 0.2] = 0.0

def plant():
    return kernels.plant_loop(i, 1.0, 1.0, 1.0, 360000.0, 0.6, 0.0, 0.0, 0,
                              tc.socs, tc.values, td.socs, td.values, OCV_COEFFS)

x0 = np.array([0.55, 0.0, 0.0])
p0 = np.diag([1e-2, 1e-4, 1e-4])
jd = np.array([1e-7, 1e-5, 1e-5])

def ekf(v):
    return kernels.ekf_loop(i, v, 1.0, 1.0, 1.0, 360000.0, OCV_COEFFS,
                            tc.socs, tc.values, td.socs, td.values,
                            x0, p0, jd, 1e-2, 0, False, 1.0)

out = plant()          # warm: JIT compile / cache load
v_meas = out[3] + rng.normal(0, 0.01, steps)
ekf(v_meas)

def best_of(fn, reps=3):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best

results = {"numba": NUMBA_ENABLED}
results["plant_loop"] = best_of(plant)
results["ekf_loop"] = best_of(lambda: ekf(v_meas))
print(json.dumps(results))
"""


def run_child(flag: str, steps: int) -> dict:
    env = dict(os.environ, BATTWIN_NUMBA=flag)
    proc = subprocess.run(
        [sys.executable, "-c", CHILD, str(steps)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200_000)
    args = parser.parse_args()

    print(f"workload: {args.steps} samples per kernel, best of 3")
    fast = run_child("1", args.steps)
    slow = run_child("0", args.steps)
    if not fast["numba"]:
        print("warning: numba unavailable; both runs used the numpy path")

    print(f"{'kernel':<12} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    for name in ("plant_loop", "ekf_loop"):
        ratio = slow[name] / fast[name] if fast[name] > 0 else float("inf")
        print(
            f"{name:<12} {fast[name] * 1e3:>10.1f}ms {slow[name] * 1e3:>10.1f}ms "
            f"{ratio:>8.1f}x"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
