"""Compare compiled and interpreted kernels.

Each backend runs in its own interpreter because the numba switch is read at
import time. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--mission]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from aerialmason import _jit
from aerialmason.kernels import bfgs_marker_pair, pid_velocity_step, half_sq_norm_trapezoid

repeat = int(sys.argv[1])
mission = sys.argv[2] == "1"
rng = np.random.default_rng(0)
pairs = []
for _ in range(2000):
    m1 = rng.normal(0, 0.02, 3)
    m2 = np.array([0.175, 0.0, 0.0]) + rng.normal(0, 0.02, 3)
    pairs.append((m1, m2))
kp = np.full(3, 1.2); ki = np.full(3, 0.05); kd = np.full(3, 0.3)
jerk = rng.normal(size=(20001, 3)); ts = np.linspace(0.0, 7.0, 20001)

def bench_filter():
    for m1, m2 in pairs:
        bfgs_marker_pair(m1, m2, 0.175, 2.0, 1.0, 1.0, 100, 1e-8)

def bench_pid():
    pos = np.zeros(3); vel = np.zeros(3); integ = np.zeros(3)
    target = np.array([1.0, 0.5, 1.2]); tv = np.zeros(3)
    for _ in range(20000):
        pid_velocity_step(pos, vel, integ, target, tv, kp, ki, kd, 1.0, 0.15, 0.1, 0.02)

def bench_trapz():
    for _ in range(20):
        half_sq_norm_trapezoid(jerk, ts)

out = {"numba": _jit.USE_NUMBA}
for name, fn in (("filter_2000_pairs", bench_filter), ("pid_20000_steps", bench_pid),
                 ("trapezoid_20x20001", bench_trapz)):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); times.append(time.perf_counter() - t0)
    out[name] = min(times)
if mission:
    from aerialmason.scenarios import case_study
    from aerialmason.sim import SimConfig, run_mission
    bp = case_study()
    run_mission(bp, SimConfig(max_sim_time=5.0))
    t0 = time.perf_counter(); run_mission(bp, SimConfig())
    out["case_study_mission"] = time.perf_counter() - t0
print(json.dumps(out))
"""


def run_backend(flag: str, repeat: int, mission: bool) -> dict:
    env = dict(os.environ, AERIALMASON_NUMBA=flag)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat), "1" if mission else "0"],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--mission", action="store_true", help="also time the case-study mission")
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    fast = run_backend("1", args.repeat, args.mission)
    slow = run_backend("0", args.repeat, args.mission)
    print(f"{'benchmark':<22} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}")
    for key in fast:
        if key == "numba":
            continue
        a, b = fast[key], slow[key]
        print(f"{key:<22} {a:>10.4f} {b:>10.4f} {b / a:>7.1f}x")
    if not fast["numba"]:
        print("note: numba unavailable; both columns ran interpreted")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
