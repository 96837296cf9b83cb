"""Time the compiled and numpy simulation kernels on the same workloads.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--steps 20000]

Both backends run identical paths (the results are bitwise equal, which the
script also checks); only the wall time differs.
"""
import argparse
import time

import numpy as np

from occlp import _backend
from occlp.model import builtin_model
from occlp.sim import Barrier, simulate_stationary

WORKLOADS = {
    "ou": (lambda: builtin_model("ou", {"theta": 1, "sigma": 1}), None, 0.01),
    "reflected_ou": (lambda: builtin_model("reflected_ou", {"theta": 1, "sigma": 2 ** 0.5}),
                     None, 0.001),
    "logistic_barrier": (lambda: builtin_model("logistic_harvest", {"sigma0": 0.2}),
                         Barrier(0.52), 0.001),
}


def best_time(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--steps", type=int, default=20000, help="time steps per path")
    ap.add_argument("--paths", type=int, default=4)
    args = ap.parse_args(argv)
    backends = ["python"]
    try:
        _backend.get_kernels("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled kernel not available; timing the numpy fallback only")
    print(f"{'workload':<18}{'backend':<9}{'seconds':>10}{'steps/s':>14}{'speedup':>9}")
    for name, (make, policy, dt) in WORKLOADS.items():
        spec = make()
        T = args.steps * dt
        results = {}
        for be in backends:
            secs, em = best_time(lambda: simulate_stationary(
                spec, policy, T=T, dt=dt, n_paths=args.paths, seed=1, backend=be),
                args.repeat)
            results[be] = (secs, em)
        base = results["python"][0]
        for be, (secs, _) in results.items():
            rate = args.steps * args.paths / secs
            print(f"{name:<18}{be:<9}{secs:>10.4f}{rate:>14.3g}{base / secs:>8.1f}x")
        if len(results) == 2:
            a, b = results["cython"][1], results["python"][1]
            assert np.array_equal(a.counts, b.counts), "backends disagree"


if __name__ == "__main__":
    main()
