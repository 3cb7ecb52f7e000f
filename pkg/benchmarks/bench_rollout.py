"""Compare the compiled and NumPy closed-loop rollout kernels.

    python3 benchmarks/bench_rollout.py [--steps 2000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from ltnctrl import kernels
from ltnctrl.model import LtnSystem
from ltnctrl.scenarios import RODENT_REFERENCE, rodent_system


def cases(steps):
    rng = np.random.default_rng(0)
    rod = rodent_system()
    yield "rodent n=4 m=5", rod, np.array(RODENT_REFERENCE), rng.normal(size=(5, 4)), steps
    for n, m in ((15, 1), (50, 10)):
        W = rng.uniform(-0.5, 0.5, (n, n))
        B = rng.uniform(-0.5, 0.5, (n, m))
        yield f"random n={n} m={m}", LtnSystem(0.7, 0.3, W, B), np.full(n, 0.5), rng.normal(size=(m, n)), steps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled kernel not built; only the NumPy fallback is available")
    print(f"{'case':<22}{'integral':>9}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, sys_, r, K, T in cases(args.steps):
        x0 = np.full(sys_.n, 0.5 * sys_.state_upper_bound())
        noise = np.zeros((T, sys_.n))
        for integ in (False, True):
            times = {}
            for be in ("python", "cython"):
                if be == "cython" and kernels.BACKEND != "cython":
                    continue
                fn = lambda: kernels.rollout(sys_.alpha, sys_.s, sys_.W, sys_.B, K, K, r, x0, noise, integ, be)  # noqa: E731
                times[be] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
            cy = times.get("cython", float("nan"))
            print(f"{name:<22}{str(integ):>9}{times['python']:>12.2f}{cy:>13.3f}{times['python'] / cy:>9.1f}")


if __name__ == "__main__":
    main()
