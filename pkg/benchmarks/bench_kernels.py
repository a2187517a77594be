"""Compare the numba and numpy kernels on desk-scale series.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends run on identical inputs in this process; the end-to-end row
re-runs a normalization in a subprocess with LPKAM_DISABLE_NUMBA=1.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from lpkam import _kernels
from lpkam.psalg import Ring


def random_series(ring, nterms, rng):
    terms = {}
    while len(terms) < nterms:
        q = rng.multinomial(int(rng.integers(0, ring.xmax // 2 + 1)), [1 / ring.n] * ring.n)
        p = tuple(int(v) for v in rng.integers(0, ring.umax // 2 + 1, size=ring.p))
        terms[(tuple(int(v) for v in q), p)] = complex(rng.standard_normal(), rng.standard_normal())
    return ring.from_terms(terms)


def _args(s):
    d = s.degs
    return s.codes, s.vals, d[0], d[1]


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


E2E = """
import time
from lpkam.verify import scenario_volume
from lpkam.normalform import normalize
sc = scenario_volume(3, base=(0.01,))
t = time.perf_counter()
normalize(sc.initial_state(), 16)
print(time.perf_counter() - t)
"""


def end_to_end(disable):
    env = dict(os.environ, LPKAM_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba unavailable or disabled; nothing to compare")
        return 1
    rng = np.random.default_rng(args.seed)
    ring = Ring(4, 1, 16, 8, (0.1 + 0j,))
    print(f"{'case':<28}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for nterms in (50, 200, 800):
        a, b = random_series(ring, nterms, rng), random_series(ring, nterms, rng)
        xa, ya = _args(a), _args(b)
        cap = ring.size if hasattr(ring, "size") else 1 << 30
        lim = (ring.xmax, ring.umax)
        _kernels._mul_nb(*xa, *ya, *lim, cap)  # compile
        t_np = best_of(lambda: _kernels.mul_numpy(*xa, *ya, *lim), args.repeat)
        t_nb = best_of(lambda: _kernels._mul_nb(*xa, *ya, *lim, cap), args.repeat)
        c1, v1 = _kernels.mul_numpy(*xa, *ya, *lim)
        c2, v2 = _kernels._mul_nb(*xa, *ya, *lim, cap)
        diff = np.abs(v1 - v2).max() if np.array_equal(c1, c2) else np.inf
        print(f"{'mul ' + str(nterms) + 'x' + str(nterms):<28}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}"
              f"{t_np / t_nb:>10.1f}{diff:>12.2e}")
    for nterms, npts in ((200, 64), (800, 1024)):
        s = random_series(ring, nterms, rng)
        exps, vals = s.exps(), s.vals
        pts = rng.standard_normal((npts, ring.n + ring.p)) * 0.3 + 0j
        _kernels._eval_nb(exps, vals, pts)
        t_np = best_of(lambda: _kernels.eval_numpy(exps, vals, pts), args.repeat)
        t_nb = best_of(lambda: _kernels._eval_nb(exps, vals, pts), args.repeat)
        diff = np.abs(_kernels.eval_numpy(exps, vals, pts) - _kernels._eval_nb(exps, vals, pts)).max()
        print(f"{'eval ' + str(nterms) + ' @ ' + str(npts):<28}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}"
              f"{t_np / t_nb:>10.1f}{diff:>12.2e}")
    t_np, t_nb = end_to_end(True), end_to_end(False)
    print(f"{'normalize volume n=3, 16':<28}{1e3 * t_np:>12.1f}{1e3 * t_nb:>12.1f}{t_np / t_nb:>10.1f}{'':>12}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
