"""Time Koopman Gram assembly with the compiled core and the numpy fallback.

    python benchmarks/bench_gram.py [--repeat 3]

Both backends receive identical inputs; the script also reports the largest
absolute difference between their Grams.
"""

import argparse
import time

import numpy as np

from kkr import _backend, _kernels_py
from kkr.spectra import power_matrix, pullback_matrix, sample_uniform_disk

CASES = [
    # (label, N, H, d, D)
    ("bistable fit", 50, 14, 1, 100),
    ("vdp D-sweep top", 200, 14, 2, 200),
    ("high-dim state", 44, 99, 400, 500),
]


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if _backend.NAME != "cython":
        print("compiled core unavailable; only the numpy backend can be timed")
    rng = np.random.default_rng(0)
    print(f"{'case':<18}{'N':>5}{'H':>5}{'d':>5}{'D':>5}{'numpy s':>10}{'cython s':>10}{'speedup':>9}{'max diff':>11}")
    for label, N, H, d, D in CASES:
        X = rng.uniform(-1, 1, (N, H + 1, d))
        mus = sample_uniform_disk(D, seed=1).mus
        W, P = pullback_matrix(mus, H), power_matrix(mus, H)
        ell = 0.1 * np.sqrt(d)
        t_py, (G_py, _) = _time(lambda: _kernels_py.koopman_gram(X, ell, W, P), args.repeat)
        if _backend.NAME == "cython":
            t_c, (G_c, _) = _time(lambda: _backend.koopman_gram(X, ell, W, P), args.repeat)
            diff = float(np.abs(G_c - G_py).max())
            print(f"{label:<18}{N:>5}{H:>5}{d:>5}{D:>5}{t_py:>10.3f}{t_c:>10.3f}{t_py / t_c:>8.1f}x{diff:>11.1e}")
        else:
            print(f"{label:<18}{N:>5}{H:>5}{d:>5}{D:>5}{t_py:>10.3f}{'-':>10}{'-':>9}{'-':>11}")


if __name__ == "__main__":
    main()
