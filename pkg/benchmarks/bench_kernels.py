"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--width N] [--L N] [--repeat N]
"""

import argparse
import time

import numpy as np

from orbit_tiler import _kernels
from orbit_tiler.sections import generate_candidate_section, sparsify
from orbit_tiler.systems import orbit_window, rotation_system


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--width", type=int, default=1_000_000)
    ap.add_argument("--L", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    w = orbit_window(rotation_system(cf=[1] * 64), 0.0, args.width, max(args.L, 64))
    f, inner = w.fvals, w.interior
    ell, _ = _kernels.tile_lengths(f, 0.45, args.L, inner.lo, inner.hi)
    S = sparsify(generate_candidate_section(w, 0.01 / args.L, 0), args.L, w.width)
    idx = np.arange(inner.lo, inner.hi, dtype=np.int64)
    cases = {
        "tile_lengths": lambda be: _kernels.tile_lengths(f, 0.45, args.L, inner.lo, inner.hi, backend=be),
        "extend_reach": lambda be: _kernels.extend_reach(f, 0.45, idx, np.zeros(idx.size), 1, args.L, backend=be),
        "block_walk": lambda be: _kernels.block_walk(ell, S.S, S.stilde_mask, backend=be),
        "segment_means": lambda be: _kernels.segment_means(f, S.S[:-1], S.S[1:], backend=be),
    }
    print(f"width {args.width}, L {args.L}, best of {args.repeat}")
    print(f"{'kernel':<14} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}  identical")
    for name, fn in cases.items():
        fn("numba")  # compile outside the timing
        t_nb, a = best_of(lambda: fn("numba"), args.repeat)
        t_np, b = best_of(lambda: fn("numpy"), args.repeat)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"{name:<14} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
