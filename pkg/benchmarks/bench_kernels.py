"""Compare the numba and pure-numpy convolution kernels on decoder-sized shapes.

Run: python3 benchmarks/bench_kernels.py
The MENO_NUMBA environment flag selects which path the package uses at import
time; this benchmark always times both.
"""

import time

import numpy as np

from meno import _kernels as K

SHAPES = [
    # (batch, channels, grid) drawn from the desk decoder's stages
    (4, 12, 64),
    (4, 24, 32),
    (4, 24, 16),
    (8, 16, 64),
    (1, 12, 64),
]


def bench(fn, *args, reps=20):
    fn(*args)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps


def main():
    rng = np.random.default_rng(0)
    print(f"numba available: {K.HAS_NUMBA}, enabled by flag: {K.NUMBA_ENABLED}")
    print(f"{'shape':>16} | {'fwd numpy':>10} {'fwd numba':>10} | "
          f"{'gw numpy':>10} {'gw numba':>10} | speedup")
    for b, c, n in SHAPES:
        x = rng.standard_normal((b, c, n, n)).astype(np.float32)
        w = (0.1 * rng.standard_normal((c, c, 3, 3))).astype(np.float32)
        g = rng.standard_normal((b, c, n, n)).astype(np.float32)
        xp = K._pad_wrap(x, 3, 3)
        t_np = bench(K.conv2d_forward_numpy, x, w)
        t_gw_np = bench(K._grad_weight_numpy, xp, g, 3, 3)
        if K.HAS_NUMBA:
            t_nb = bench(K.conv2d_forward_numba, x, w)
            t_gw_nb = bench(K._grad_weight_numba, xp, g, 3, 3)
            speed = (t_np + t_gw_np) / (t_nb + t_gw_nb)
            print(f"  B{b} C{c} {n}x{n:>3} | {t_np*1e3:8.2f}ms {t_nb*1e3:8.2f}ms | "
                  f"{t_gw_np*1e3:8.2f}ms {t_gw_nb*1e3:8.2f}ms | {speed:5.2f}x")
        else:
            print(f"  B{b} C{c} {n}x{n:>3} | {t_np*1e3:8.2f}ms {'-':>10} | "
                  f"{t_gw_np*1e3:8.2f}ms {'-':>10} |")


if __name__ == "__main__":
    main()
