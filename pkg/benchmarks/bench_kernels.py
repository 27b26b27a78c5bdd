"""Time the convolution kernels: numba JIT vs the pure-numpy fallback.

Imports both implementations directly so one process can compare them;
the DJSCC_BACKEND env var is irrelevant here. Shapes mirror the actual
training workload. Run:

    python3 benchmarks/bench_kernels.py [--repeats 20]
"""
import argparse
import statistics
import time

import numpy as np

from djscc import _kernels_numpy as knp

try:
    from djscc import _kernels_numba as knb
except ImportError:
    knb = None

# (label, N, C, H, W, O, k, stride, pad) drawn from the desk pipeline
SHAPES = [
    ("codec-stem    16x3x32x32 ->32 k4s2", 16, 3, 32, 32, 32, 4, 2, 1),
    ("codec-deep    16x32x16x16->64 k4s2", 16, 32, 16, 16, 64, 4, 2, 1),
    ("codec-head    16x32x8x8  ->16 k3s1", 16, 32, 8, 8, 16, 3, 1, 1),
    ("denoiser-res  16x32x4x4  ->32 k3s1", 16, 32, 4, 4, 32, 3, 1, 1),
    ("denoiser-wide 16x64x2x2  ->64 k3s1", 16, 64, 2, 2, 64, 3, 1, 1),
]


def make_case(n, c, h, w, o, k, stride, pad, seed=0):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, c, h, w)).astype(np.float32)
    wt = r.standard_normal((o, c, k, k)).astype(np.float32)
    b = r.standard_normal(o).astype(np.float32)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    gy = r.standard_normal((n, o, ho, wo)).astype(np.float32)
    return x, wt, b, gy


def bench(fn, args, repeats):
    fn(*args)  # warmup (and JIT compile for numba)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    if knb is None:
        print("numba backend unavailable; timing the numpy fallback only")
    header = f"{'case':<38} {'op':<12} {'numpy ms':>9}"
    if knb is not None:
        header += f" {'numba ms':>9} {'speedup':>8}"
    print(header)
    print("-" * len(header))

    for label, n, c, h, w, o, k, stride, pad in SHAPES:
        x, wt, b, gy = make_case(n, c, h, w, o, k, stride, pad)
        ops = [
            ("forward", lambda m: (m.conv2d_forward, (x, wt, b, stride, pad))),
            ("grad-input", lambda m: (m.conv2d_grad_input,
                                      (gy, wt, stride, pad, h, w))),
            ("grad-weight", lambda m: (m.conv2d_grad_weight,
                                       (gy, x, stride, pad, k, k))),
        ]
        for op_name, pick in ops:
            fn_np, a_np = pick(knp)
            t_np = bench(fn_np, a_np, args.repeats)
            line = f"{label:<38} {op_name:<12} {t_np:>9.3f}"
            if knb is not None:
                fn_nb, a_nb = pick(knb)
                out_nb, out_np = fn_nb(*a_nb), fn_np(*a_np)
                if not np.allclose(out_nb, out_np, rtol=1e-4, atol=1e-5):
                    raise SystemExit(
                        f"backend mismatch on {label} {op_name}")
                t_nb = bench(fn_nb, a_nb, args.repeats)
                line += f" {t_nb:>9.3f} {t_np / t_nb:>7.1f}x"
            print(line)


if __name__ == "__main__":
    main()
