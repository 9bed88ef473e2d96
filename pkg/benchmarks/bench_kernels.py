"""Compare the numba kernels with their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--csv out.csv]

Both variants are called directly, so one process times both paths; the
end-to-end rows flip ``kernels.USE_NUMBA`` around a whole loss evaluation.
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from ictxot import _accel, kernels, mmd
from ictxot import parametric as pm
from ictxot.tasks import make_task, sample_points, stream


def cases():
    r = np.random.default_rng(0)
    sym = r.normal(size=(8, 8))
    sym = sym + sym.T
    z, c, w, b = r.normal(size=200_000), r.normal(size=16), r.normal(size=16), r.normal(size=16)
    x, y = r.normal(size=(512, 2)), r.normal(size=(512, 2))
    scales, weights = np.array([0.25, 0.5, 1.0, 2.0, 4.0]), np.full(5, 0.2)
    yield "jacobi_eig 8x8", lambda: kernels._jacobi_nb(sym.copy(), 1e-12, 100), lambda: kernels._jacobi_np(sym.copy(), 1e-12, 100)
    yield "relu_sum 2e5 x 16", lambda: kernels._relu_sum_nb(z, c, w, b), lambda: kernels._relu_sum_np(z, c, w, b)
    yield ("gram_sums rbf 512x512", lambda: kernels._gram_sums_nb(x, y, kernels.RBF, scales, weights),
           lambda: kernels._gram_sums_np(x, y, kernels.RBF, scales, weights))
    yield ("gram_sums quad 512x512", lambda: kernels._gram_sums_nb(x, y, kernels.QUADRATIC, scales, weights),
           lambda: kernels._gram_sums_np(x, y, kernels.QUADRATIC, scales, weights))


def end_to_end():
    task = make_task(np.zeros(2), [2.0, 3.0])
    params = pm.init_params(2, lam=1000.0)
    prompt = sample_points(task, 3200, stream(0, "prompt", 0))
    x, y = prompt[:256], prompt[256:512]
    yield "parametric loss n=1600", lambda: pm.loss(params, prompt)
    yield "mmd2_u rbf5 256", lambda: mmd.mmd2_u(x, y)


def best(fn, repeat):
    fn()  # warm-up (jit compile, caches)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba unavailable (or ICTXOT_DISABLE_NUMBA set); nothing to compare", file=sys.stderr)
        return 1
    rows = []
    for name, fast, slow in cases():
        rows.append((name, best(fast, args.repeat), best(slow, args.repeat)))
    for name, fn in end_to_end():
        kernels.USE_NUMBA = True
        t_nb = best(fn, args.repeat)
        kernels.USE_NUMBA = False
        t_np = best(fn, args.repeat)
        kernels.USE_NUMBA = True
        rows.append((name, t_nb, t_np))
    print(f"{'case':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, a, b in rows:
        print(f"{name:28s} {a * 1e3:10.3f} {b * 1e3:10.3f} {b / a:8.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["case", "numba_s", "numpy_s"])
            out.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
