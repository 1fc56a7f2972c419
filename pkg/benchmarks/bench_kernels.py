"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py --repeat 20

Set PROMPTFED_DISABLE_NUMBA=1 to check that the package runs without numba
(the numba column is then skipped).
"""

import argparse
import time

import numpy as np

from promptfed import linalg
from promptfed._accel import HAVE_NUMBA
from promptfed.datasets import synth_task
from promptfed.model import Backbone, run_batch


def best_of(fn, repeat):
    fn()  # warm-up (numba compiles or loads its cache here)
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(args):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(args.eig_dim, args.eig_dim))
    a = a + a.T
    hs = rng.normal(size=(args.layers, args.hidden))
    b = Backbone.init(args.layers, args.hidden, 16, 4, 4, 0)
    d = synth_task(0, 4, 16, max(args.batch, 40))
    X, y = d.X[:args.batch], d.y[:args.batch]
    p = rng.normal(scale=0.5, size=(args.layers, 4))
    # jacobi_eigh works in place, so each call gets a fresh copy
    return {
        f"jacobi eigen {args.eig_dim}x{args.eig_dim}":
            lambda nb: linalg.jacobi_eigh(a.copy(), 1e-12 * np.linalg.norm(a), 100, use_numba=nb),
        f"cosine gram {args.layers}x{args.hidden}": lambda nb: linalg.cosine_gram(hs, use_numba=nb),
        f"forward+backward batch {args.batch}": lambda nb: run_batch(b, p, X, y, use_numba=nb),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--eig-dim", type=int, default=24)
    ap.add_argument("--layers", type=int, default=6)
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args(argv)

    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args).items():
        slow = best_of(lambda: fn(False), args.repeat) * 1e3
        if HAVE_NUMBA:
            fast = best_of(lambda: fn(True), args.repeat) * 1e3
            print(f"{name:34s} {slow:10.3f} {fast:10.3f} {slow / fast:7.1f}x")
        else:
            print(f"{name:34s} {slow:10.3f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
