"""Time the residual-view kernel under each available backend.

    python benchmarks/bench_filters.py [--sizes 32 64 224] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from hyperdet.filterbank import BACKENDS, GROUPS, default_bank, make_views


def bench(size: int, backend: str, repeat: int) -> float:
    img = np.random.default_rng(0).random((size, size, 3))
    bank = default_bank()
    make_views(img, bank, GROUPS, backend)  # warm-up
    runs = timeit.repeat(lambda: make_views(img, bank, GROUPS, backend), number=1, repeat=repeat)
    return min(runs)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 224])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    names = sorted(BACKENDS)
    print(f"{'size':>6}  " + "  ".join(f"{n:>12}" for n in names) + ("  speedup" if len(names) > 1 else ""))
    for size in args.sizes:
        t = {n: bench(size, n, args.repeat) for n in names}
        row = f"{size:>6}  " + "  ".join(f"{t[n] * 1e3:>10.2f}ms" for n in names)
        if "compiled" in t:
            row += f"  {t['python'] / t['compiled']:>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
