"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py --sizes 64 128 256 --repeat 3
"""
import argparse
import timeit

import numpy as np

from prominence import kernels
from prominence.salience import border_seeds


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--passes", type=int, default=3)
    ap.add_argument("--threshold", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = ["python"] + (["cython"] if kernels.HAVE_EXTENSION else [])
    if len(backends) == 1:
        print("compiled extension not built; timing the fallback only")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<14}{'size':>6}" + "".join(f"{b + ' s':>12}" for b in backends) + f"{'speedup':>10}")
    for n in args.sizes:
        img = rng.integers(0, 256, (n, n), dtype=np.uint8)
        seeds = border_seeds(img.shape)
        cases = {
            "mbd_raster": lambda b: kernels.mbd_raster(img, seeds, args.passes, backend=b),
            "fast_response": lambda b: kernels.fast_response(img, args.threshold, 3, backend=b),
        }
        for name, call in cases.items():
            outs = [call(b) for b in backends]
            if not all(np.array_equal(outs[0], o) for o in outs[1:]):
                raise SystemExit(f"{name}: backends disagree at size {n}")
            times = [bench(lambda b=b: call(b), args.repeat) for b in backends]
            speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
            print(f"{name:<14}{n:>6}" + "".join(f"{t:>12.4f}" for t in times) + speed)


if __name__ == "__main__":
    main()
