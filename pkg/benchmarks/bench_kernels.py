"""Time the numba kernels against the numpy fallback on realistic inputs.

Run from the repository root::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once per backend before timing (to pay the JIT compile),
outputs are checked for agreement, and the best of ``--repeat`` runs is shown.
"""
import argparse
import timeit

import numpy as np

from wardsense import kernels


def cases(rng):
    day = np.where(rng.random(1440) < 0.5, 0.0, np.rint(rng.gamma(0.7, 100, 1440)))
    day[300:330] = np.nan

    x = np.sort(rng.uniform(0, 1440, 3000))
    y = rng.gamma(0.7, 100, x.size)
    grid = np.linspace(0, 1440, 289)

    train = rng.normal(size=(500, 21))
    queries = rng.normal(size=(200, 21))
    holes = rng.normal(size=(200, 21))
    holes[rng.random(holes.shape) < 0.1] = np.nan

    ranks = np.arange(2, 42, 2, dtype=np.int64)  # doubled ranks 1..20

    n = 300
    bx, by = rng.uniform(0, 100, n), rng.uniform(0, 100, n)
    bw, bh = rng.uniform(5, 30, n), rng.uniform(5, 30, n)
    order = np.argsort(-rng.random(n), kind="stable").astype(np.int64)

    return {
        "window_extreme (M10 on one day)": ("window_extreme", (day, 600, True, 300, 1e-9)),
        "loess_fit (3000 pts, 289 grid)": ("loess_fit", (x, y, grid, 900, 1)),
        "knn_query (200 x 500, 21-d)": ("knn_query", (train, queries, 1, 2.0)),
        "nan_euclidean (200 x 500)": ("nan_euclidean", (holes, train)),
        "rank_sum_counts (10 of 20)": ("rank_sum_counts", (ranks, 10)),
        "nms (300 boxes)": ("nms", (bx, by, bw, bh, order, 0.5)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    impls = [("numpy", kernels.numpy_impl)]
    if kernels.numba_impl is not None:
        impls.append(("numba", kernels.numba_impl))
    else:
        print("numba is not installed; timing the numpy path only")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<36}" + "".join(f"{name:>12}" for name, _ in impls) + f"{'speedup':>10}  agree")
    for label, (fn, call_args) in cases(rng).items():
        times, outs = [], []
        for _, mod in impls:
            f = getattr(mod, fn)
            outs.append(f(*call_args))  # warm-up and JIT compile
            number = 1
            while timeit.timeit(lambda: f(*call_args), number=number) < 0.05 and number < 10_000:
                number *= 10
            best = min(timeit.repeat(lambda: f(*call_args), number=number, repeat=args.repeat))
            times.append(best / number)
        cells = "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        speed = f"{times[0] / times[1]:>9.1f}x" if len(times) == 2 else f"{'':>10}"
        agree = "yes" if all(same(outs[0], o) for o in outs[1:]) else "NO"
        print(f"{label:<36}{cells}{speed}  {agree}")


if __name__ == "__main__":
    main()
