"""Time the compiled and numpy MLP kernels on the same workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per (workload, backend) with the best wall time and the
compiled speed-up, and checks that both backends agree numerically.
"""
import argparse
import time

import numpy as np

from fairfed import _backend
from fairfed.nn import param_count

# (name, rows, input dim, hidden, classes, batch size); the first mirrors a
# desk-scale client, the second a 784-pixel image client
WORKLOADS = [
    ("synthetic client", 960, 2, 128, 5, 32),
    ("image client", 960, 784, 128, 10, 32),
]


def _inputs(rows, d, h, c, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, 0.1, param_count(d, h, c))
    X = np.ascontiguousarray(rng.normal(size=(rows, d)))
    y = rng.integers(0, c, rows).astype(np.int64)
    return values, X, y


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(kernels, rows, d, h, c, batch, repeat):
    values, X, y = _inputs(rows, d, h, c)
    order = np.arange(rows, dtype=np.int64)
    grad = np.empty_like(values)
    full = _best(lambda: kernels.mlp_loss_grad(values, X, y, d, h, c, grad), repeat)
    epoch = _best(lambda: kernels.sgd_epoch(values.copy(), X, y, order, d, h, c, 0.1, batch),
                  repeat)
    return full, epoch


def agreement(compiled, python, rows, d, h, c, batch):
    values, X, y = _inputs(rows, d, h, c, seed=1)
    order = np.random.default_rng(2).permutation(rows).astype(np.int64)
    ga, gb = np.empty_like(values), np.empty_like(values)
    la = compiled.mlp_loss_grad(values, X, y, d, h, c, ga)
    lb = python.mlp_loss_grad(values, X, y, d, h, c, gb)
    va, vb = values.copy(), values.copy()
    compiled.sgd_epoch(va, X, y, order, d, h, c, 0.1, batch)
    python.sgd_epoch(vb, X, y, order, d, h, c, 0.1, batch)
    return max(abs(la - lb), float(np.max(np.abs(ga - gb))), float(np.max(np.abs(va - vb))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    python, _ = _backend.load("python")
    try:
        compiled, _ = _backend.load("compiled")
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the numpy kernels only")

    print(f"{'workload':<18} {'backend':<9} {'loss+grad ms':>13} {'sgd epoch ms':>13} {'speed-up':>9}")
    for name, rows, d, h, c, batch in WORKLOADS:
        base = bench(python, rows, d, h, c, batch, args.repeat)
        print(f"{name:<18} {'python':<9} {1e3 * base[0]:>13.2f} {1e3 * base[1]:>13.2f} {'':>9}")
        if compiled is None:
            continue
        fast = bench(compiled, rows, d, h, c, batch, args.repeat)
        print(f"{name:<18} {'compiled':<9} {1e3 * fast[0]:>13.2f} {1e3 * fast[1]:>13.2f} "
              f"{base[1] / fast[1]:>8.2f}x")
        print(f"{'':<18} max |compiled - python| = "
              f"{agreement(compiled, python, rows, d, h, c, batch):.1e}")


if __name__ == "__main__":
    main()
