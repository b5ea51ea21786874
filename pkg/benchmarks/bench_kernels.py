"""Compare the compiled and numpy certificate kernels across batch sizes.

    python3 benchmarks/bench_kernels.py [--repeats N]

Prints microseconds per call for value_and_grad and loss_and_grad and the
max abs difference between the two backends.
"""
import argparse
import timeit

import numpy as np

from advlyap.certnet import MlpArchitecture, _backend, init_params
from advlyap.sim import pendulum_field

SIZES = (1, 4, 16, 32, 64, 128, 512, 4000)


def bench(fn, repeats):
    n = max(1, int(2000 / repeats))
    return min(timeit.repeat(fn, number=n, repeat=repeats)) / n * 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    names = [b for b in ("numpy", "cython", "auto") if b in _backend.available()]
    if "cython" not in names:
        print("compiled extension not built; numpy only")
    arch = MlpArchitecture(2, 20)
    theta = init_params(arch, 0).theta
    f = pendulum_field()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'n':>6}" + "".join(f"{b:>12}" for b in names) + f"{'max |diff|':>14}")
    for kernel in ("value_and_grad", "loss_and_grad"):
        for n in SIZES:
            X = np.ascontiguousarray(rng.uniform(-2, 2, size=(n, 2)))
            U = np.ascontiguousarray(f(0.0, X))
            call_args = (theta, 2, 20, X) if kernel == "value_and_grad" else (theta, 2, 20, X, U, 0.4)
            times, outs = [], []
            for b in names:
                fn = getattr(_backend.get(b), kernel)
                outs.append(fn(*call_args))
                times.append(bench(lambda: fn(*call_args), args.repeats))
            diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
                       for o in outs[1:] for a, b in zip(outs[0], o))
            print(f"{kernel:<14}{n:>6}" + "".join(f"{t:>10.1f}us" for t in times) + f"{diff:>14.1e}")


if __name__ == "__main__":
    main()
