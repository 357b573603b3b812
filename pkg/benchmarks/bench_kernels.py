"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both implementations live side by side in ``parapam._accel``, so one
process can time them without touching ``PARAPAM_BACKEND``. Each row
reports the best of ``--repeat`` runs after one warm-up call (the
warm-up absorbs numba's compile or cache load).
"""
import argparse
import time

import numpy as np

from parapam import _accel


def best_time(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    # shapes as they occur in a paraproduct at N=128 (padded to 256, 9 blocks)
    a = rng.standard_normal((9, 256, 256))
    b = rng.standard_normal((9, 256, 256))
    w = rng.random((8, 60))
    hist = rng.standard_normal((60, 64, 64)) + 1j * rng.standard_normal((60, 64, 64))
    x = rng.standard_normal((384, 384))
    coeffs = np.array([0.0, 1.0, 0.0, -1.0])
    return {
        "stack_dot": (a, b),
        "block_sup": (a,),
        "weighted_history_sum": (w, hist),
        "horner": (coeffs, x),
        "gaussian_lattice_sum": (400, 0.002, 1.0, 1.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba unavailable (or PARAPAM_BACKEND=numpy); timing the numpy path only")
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fargs in cases(np.random.default_rng(args.seed)).items():
        ref = getattr(_accel, f"{name}_numpy")
        t_np = best_time(ref, fargs, args.repeat)
        if _accel.HAS_NUMBA:
            fast = getattr(_accel, name)
            t_nb = best_time(fast, fargs, args.repeat)
            diff = float(np.max(np.abs(np.asarray(fast(*fargs)) - np.asarray(ref(*fargs)))))
            print(f"{name:<24}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.2f}{diff:>12.2e}")
        else:
            print(f"{name:<24}{1e3 * t_np:>12.2f}{'-':>12}{'-':>10}{'-':>12}")


if __name__ == "__main__":
    main()
