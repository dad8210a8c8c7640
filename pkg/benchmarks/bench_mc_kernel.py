"""Time the L2 random-feature core: compiled extension vs NumPy fallback.

Usage::

    python benchmarks/bench_mc_kernel.py [--points 100] [--features 3000] [--repeats 5]

Reports the best-of-``repeats`` wall time of the forward feature map and
of its vector-Jacobian product for each available backend, and checks
that both backends agree.
"""

import argparse
import time

import numpy as np

from gphlvm.kernels import KernelSpec, sample_features
from gphlvm.kernels import _mc_fallback

try:
    from gphlvm.kernels import _mc_ext
except ImportError:
    _mc_ext = None


def _best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--points", type=int, default=100)
    ap.add_argument("--features", type=int, default=3000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    r = 0.9 * np.sqrt(rng.uniform(size=args.points))
    a = rng.uniform(0, 2 * np.pi, size=args.points)
    z = np.ascontiguousarray(np.stack([r * np.cos(a), r * np.sin(a)], 1))
    feats = sample_features(KernelSpec("hyperbolic_l2_mc", mc_samples=args.features, mc_seed=0))
    b = np.ascontiguousarray(feats.directions)
    s = np.ascontiguousarray(feats.frequencies(1.0))
    g_re = rng.normal(size=(args.points, feats.size))
    g_im = rng.normal(size=(args.points, feats.size))

    backends = [("python", _mc_fallback)] + ([("cython", _mc_ext)] if _mc_ext is not None else [])
    results = {}
    print(f"N={args.points} L={feats.size} repeats={args.repeats}")
    for name, impl in backends:
        fwd = _best(lambda: impl.features(z, b, s), args.repeats)
        vjp = _best(lambda: impl.features_vjp(z, b, s, g_re, g_im), args.repeats)
        results[name] = (impl.features(z, b, s), impl.features_vjp(z, b, s, g_re, g_im))
        print(f"{name:>7}: forward {fwd * 1e3:9.2f} ms   vjp {vjp * 1e3:9.2f} ms")
    if len(results) == 2:
        (fp, vp), (fc, vc) = results["python"], results["cython"]
        err = max(np.max(np.abs(x - y)) / max(np.max(np.abs(x)), 1e-300) for x, y in zip(fp + vp, fc + vc))
        print(f"max relative difference between backends: {err:.2e}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
