"""Compare the compiled and pure-numpy quantization kernels.

Usage: python3 benchmarks/bench_kernels.py [--sizes 65536,1048576] [--repeat 5]
"""
import argparse
import time

import numpy as np

from qbwnn import backend


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(sizes, repeat=5, key=0x9E3779B97F4A7C15):
    impls = {name: backend.get(name) for name in ("cython", "python") if name in backend.available()}
    rows = []
    for n in sizes:
        theta = np.random.default_rng(0).uniform(-1.0, 1.0, n)
        ref = None
        for name, mod in impls.items():
            out = np.empty(n, dtype=np.float64)
            secs = _best(lambda: mod.quantize_pm1(theta, key, 0, out), repeat)
            if ref is None:
                ref = out.copy()
            rows.append({"n": n, "backend": name, "seconds": secs,
                         "ns_per_entry": 1e9 * secs / n,
                         "identical": bool(np.array_equal(out, ref))})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="65536,1048576,4194304")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = run([int(s) for s in args.sizes.split(",")], args.repeat)
    print(f"{'n':>9} {'backend':>8} {'ms':>9} {'ns/entry':>9} identical")
    for r in rows:
        print(f"{r['n']:>9} {r['backend']:>8} {1e3 * r['seconds']:>9.2f} "
              f"{r['ns_per_entry']:>9.2f} {r['identical']}")
    by = {(r["n"], r["backend"]): r["seconds"] for r in rows}
    for n in sorted({r["n"] for r in rows}):
        if (n, "cython") in by and (n, "python") in by:
            print(f"speedup at n={n}: {by[(n, 'python')] / by[(n, 'cython')]:.1f}x")


if __name__ == "__main__":
    main()
