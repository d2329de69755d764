#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-Python fallback.

Times the hot primitives (sequential recurrence, reversed recurrence,
ballistics, parallel scan) and one full Hessian assembly on both
backends. Run after `pip install -e .`:

    python benchmarks/bench_backends.py [--n 1000000] [--workers 4]
"""
import argparse
import statistics
import time

import numpy as np

from compfit import backend as backend_mod
from compfit import scan
from compfit.autodiff import MatchProblem
from compfit.compressor import ParamBounds, ThetaRaw, compress
from compfit.io_wav import AudioBuffer


def best(f, reps):
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        f()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--hessian-samples", type=int, default=44100)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    a = rng.uniform(-0.995, 0.995, args.n)
    b = rng.standard_normal(args.n)
    gh = rng.uniform(0.01, 1.0, args.n)

    xs = rng.standard_normal(args.hessian_samples) * 0.02
    for _ in range(max(2, args.hessian_samples // 4000)):
        lo = int(rng.integers(0, args.hessian_samples - 50))
        hi = min(args.hessian_samples, lo + int(rng.integers(400, 4000)))
        xs[lo:hi] *= rng.uniform(10.0, 40.0)
    xb = AudioBuffer(np.clip(xs, -1, 1), 44100)
    yb, _ = compress(xb, ThetaRaw(-28.0, 0.5, 0.3, -0.2, 0.4), ParamBounds())
    theta = ThetaRaw(-25.0, 1.0, 0.1, 0.2, -0.1)

    rows = []
    for name in backend_mod.available_backends():
        backend_mod.set_backend(name)
        kern = backend_mod.get_backend()
        # the pure sequential loop is slow at n=1e6; scale reps down
        seq_reps = args.reps if name == "cython" else 1
        row = {"backend": name}
        row["linrec_seq_ms"] = 1e3 * best(lambda: kern.linrec_fwd(a, b, 0.0), seq_reps)
        row["linrec_rev_ms"] = 1e3 * best(lambda: kern.linrec_rev(a, b), seq_reps)
        row["ballistics_ms"] = 1e3 * best(lambda: kern.ballistics_fwd(gh, 0.3, 0.05, 1.0), seq_reps)
        row["scan_ms"] = 1e3 * best(
            lambda: scan.linrec_scan(a, b, 0.0, workers=args.workers), args.reps)
        row["scan_phases"] = scan.scan_stats()["phases"]
        prob = MatchProblem(xb, yb, preemph=True, threads=1)
        row["hessian_ms"] = 1e3 * best(lambda: prob.hessian(theta), max(1, args.reps // 2))
        rows.append(row)

    cols = ["backend", "linrec_seq_ms", "linrec_rev_ms", "ballistics_ms",
            "scan_ms", "scan_phases", "hessian_ms"]
    widths = {c: max(len(c), 12) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for row in rows:
        print("  ".join(
            (f"{row[c]:.3f}" if isinstance(row[c], float) else str(row[c])).ljust(widths[c])
            for c in cols))
    if len(rows) == 2:
        by = {r["backend"]: r for r in rows}
        print()
        for c in cols[1:-1]:
            if c == "scan_phases":
                continue
            ratio = by["python"][c] / by["cython"][c]
            print(f"cython speedup on {c.removesuffix('_ms')}: {ratio:.1f}x")


if __name__ == "__main__":
    main()
