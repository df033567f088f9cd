"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--sizes 32 64 128 256] [--repeats 3] [--csv out.csv]
"""

from __future__ import annotations

import argparse

from selforder import bench, kernels


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", metavar="PATH", help="also write the raw timings")
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    print(f"backends: {', '.join(sorted(backends))} (active: {kernels.BACKEND})")
    rows = bench.run(args.sizes, args.repeats, args.seed)
    if args.csv:
        bench.write_csv(rows, args.csv)
    times = {(b, op, n): t for b, op, n, t in rows}
    ratio = bench.speedups(rows)
    ops = sorted({op for _, op, _, _ in rows})
    print(f"{'op':<22}{'n':>6}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for op in ops:
        for n in args.sizes:
            py = times.get(("python", op, n))
            cy = times.get(("cython", op, n))
            sp = ratio.get((op, n))
            print(
                f"{op:<22}{n:>6}"
                f"{py if py is not None else float('nan'):>12.2e}"
                f"{cy if cy is not None else float('nan'):>12.2e}"
                f"{sp if sp is not None else float('nan'):>10.1f}"
            )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
