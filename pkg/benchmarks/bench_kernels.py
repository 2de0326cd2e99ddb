"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py --size 480 --repeat 5
"""

import argparse
import json

from vos3d.bench import bench_kernels


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=480)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    res = bench_kernels(args.size, args.frames, args.repeat)
    print(json.dumps(res, indent=2))
    if "cython" in res:
        for k, t in res["python"].items():
            print(f"{k:20s} python/cython = {t / res['cython'][k]:.1f}x")


if __name__ == "__main__":
    main()
