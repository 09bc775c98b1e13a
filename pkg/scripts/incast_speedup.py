#!/usr/bin/env python3
"""Wall-time benefit of dynamic incast over unit fan-in."""

import argparse

from ubar.config import ExperimentConfig
from ubar.harness import run_incast_benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--generations", type=int, default=12)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        n=args.n,
        bucket_len=50_000,
        generations=args.generations,
        transport="ubt",
        calibration_iterations=5,
    )
    out = run_incast_benchmark(cfg)
    speedup = (out["unit"] - out["dynamic"]) / out["unit"]
    print(f"dynamic incast: {out['dynamic']:.5f}s  unit incast: {out['unit']:.5f}s")
    print(f"speedup: {100 * speedup:.1f}%")


if __name__ == "__main__":
    main()
