#!/usr/bin/env python3
"""Compare gradient MSE of the three collectives on a lossy network.

Reproduces the headline ordering: transpose < parameter-server < ring.
"""

import argparse

import numpy as np

from ubar.config import ExperimentConfig
from ubar.harness import run_mse_benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=6)
    ap.add_argument("--bucket-len", type=int, default=200_000)
    ap.add_argument("--drop-prob", type=float, default=0.01)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        n=args.n,
        bucket_len=args.bucket_len,
        transport="ubt",
        drop_prob=args.drop_prob,
        incast_penalty=0.004,
        incast_threshold=2,
        calibration_iterations=5,
        t_b=None,
    )
    table = run_mse_benchmark(cfg, list(range(args.seeds)))
    for variant, vals in table.items():
        print(f"{variant:<5} mean mse {np.mean(vals):.4e}  (per seed: "
              + " ".join(f"{v:.2e}" for v in vals) + ")")


if __name__ == "__main__":
    main()
