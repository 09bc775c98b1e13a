#!/usr/bin/env python3
"""Effect of Hadamard loss dispersal on SGD under heavy packet loss.

Runs the same least-squares workload three ways: lossless reference,
lossy with dispersal on, lossy with dispersal off.
"""

import argparse
import dataclasses

from ubar.config import ExperimentConfig
from ubar.harness import make_problem, run_sgd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--drop-prob", type=float, default=0.10)
    ap.add_argument("--generations", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base = ExperimentConfig(
        n=args.n,
        bucket_len=512,
        sgd_dim=512,
        sgd_rows=2048,
        sgd_lr=0.3,
        generations=args.generations,
        seed=args.seed,
        calibration_iterations=5,
        # forced heavy drops would otherwise trip the skip/halt safeguards
        skip_threshold=0.5,
        halt_threshold=0.9,
        halt_window=10,
    )
    problem = make_problem(
        base.sgd_dim, base.sgd_rows, base.n, base.sgd_noise, base.seed, base.sgd_lr
    )
    print(f"optimum loss: {problem.f_opt:.6g}")
    for label, kw in (
        ("lossless", dict(transport="reliable", ht="off", drop_prob=0.0)),
        ("lossy+dispersal", dict(transport="ubt", ht="on", drop_prob=args.drop_prob)),
        ("lossy, raw", dict(transport="ubt", ht="off", drop_prob=args.drop_prob)),
    ):
        cfg = dataclasses.replace(base, **kw)
        trace = run_sgd(cfg, problem=problem)
        flag = " (diverged)" if trace.diverged else " (halted)" if trace.halted else ""
        print(f"{label:<16} final loss {trace.final_loss:.6g}{flag}")


if __name__ == "__main__":
    main()
