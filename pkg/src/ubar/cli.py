"""Command-line entry points.

Exit codes: 0 success, 2 benchmark/replay assertion failure, 3 workload
divergence, 4 halted by the loss safeguard.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness
from .config import ExperimentConfig, apply_overrides, load_config
from .metrics import write_csv
from .schedule import rounds_count

EXIT_OK = 0
EXIT_ASSERTION = 2
EXIT_DIVERGED = 3
EXIT_HALTED = 4

_FLAGS = (
    # (flag, config field, type)
    ("--variant", "variant", str),
    ("--n", "n", int),
    ("--seed", "seed", int),
    ("--generations", "generations", int),
    ("--bucket-len", "bucket_len", int),
    ("--transport", "transport", str),
    ("--ht", "ht", str),
    ("--incast", "incast", str),
    ("--drop-prob", "drop_prob", float),
    ("--group-size", "group_size", int),
    ("--out", "out", str),
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    for flag, _field, typ in _FLAGS:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config field (repeatable)",
    )


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    for flag, field, _typ in _FLAGS:
        v = getattr(args, flag.lstrip("-").replace("-", "_"))
        if v is not None:
            overrides[field] = v
    for item in args.set:
        key, _, value = item.partition("=")
        overrides[key] = _coerce(value)
    return apply_overrides(cfg, overrides)


def cmd_calibrate(args) -> int:
    cfg = build_config(args)
    t_b = harness.run_calibration(cfg)
    print(f"t_B = {t_b:.6g} s "
          f"({cfg.calibration_iterations} reliable iterations, n={cfg.n})")
    return EXIT_OK


def cmd_bench_mse(args) -> int:
    cfg = build_config(args)
    seeds = list(range(args.seeds))
    table = harness.run_mse_benchmark(cfg, seeds)
    print("seed  " + "  ".join(f"{v:>12}" for v in table))
    for k, seed in enumerate(seeds):
        print(f"{seed:>4}  " + "  ".join(f"{table[v][k]:12.4e}" for v in table))
    means = {v: float(np.mean(vals)) for v, vals in table.items()}
    print("mean  " + "  ".join(f"{means[v]:12.4e}" for v in table))
    if not (means.get("tar", 0) <= means.get("ps", float("inf")) <= means.get("ring", float("inf"))):
        print("FAIL: expected mse ordering tar <= ps <= ring", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_bench_rounds(args) -> int:
    cfg = build_config(args)
    incast = 1 if cfg.incast == "dynamic" else int(cfg.incast)
    n, g = cfg.n, cfg.group_size
    rows = [
        ("tar", rounds_count(n, "tar", incast=incast)),
        ("ring", rounds_count(n, "ring")),
        ("ps", rounds_count(n, "ps")),
    ]
    if g and n % g == 0:
        rows.insert(1, ("tar2d", rounds_count(n, "tar2d", groups=n // g)))
    print(f"rounds per AllReduce at n={n}, incast={incast}:")
    for name, r in rows:
        print(f"  {name:<6} {r}")
    return EXIT_OK


def cmd_sgd(args) -> int:
    cfg = build_config(args)
    trace = harness.run_sgd(cfg)
    print(
        f"sgd: {len(trace.losses) - 1} generations, "
        f"loss {trace.losses[0]:.6g} -> {trace.final_loss:.6g}"
    )
    if trace.halted:
        print("halted by loss safeguard", file=sys.stderr)
        return EXIT_HALTED
    if trace.diverged:
        print("diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = build_config(args)
    result = harness.run_experiment(cfg)
    csv = result.csv()
    if args.check:
        with open(args.check, "rb") as fh:
            want = fh.read()
        if want != csv.encode():
            print(f"replay mismatch against {args.check}", file=sys.stderr)
            return EXIT_ASSERTION
        print(f"replay matches {args.check} byte for byte")
        return EXIT_OK
    if cfg.out:
        write_csv(result.rows, cfg.out)
        print(f"wrote {len(result.rows)} rows to {cfg.out}")
    else:
        sys.stdout.write(csv)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ubar", description="straggler-resilient allreduce testbed"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="measure t_B over reliable iterations")
    _add_common(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("bench-mse", help="compare collective MSE under loss")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(fn=cmd_bench_mse)

    p = sub.add_parser("bench-rounds", help="round counts per variant")
    _add_common(p)
    p.set_defaults(fn=cmd_bench_rounds)

    p = sub.add_parser("sgd", help="distributed least-squares workload")
    _add_common(p)
    p.set_defaults(fn=cmd_sgd)

    p = sub.add_parser("replay", help="re-run an experiment deterministically")
    _add_common(p)
    p.add_argument("--check", help="existing CSV to byte-compare against")
    p.set_defaults(fn=cmd_replay)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
