"""Experiment configuration: a flat dataclass, loadable from YAML.

Command-line flags override file values; see cli.py.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .simnet import FaultPlan, LatencyModel, Straggler


@dataclass
class ExperimentConfig:
    variant: str = "tar"  # tar | tar2d | ring | ps
    n: int = 4
    group_size: int = 0  # 0 -> sqrt split for tar2d
    incast: str = "dynamic"  # "dynamic" or an integer literal
    bucket_len: int = 65536
    generations: int = 1
    seed: int = 0

    transport: str = "ubt"  # ubt | reliable
    ht: str = "off"  # off | on | auto
    t_b: float | None = None  # override; skips calibration when set
    alpha: float = 0.95
    x_pct: float = 10.0
    calibration_iterations: int = 20

    link_rate_gbit: float = 8.0
    max_payload: int = 1400
    server: int = 0  # parameter-server rank for the ps variant

    # network scenario
    latency_median: float = 1e-5
    p99_over_p50: float = 1.5
    latency_distribution: str = "mixture"  # mixture | lognormal
    drop_prob: float = 0.0
    incast_penalty: float = 0.0
    incast_threshold: int = 1
    # each straggler is [node, factor, start, end]
    stragglers: list = field(default_factory=list)

    # loss safeguards
    skip_threshold: float = 0.02
    halt_threshold: float = 0.30
    halt_window: int = 3

    # sgd workload
    sgd_dim: int = 512
    sgd_rows: int = 2048
    sgd_lr: float = 0.0
    sgd_noise: float = 0.1

    out: str = ""  # csv output path ("" -> stdout summary only)

    def incast_value(self):
        if self.incast == "dynamic":
            return "dynamic"
        return int(self.incast)

    def latency_model(self) -> LatencyModel:
        return LatencyModel(
            median=self.latency_median,
            p99_over_p50=self.p99_over_p50,
            distribution=self.latency_distribution,
        )

    def fault_plan(self) -> FaultPlan:
        return FaultPlan(
            drop_prob=self.drop_prob,
            incast_penalty=self.incast_penalty,
            incast_threshold=self.incast_threshold,
            stragglers=tuple(Straggler(*s) for s in self.stragglers),
        )


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path: str | None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        cfg = apply_overrides(cfg, data)
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    unknown = set(overrides) - _FIELDS
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(cfg, **overrides)
