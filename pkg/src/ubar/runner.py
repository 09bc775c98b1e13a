"""Generation-by-generation orchestration of collectives over the simulator.

A session owns the virtual clock, the per-node transport controllers, the
rotation index, the Hadamard codec state, and the safeguard history, and
runs one AllReduce per generation. Calibration (reliable-channel runs whose
pooled stage times set t_B) happens automatically before the first
unreliable generation unless t_B is overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import safeguards
from .collectives import (
    AllReduceResult,
    ps_allreduce,
    ring_allreduce,
    tar2d_allreduce,
    tar_allreduce,
)
from .hadamard import DropMask, EmptyReceptionError, RhtContext, derive_seed, rht_decode, rht_encode
from .schedule import Topology, build_schedule
from .simdriver import NodeStats, SimChannelDriver
from .simnet import FaultPlan, LatencyModel, SimClock
from .transport import (
    CALIBRATION_ITERATIONS,
    Completion,
    RateState,
    TimeoutState,
    UbtController,
    calibrate_t_b,
    effective_incast,
    expected_completion,
)

VARIANTS = ("tar", "tar2d", "ring", "ps")


@dataclass
class GenerationReport:
    generation: int
    start: float
    wall: float
    incast_used: int
    ht_used: bool
    stats: list  # NodeStats
    results: list  # per-node float32 arrays (post HT decode)
    action: safeguards.Action = safeguards.Action.ACCEPT

    @property
    def max_loss(self) -> float:
        return max(s.loss_rate for s in self.stats)

    @property
    def mean_loss(self) -> float:
        return sum(s.loss_rate for s in self.stats) / len(self.stats)


class SimSession:
    def __init__(
        self,
        n: int,
        latency: LatencyModel,
        faults: FaultPlan,
        seed: int,
        variant: str = "tar",
        transport: str = "ubt",
        ht: str = "off",  # off | on | auto
        incast="dynamic",  # int or "dynamic"
        group_size: int = 0,
        server: int = 0,
        t_b: float | None = None,
        alpha: float = 0.95,
        x_pct: float = 10.0,
        link_rate: float = 1e9 / 8,
        max_payload: int = 1400,
        calibration_iterations: int = CALIBRATION_ITERATIONS,
        calibration_bucket_len: int | None = None,
        policy: safeguards.SafeguardPolicy | None = None,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if ht not in ("off", "on", "auto"):
            raise ValueError(f"unknown ht mode {ht!r}")
        self.n = n
        self.latency = latency
        self.faults = faults
        self.seed = seed
        self.variant = variant
        self.transport = transport
        self.ht_mode = ht
        self.incast_cfg = incast
        self.topo = Topology(n, group_size=group_size)
        self.server = server
        self.alpha = alpha
        self.x_pct0 = x_pct
        self.link_rate = link_rate
        self.max_payload = max_payload
        self.calibration_iterations = calibration_iterations
        self.calibration_bucket_len = calibration_bucket_len
        self.policy = policy or safeguards.SafeguardPolicy()
        self.history = safeguards.LossHistory()

        self.clock = SimClock()
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        self.rotation = 0
        self.generation = 0
        self.controllers: list[UbtController] | None = None
        self.t_b_override = t_b
        self.calibration_t_b: float | None = None

    # -- setup ---------------------------------------------------------------

    def _make_generators(self, buckets: list[np.ndarray], incast: int):
        v = self.variant
        if v == "tar":
            sched = build_schedule(self.n, incast)
            return [
                tar_allreduce(i, buckets[i], self.topo, self.rotation, sched)
                for i in range(self.n)
            ]
        if v == "tar2d":
            return [
                tar2d_allreduce(i, buckets[i], self.topo, self.rotation)
                for i in range(self.n)
            ]
        if v == "ring":
            return [ring_allreduce(i, buckets[i], self.topo) for i in range(self.n)]
        return [
            ps_allreduce(i, buckets[i], self.topo, self.server)
            for i in range(self.n)
        ]

    def ensure_calibrated(self, bucket_len: int) -> None:
        """Reliable-channel runs pool stage times into t_B and seed t_C."""
        if self.controllers is not None:
            return
        if self.t_b_override is not None:
            t_b = self.t_b_override
            t_c1 = t_c2 = 0.0
        else:
            cal_len = self.calibration_bucket_len or bucket_len
            reliable_faults = FaultPlan(stragglers=self.faults.stragglers)
            pooled: list[float] = []
            per_kind: dict[int, list[float]] = {1: [], 2: []}
            for _ in range(self.calibration_iterations):
                buckets = [
                    self.rng.standard_normal(cal_len).astype(np.float32)
                    for _ in range(self.n)
                ]
                gens = self._make_generators(buckets, 1)
                driver = SimChannelDriver(
                    self.n,
                    self.latency,
                    reliable_faults,
                    self.clock,
                    self.rng,
                    mode="reliable",
                    link_rate=self.link_rate,
                    max_payload=self.max_payload,
                )
                for st in driver.run(gens):
                    for _key, kind, outcome in st.outcomes:
                        pooled.append(outcome.elapsed)
                        per_kind[kind].append(outcome.elapsed)
            t_b = calibrate_t_b(pooled)
            t_c1 = float(np.median(per_kind[1])) if per_kind[1] else 0.0
            t_c2 = float(np.median(per_kind[2])) if per_kind[2] else 0.0
            self.calibration_t_b = t_b
        self.controllers = [
            UbtController(
                n=self.n,
                timeouts=TimeoutState(
                    t_b=t_b,
                    t_c_stage1=t_c1,
                    t_c_stage2=t_c2,
                    alpha=self.alpha,
                    x_pct=self.x_pct0,
                ),
                rate=RateState(rate=self.link_rate),
            )
            for _ in range(self.n)
        ]

    # -- per-generation run ----------------------------------------------------

    def current_incast(self) -> int:
        if self.variant != "tar":
            return 1
        if self.incast_cfg == "dynamic":
            if self.transport != "ubt" or self.controllers is None:
                return 1
            return effective_incast(
                [c.incast.advertised for c in self.controllers]
            )
        return int(self.incast_cfg)

    def ht_active(self) -> bool:
        if self.ht_mode == "on":
            return True
        if self.ht_mode == "off":
            return False
        return self.controllers is not None and any(
            c.ht_active for c in self.controllers
        )

    def run_generation(self, buckets: list[np.ndarray]) -> GenerationReport:
        """One AllReduce over per-node entry vectors of equal length."""
        bucket_len = len(buckets[0])
        if self.transport == "ubt":
            self.ensure_calibrated(bucket_len)

        ht_used = self.ht_active()
        if ht_used:
            ctx = RhtContext.for_length(
                bucket_len,
                derive_seed(self.seed, self.generation % 65536, self.generation),
            )
            wire_buckets = [
                rht_encode(b, ctx).astype(np.float32) for b in buckets
            ]
        else:
            ctx = None
            wire_buckets = [np.asarray(b, dtype=np.float32) for b in buckets]

        incast = self.current_incast()
        gens = self._make_generators(wire_buckets, incast)
        mode = "ubt" if self.transport == "ubt" else "reliable"
        driver = SimChannelDriver(
            self.n,
            self.latency,
            self.faults if mode == "ubt" else FaultPlan(stragglers=self.faults.stragglers),
            self.clock,
            self.rng,
            mode=mode,
            controllers=self.controllers,
            link_rate=self.link_rate,
            max_payload=self.max_payload,
        )
        start = self.clock.now
        stats = driver.run(gens)
        wall = max(s.finish_time for s in stats) - start

        results = []
        for st in stats:
            res: AllReduceResult = st.result
            if ctx is not None:
                try:
                    decoded = rht_decode(res.entries, DropMask(res.received), ctx)
                    results.append(decoded.astype(np.float32))
                except EmptyReceptionError:
                    results.append(np.zeros(bucket_len, dtype=np.float32))
            else:
                results.append(res.entries)

        report = GenerationReport(
            generation=self.generation,
            start=start,
            wall=wall,
            incast_used=incast,
            ht_used=ht_used,
            stats=stats,
            results=results,
        )

        if mode == "ubt":
            self._update_controllers(stats)
        report.action = safeguards.assess(report.max_loss, self.policy, self.history)

        self.generation += 1
        self.rotation = (self.rotation + 1) % self.n
        return report

    def _update_controllers(self, stats: list[NodeStats]) -> None:
        t_b = self.controllers[0].timeouts.t_b
        for kind in (1, 2):
            estimates = []
            for st in stats:
                vals = [
                    expected_completion(o, t_b)
                    for _k, knd, o in st.outcomes
                    if knd == kind
                ]
                if vals:
                    estimates.append(sum(vals) / len(vals))
            for c in self.controllers:
                c.fold_stage_t_c(kind, estimates)
        for c, st in zip(self.controllers, stats):
            c.end_generation(st.loss_rate, st.timeout_occurred)
