"""Deterministic discrete-event network core: clock, latency, faults.

Virtual time is in seconds (float, nanosecond-scale resolution). Events are
ordered by (time, sequence), so identical seeds and scenarios yield
identical traces. Latency models expose a configurable tail-to-median ratio
(P99/P50); the default two-point mixture hits the configured ratio exactly,
the lognormal variant offers a smoother tail.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

SLOW_FRACTION = 0.015  # mixture slow-path mass; P99 lands on the slow point


class SimDeadlock(RuntimeError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    median: float
    p99_over_p50: float = 1.0
    distribution: str = "mixture"  # or "lognormal"

    def __post_init__(self):
        if self.median <= 0:
            raise ValueError("median latency must be positive")
        if self.p99_over_p50 < 1.0:
            raise ValueError("P99/P50 ratio must be >= 1")
        if self.distribution not in ("mixture", "lognormal"):
            raise ValueError(f"unknown latency distribution {self.distribution!r}")

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        if self.p99_over_p50 == 1.0:
            return np.full(size, self.median)
        if self.distribution == "mixture":
            slow = rng.random(size) < SLOW_FRACTION
            return np.where(slow, self.median * self.p99_over_p50, self.median)
        # Lognormal fitted to the two quantiles: P50 = median,
        # P99/P50 = ratio  =>  sigma = ln(ratio) / z_0.99.
        sigma = math.log(self.p99_over_p50) / 2.3263478740408408
        return self.median * np.exp(sigma * rng.standard_normal(size))


@dataclass(frozen=True)
class Straggler:
    node: int
    factor: float
    start: float = 0.0
    end: float = math.inf

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class FaultPlan:
    drop_prob: float = 0.0
    incast_penalty: float = 0.0  # extra drop prob per sender above threshold
    incast_threshold: int = 1
    stragglers: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must be in [0,1]")
        if self.incast_penalty < 0:
            raise ValueError("incast_penalty must be >= 0")

    def slowdown(self, node: int, t: float) -> float:
        f = 1.0
        for s in self.stragglers:
            if s.node == node and s.active(t):
                f *= s.factor
        return f

    def drop_probability(self, concurrent_senders: int) -> float:
        extra = self.incast_penalty * max(0, concurrent_senders - self.incast_threshold)
        return min(1.0, self.drop_prob + extra)


class SimClock:
    """Event queue ordered by (time, sequence); time never decreases."""

    def __init__(self):
        self.now = 0.0
        self._seq = 0
        self._heap: list = []

    def schedule(self, at: float, fn, *args) -> None:
        if at < self.now:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, fn, args))

    def step(self) -> bool:
        if not self._heap:
            return False
        at, _seq, fn, args = heapq.heappop(self._heap)
        self.now = at
        fn(*args)
        return True

    def run_until_idle(self) -> None:
        while self.step():
            pass

    @property
    def pending(self) -> int:
        return len(self._heap)


@dataclass
class NetState:
    """Tracks which sources currently have packets in flight per receiver."""

    active: dict = field(default_factory=dict)  # dst -> {src: outstanding pkts}

    def begin(self, src: int, dst: int, pkts: int = 1) -> None:
        per = self.active.setdefault(dst, {})
        per[src] = per.get(src, 0) + pkts

    def end(self, src: int, dst: int, pkts: int = 1) -> None:
        per = self.active.get(dst, {})
        if src in per:
            per[src] -= pkts
            if per[src] <= 0:
                del per[src]

    def concurrent_senders(self, dst: int) -> int:
        return len(self.active.get(dst, {}))


@dataclass
class PacketEvent:
    """Outcome of delivering one packet: dropped, or arriving at a time."""

    src: int
    dst: int
    dropped: bool
    arrival: float  # meaningful when not dropped


def deliver(
    pkt_bytes: int,
    src: int,
    dst: int,
    plan: FaultPlan,
    model: LatencyModel,
    clock: SimClock,
    rng: np.random.Generator,
    net: NetState | None = None,
    concurrent_senders: int | None = None,
) -> PacketEvent:
    """Decide one packet's fate: drop, or arrival at now + latency.

    The drop probability is the plan's base probability plus the incast
    penalty for each concurrent sender above the threshold at the receiver.
    Straggler factors on either endpoint scale the latency.
    """
    if concurrent_senders is None:
        concurrent_senders = (
            net.concurrent_senders(dst) if net is not None else 1
        )
    p_drop = plan.drop_probability(concurrent_senders)
    if rng.random() < p_drop:
        return PacketEvent(src, dst, dropped=True, arrival=math.nan)
    latency = float(model.sample(rng, 1)[0])
    latency *= plan.slowdown(src, clock.now) * plan.slowdown(dst, clock.now)
    return PacketEvent(src, dst, dropped=False, arrival=clock.now + latency)


def deliver_burst(
    departures: np.ndarray,
    src: int,
    dst: int,
    plan: FaultPlan,
    model: LatencyModel,
    rng: np.random.Generator,
    concurrent_senders: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized fate decision for a paced burst of packets.

    Returns (dropped_mask, arrival_times); arrival times for dropped packets
    are NaN. Straggler slowdown is evaluated at the first departure.
    """
    k = len(departures)
    p_drop = plan.drop_probability(concurrent_senders)
    dropped = rng.random(k) < p_drop
    latency = model.sample(rng, k)
    t0 = float(departures[0]) if k else 0.0
    latency = latency * plan.slowdown(src, t0) * plan.slowdown(dst, t0)
    arrivals = np.where(dropped, np.nan, departures + latency)
    return dropped, arrivals
