"""Executes collective generators over the simulated network.

One driver instance runs one generation (one AllReduce across all nodes).
Send commands become paced packet bursts; receive stages follow the bounded
semantics: complete on full reception (OnTime), expire x% of t_C after the
buffer drains once last-percentile packets have been seen from every peer
(EarlyTimeout), or hit the hard bound t_B (HardTimeout). In reliable mode
there are no timers and the fault plan must be lossless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .collectives import AwaitStage, OpenStage, RoundEnd, SendShard, StageResult
from .simnet import FaultPlan, LatencyModel, NetState, SimClock, SimDeadlock, deliver_burst
from .transport import Completion, StageOutcome, UbtController
from .wire import ENTRY_BYTES, MAX_PAYLOAD

_EPS = 1e-12


@dataclass
class NodeStats:
    bytes_sent: int = 0
    bytes_received: int = 0
    bytes_expected: int = 0
    outcomes: list = field(default_factory=list)  # (key, kind, StageOutcome)
    result: object = None
    finish_time: float = math.nan

    @property
    def loss_rate(self) -> float:
        if self.bytes_expected == 0:
            return 0.0
        return 1.0 - self.bytes_received / self.bytes_expected

    @property
    def timeout_occurred(self) -> bool:
        return any(
            o.completion is not Completion.ON_TIME for _, _, o in self.outcomes
        )


class _Stage:
    __slots__ = (
        "expected",
        "kind",
        "open_time",
        "buf",
        "mask",
        "expected_bytes",
        "received_bytes",
        "last_seen",
        "pre",
        "done",
        "finish_time",
        "early_deadline",
        "early_scheduled",
    )

    def __init__(self):
        self.expected = None
        self.kind = 1
        self.open_time = math.nan
        self.buf = {}
        self.mask = {}
        self.expected_bytes = 0
        self.received_bytes = 0
        self.last_seen = set()
        self.pre = []  # arrivals before OpenStage: (peer, off, cnt, data, last)
        self.done = None
        self.finish_time = math.nan
        self.early_deadline = math.inf
        self.early_scheduled = False


class _Burst:
    __slots__ = ("dst", "key", "peer", "data", "times", "offs", "cnts", "lasts", "idx")

    def __init__(self, dst, key, peer, data, times, offs, cnts, lasts):
        self.dst = dst
        self.key = key
        self.peer = peer
        self.data = data
        self.times = times
        self.offs = offs
        self.cnts = cnts
        self.lasts = lasts
        self.idx = 0


class SimChannelDriver:
    """Drives one generation of collective generators over simnet."""

    def __init__(
        self,
        n: int,
        latency: LatencyModel,
        faults: FaultPlan,
        clock: SimClock,
        rng: np.random.Generator,
        mode: str = "ubt",  # or "reliable"
        controllers: list[UbtController] | None = None,
        link_rate: float = 1e9 / 8,
        max_payload: int = MAX_PAYLOAD,
        net: NetState | None = None,
    ):
        if mode not in ("ubt", "reliable"):
            raise ValueError(f"unknown transport mode {mode!r}")
        if mode == "reliable" and (faults.drop_prob > 0 or faults.incast_penalty > 0):
            raise ValueError("reliable mode requires a lossless fault plan")
        if mode == "ubt" and controllers is None:
            raise ValueError("ubt mode needs per-node controllers")
        self.n = n
        self.latency = latency
        self.faults = faults
        self.clock = clock
        self.rng = rng
        self.mode = mode
        self.controllers = controllers
        self.link_rate = link_rate
        self.entries_per_pkt = max_payload // ENTRY_BYTES
        self.net = net if net is not None else NetState()

    # -- public entry point -------------------------------------------------

    def run(self, generators: list) -> list[NodeStats]:
        self.gens = list(generators)
        self.stats = [NodeStats() for _ in range(self.n)]
        self.tx_free = [self.clock.now] * self.n
        self.blocked: dict[int, str] = {}
        self.stages: dict[tuple[int, str], _Stage] = {}
        self.start_time = self.clock.now
        for i in range(self.n):
            self.clock.schedule(self.clock.now, self._resume, i, None)
        self.clock.run_until_idle()
        unfinished = [i for i in range(self.n) if self.stats[i].result is None]
        if unfinished:
            states = {i: self.blocked.get(i, "running") for i in unfinished}
            raise SimDeadlock(f"generation stalled; stuck nodes: {states}")
        return self.stats

    # -- generator scheduling -----------------------------------------------

    def _resume(self, i: int, value) -> None:
        gen = self.gens[i]
        while True:
            try:
                cmd = gen.send(value)
            except StopIteration as stop:
                self.stats[i].result = stop.value
                self.stats[i].finish_time = self.clock.now
                return
            value = None
            if isinstance(cmd, SendShard):
                self._send(i, cmd)
            elif isinstance(cmd, OpenStage):
                self._open(i, cmd)
            elif isinstance(cmd, RoundEnd):
                turnaround = float(self.latency.sample(self.rng, 1)[0])
                turnaround *= self.faults.slowdown(i, self.clock.now)
                at = max(self.clock.now, self.tx_free[i]) + turnaround
                self.clock.schedule(at, self._resume, i, None)
                return
            elif isinstance(cmd, AwaitStage):
                st = self._stage(i, cmd.key)
                if st.done is not None:
                    value = st.done
                    continue
                self.blocked[i] = cmd.key
                return
            else:
                raise TypeError(f"unknown channel command {cmd!r}")

    # -- sending ------------------------------------------------------------

    def _send(self, i: int, cmd: SendShard) -> None:
        data = np.ascontiguousarray(cmd.data, dtype=np.float32).copy()
        n_entries = len(data)
        if n_entries == 0:
            return
        epp = self.entries_per_pkt
        n_pkts = -(-n_entries // epp)
        pkt_entries = np.full(n_pkts, epp, dtype=np.int64)
        pkt_entries[-1] = n_entries - epp * (n_pkts - 1)
        pkt_bytes = pkt_entries * ENTRY_BYTES

        if self.mode == "ubt":
            # pacing rate can exceed the wire; the link clamps it
            rate = min(self.controllers[i].rate.rate, self.link_rate)
        else:
            rate = self.link_rate
        slow = self.faults.slowdown(i, self.clock.now)
        start = max(self.clock.now, self.tx_free[i])
        departures = start + np.cumsum(pkt_bytes) / rate * slow
        self.tx_free[i] = float(departures[-1])
        self.stats[i].bytes_sent += int(pkt_bytes.sum())

        dropped, arrivals = deliver_burst(
            departures, i, cmd.dst, self.faults, self.latency, self.rng, cmd.fan_in
        )
        if self.mode == "ubt":
            lat = arrivals - departures
            for sample in lat[~dropped][9::10]:
                self.controllers[i].observe_rtt(2.0 * float(sample))

        delivered = np.nonzero(~dropped)[0]
        if len(delivered) == 0:
            return
        offs = delivered * epp  # entry offsets within the shard
        tagged_from = n_pkts - max(1, n_pkts // 100)
        lasts = delivered >= tagged_from
        times = arrivals[delivered]
        order = np.argsort(times, kind="stable")
        burst = _Burst(
            dst=cmd.dst,
            key=cmd.stage,
            peer=i,
            data=data,
            times=times[order],
            offs=offs[order],
            cnts=pkt_entries[delivered][order],
            lasts=lasts[order],
        )
        self.clock.schedule(float(burst.times[0]), self._burst_arrive, burst)

    # -- receiving ----------------------------------------------------------

    def _stage(self, node: int, key: str) -> _Stage:
        st = self.stages.get((node, key))
        if st is None:
            st = _Stage()
            self.stages[(node, key)] = st
        return st

    def _open(self, i: int, cmd: OpenStage) -> None:
        st = self._stage(i, cmd.key)
        st.expected = cmd.expected
        st.kind = cmd.kind
        st.open_time = self.clock.now
        for p, (_j, cnt) in cmd.expected.items():
            st.buf[p] = np.zeros(cnt, dtype=np.float32)
            st.mask[p] = np.zeros(cnt, dtype=bool)
            st.expected_bytes += cnt * ENTRY_BYTES
        self.stats[i].bytes_expected += st.expected_bytes
        pre, st.pre = st.pre, []
        for peer, off, cnt, data, last in pre:
            self._apply(st, peer, off, cnt, data, last)
        if self.mode == "ubt":
            t_b = self.controllers[i].timeouts.t_b
            self.clock.schedule(self.clock.now + t_b, self._hard_timeout, i, cmd.key)
        self._post_arrival(i, cmd.key, st)

    def _apply(self, st: _Stage, peer, off, cnt, data, last) -> None:
        if st.expected is None:
            st.pre.append((peer, off, cnt, data, last))
            return
        if peer not in st.buf:
            return  # stray sender, ignore
        buf = st.buf[peer]
        mask = st.mask[peer]
        hi = min(off + cnt, len(buf))
        if hi <= off:
            return
        newly = int(hi - off) - int(mask[off:hi].sum())
        buf[off:hi] = data[off:hi]
        mask[off:hi] = True
        st.received_bytes += newly * ENTRY_BYTES
        if last:
            st.last_seen.add(peer)

    def _burst_arrive(self, burst: _Burst) -> None:
        st = self._stage(burst.dst, burst.key)
        now = self.clock.now
        k = burst.idx
        times = burst.times
        while k < len(times) and times[k] <= now + _EPS:
            self._apply(
                st,
                burst.peer,
                int(burst.offs[k]),
                int(burst.cnts[k]),
                burst.data,
                bool(burst.lasts[k]),
            )
            k += 1
        burst.idx = k
        if k < len(times):
            self.clock.schedule(float(times[k]), self._burst_arrive, burst)
        if st.expected is not None and st.done is None:
            self._post_arrival(burst.dst, burst.key, st)

    def _post_arrival(self, i: int, key: str, st: _Stage) -> None:
        if st.done is not None:
            return
        if st.received_bytes >= st.expected_bytes:
            self._finish(i, key, st, Completion.ON_TIME)
            return
        if self.mode != "ubt":
            return
        if st.expected and all(p in st.last_seen for p in st.expected):
            wait = self.controllers[i].early_wait(st.kind)
            st.early_deadline = self.clock.now + wait
            if not st.early_scheduled:
                st.early_scheduled = True
                self.clock.schedule(st.early_deadline, self._early_check, i, key)

    def _early_check(self, i: int, key: str) -> None:
        st = self._stage(i, key)
        st.early_scheduled = False
        if st.done is not None:
            return
        if self.clock.now + _EPS >= st.early_deadline:
            self._finish(i, key, st, Completion.EARLY_TIMEOUT)
        else:
            st.early_scheduled = True
            self.clock.schedule(st.early_deadline, self._early_check, i, key)

    def _hard_timeout(self, i: int, key: str) -> None:
        st = self._stage(i, key)
        if st.done is None:
            self._finish(i, key, st, Completion.HARD_TIMEOUT)

    def _finish(self, i: int, key: str, st: _Stage, completion: Completion) -> None:
        elapsed = self.clock.now - st.open_time
        loss = (
            1.0 - st.received_bytes / st.expected_bytes if st.expected_bytes else 0.0
        )
        outcome = StageOutcome(
            completion=completion,
            elapsed=elapsed,
            loss_rate=loss,
            expected_bytes=st.expected_bytes,
            received_bytes=st.received_bytes,
            last_pct_from_all=bool(st.expected)
            and all(p in st.last_seen for p in st.expected),
        )
        st.done = StageResult(outcome, st.buf, st.mask)
        st.finish_time = self.clock.now
        self.stats[i].outcomes.append((key, st.kind, outcome))
        self.stats[i].bytes_received += st.received_bytes
        if self.blocked.get(i) == key:
            del self.blocked[i]
            self._resume(i, st.done)
