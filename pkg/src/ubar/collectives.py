"""AllReduce collectives expressed as channel-agnostic generators.

Each collective is a generator that yields channel commands (send a shard,
open/await a bounded receive stage, end a pacing round) and receives stage
results back via ``send()``. The same generator code runs on the
deterministic simulator and on the real datagram backend; only the driver
differs. A collective returns the node's aggregated entry vector.

Aggregation is the arithmetic mean over the contributions actually received
(per entry), accumulated in float64 in ascending node order so lossless runs
are bit-stable. Entries with no surviving contribution are zero-filled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import PairSchedule, Topology, build_schedule, owned_shard
from .transport import Completion, StageOutcome
from .wire import shard_offsets


@dataclass
class SendShard:
    """Transmit a contiguous slice of the (possibly transformed) bucket."""

    dst: int
    stage: str  # receive-stage key at the destination
    shard_index: int
    entry_offset: int
    data: np.ndarray
    fan_in: int = 1  # concurrent senders the destination sees this round


@dataclass
class OpenStage:
    """Start a bounded receive stage; non-blocking."""

    key: str
    kind: int  # 1 = send/receive stage, 2 = broadcast/receive stage
    expected: dict  # peer -> (shard_index, n_entries)


@dataclass
class AwaitStage:
    """Block until the named stage completes (all bytes, early, or hard)."""

    key: str


@dataclass
class RoundEnd:
    """Sender-side pacing barrier between schedule rounds."""


@dataclass
class StageResult:
    outcome: StageOutcome
    data: dict  # peer -> float32 array (zeros where not received)
    mask: dict  # peer -> bool array (True where received)


@dataclass
class AllReduceResult:
    """A node's aggregated entries plus which of them actually arrived.

    ``received`` is False only where no contribution survived at all (the
    entry was zero-filled); partially aggregated entries count as received.
    """

    entries: np.ndarray
    received: np.ndarray


def _mean_received(
    rank: int,
    own: np.ndarray,
    result: StageResult,
    n: int,
) -> np.ndarray:
    """Mean over received contributions, own shard included, ascending order."""
    acc = np.zeros(len(own), dtype=np.float64)
    cnt = np.zeros(len(own), dtype=np.float64)
    for i in range(n):
        if i == rank:
            acc += own
            cnt += 1.0
        elif i in result.data:
            acc += result.data[i]
            cnt += result.mask[i]
    out = np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)
    return out.astype(np.float32)


def tar_allreduce(
    rank: int,
    entries: np.ndarray,
    topo: Topology,
    r: int,
    schedule: PairSchedule,
):
    """Transpose AllReduce: shard exchange, aggregate own index, broadcast."""
    n = topo.n
    entries = np.asarray(entries, dtype=np.float32)
    offs = shard_offsets(len(entries), n)
    my_j = owned_shard(rank, r, n)

    def shard_of(j: int) -> np.ndarray:
        return entries[offs[j] : offs[j + 1]]

    expected1 = {
        p: (my_j, offs[my_j + 1] - offs[my_j]) for p in range(n) if p != rank
    }
    yield OpenStage("s1", 1, expected1)
    for rnd in schedule.rounds:
        dsts = rnd[rank]
        for dst in dsts:
            j = owned_shard(dst, r, n)
            yield SendShard(dst, "s1", j, offs[j], shard_of(j), fan_in=len(dsts))
        yield RoundEnd()
    res1 = yield AwaitStage("s1")

    s_r = _mean_received(rank, shard_of(my_j).astype(np.float64), res1, n)

    expected2 = {
        p: (owned_shard(p, r, n), offs[owned_shard(p, r, n) + 1] - offs[owned_shard(p, r, n)])
        for p in range(n)
        if p != rank
    }
    yield OpenStage("s2", 2, expected2)
    for rnd in schedule.rounds:
        dsts = rnd[rank]
        for dst in dsts:
            yield SendShard(dst, "s2", my_j, offs[my_j], s_r, fan_in=len(dsts))
        yield RoundEnd()
    res2 = yield AwaitStage("s2")

    out = np.zeros(len(entries), dtype=np.float32)
    got = np.zeros(len(entries), dtype=bool)
    out[offs[my_j] : offs[my_j + 1]] = s_r
    got[offs[my_j] : offs[my_j + 1]] = True
    for p in range(n):
        if p == rank:
            continue
        j = owned_shard(p, r, n)
        out[offs[j] : offs[j + 1]] = res2.data[p]
        got[offs[j] : offs[j + 1]] = res2.mask[p]
    return AllReduceResult(out, got)


def tar2d_allreduce(
    rank: int,
    entries: np.ndarray,
    topo: Topology,
    r: int,
):
    """Hierarchical TAR: intra-group aggregate, inter-group aggregate by
    rank, then intra-group broadcast."""
    n = topo.n
    g = topo.group_size or n
    groups = n // g
    gid, lid = divmod(rank, g)
    members = [gid * g + l for l in range(g)]
    rank_peers = [q * g + lid for q in range(groups)]
    entries = np.asarray(entries, dtype=np.float32)
    offs = shard_offsets(len(entries), g)
    my_j = owned_shard(lid, r, g)

    def shard_of(j: int) -> np.ndarray:
        return entries[offs[j] : offs[j + 1]]

    # Phase 1: intra-group send/receive + aggregate (g - 1 rounds).
    if g > 1:
        sched = build_schedule(g, 1)
        expected = {
            members[p]: (my_j, offs[my_j + 1] - offs[my_j])
            for p in range(g)
            if p != lid
        }
        yield OpenStage("p1", 1, expected)
        for rnd in sched.rounds:
            for ldst in rnd[lid]:
                j = owned_shard(ldst, r, g)
                yield SendShard(members[ldst], "p1", j, offs[j], shard_of(j), fan_in=1)
            yield RoundEnd()
        res = yield AwaitStage("p1")
        res_local = StageResult(
            res.outcome,
            {members.index(p): v for p, v in res.data.items()},
            {members.index(p): v for p, v in res.mask.items()},
        )
        local = _mean_received(lid, shard_of(my_j).astype(np.float64), res_local, g)
    else:
        local = shard_of(my_j).copy()

    # Phase 2: inter-group rank-wise send/receive + aggregate (G - 1 rounds).
    if groups > 1:
        sched = build_schedule(groups, 1)
        ln = offs[my_j + 1] - offs[my_j]
        expected = {rank_peers[q]: (my_j, ln) for q in range(groups) if q != gid}
        yield OpenStage("p2", 1, expected)
        for rnd in sched.rounds:
            for qdst in rnd[gid]:
                yield SendShard(rank_peers[qdst], "p2", my_j, offs[my_j], local, fan_in=1)
            yield RoundEnd()
        res = yield AwaitStage("p2")
        res_groups = StageResult(
            res.outcome,
            {rank_peers.index(p): v for p, v in res.data.items()},
            {rank_peers.index(p): v for p, v in res.mask.items()},
        )
        global_shard = _mean_received(gid, local.astype(np.float64), res_groups, groups)
    else:
        global_shard = local

    # Phase 3: intra-group broadcast (g - 1 rounds).
    out = np.zeros(len(entries), dtype=np.float32)
    got = np.zeros(len(entries), dtype=bool)
    out[offs[my_j] : offs[my_j + 1]] = global_shard
    got[offs[my_j] : offs[my_j + 1]] = True
    if g > 1:
        sched = build_schedule(g, 1)
        expected = {}
        for l in range(g):
            if l == lid:
                continue
            j = owned_shard(l, r, g)
            expected[members[l]] = (j, offs[j + 1] - offs[j])
        yield OpenStage("p3", 2, expected)
        for rnd in sched.rounds:
            for ldst in rnd[lid]:
                yield SendShard(
                    members[ldst], "p3", my_j, offs[my_j], global_shard, fan_in=1
                )
            yield RoundEnd()
        res = yield AwaitStage("p3")
        for l in range(g):
            if l == lid:
                continue
            j = owned_shard(l, r, g)
            out[offs[j] : offs[j + 1]] = res.data[members[l]]
            got[offs[j] : offs[j + 1]] = res.mask[members[l]]
    return AllReduceResult(out, got)


def ring_allreduce(rank: int, entries: np.ndarray, topo: Topology):
    """Reduce-scatter + all-gather ring over 2(n-1) rounds.

    Partial sums travel hop by hop, so a dropped chunk is missing from every
    downstream node's aggregate; that accumulation is the behavior under
    test, not a bug.
    """
    n = topo.n
    entries = np.asarray(entries, dtype=np.float32)
    offs = shard_offsets(len(entries), n)
    buf = entries.astype(np.float64)
    prev = (rank - 1) % n
    nxt = (rank + 1) % n

    def chunk(j: int) -> np.ndarray:
        return buf[offs[j] : offs[j + 1]]

    for k in range(n - 1):
        send_j = (rank - k) % n
        recv_j = (rank - k - 1) % n
        key = f"rs{k}"
        yield OpenStage(key, 1, {prev: (recv_j, offs[recv_j + 1] - offs[recv_j])})
        yield SendShard(
            nxt, key, send_j, offs[send_j], chunk(send_j).astype(np.float32), fan_in=1
        )
        res = yield AwaitStage(key)
        chunk(recv_j)[:] += res.data[prev]  # missing entries add zero
        yield RoundEnd()

    for k in range(n - 1):
        send_j = (rank + 1 - k) % n
        recv_j = (rank - k) % n
        key = f"ag{k}"
        yield OpenStage(key, 2, {prev: (recv_j, offs[recv_j + 1] - offs[recv_j])})
        yield SendShard(
            nxt, key, send_j, offs[send_j], chunk(send_j).astype(np.float32), fan_in=1
        )
        res = yield AwaitStage(key)
        m = res.mask[prev]
        chunk(recv_j)[m] = res.data[prev][m]  # keep partial value where dropped
        yield RoundEnd()

    return AllReduceResult(
        (buf / n).astype(np.float32), np.ones(len(entries), dtype=bool)
    )


def ps_allreduce(rank: int, entries: np.ndarray, topo: Topology, server: int):
    """Parameter-server baseline: full-incast gather, average, broadcast."""
    n = topo.n
    entries = np.asarray(entries, dtype=np.float32)
    ln = len(entries)
    if rank == server:
        expected = {p: (0, ln) for p in range(n) if p != server}
        yield OpenStage("gather", 1, expected)
        res = yield AwaitStage("gather")
        mean = _mean_received(rank, entries.astype(np.float64), res, n)
        for dst in range(n):
            if dst != server:
                yield SendShard(dst, "bcast", 0, 0, mean, fan_in=1)
        yield RoundEnd()
        return AllReduceResult(mean, np.ones(ln, dtype=bool))
    yield OpenStage("bcast", 2, {server: (0, ln)})
    yield SendShard(server, "gather", 0, 0, entries, fan_in=n - 1)
    yield RoundEnd()
    res = yield AwaitStage("bcast")
    return AllReduceResult(res.data[server].copy(), res.mask[server].copy())


class CollectiveDeadlock(RuntimeError):
    pass


def run_lossless(generators: list) -> list[np.ndarray]:
    """Reference driver: a perfect in-memory channel with no timing.

    Every send is delivered immediately and completely; stages finish once
    all expected peers have contributed. Used as the lossless-equivalence
    oracle channel and by unit tests.
    """
    n = len(generators)
    results: list = [None] * n
    done = [False] * n
    # (dst, key) -> {"expected": dict | None, "data": {peer: array}}
    stages: dict = {}
    waiting: dict[int, str] = {}

    def stage(dst: int, key: str) -> dict:
        return stages.setdefault((dst, key), {"expected": None, "data": {}})

    def complete(dst: int, key: str) -> bool:
        st = stage(dst, key)
        exp = st["expected"]
        return exp is not None and all(p in st["data"] for p in exp)

    def result_for(dst: int, key: str) -> StageResult:
        st = stages[(dst, key)]
        data, mask = {}, {}
        total = 0
        for p, (_j, cnt) in st["expected"].items():
            arr = st["data"][p]
            data[p] = arr
            mask[p] = np.ones(cnt, dtype=bool)
            total += cnt * 4
        outcome = StageOutcome(
            completion=Completion.ON_TIME,
            elapsed=0.0,
            loss_rate=0.0,
            expected_bytes=total,
            received_bytes=total,
            last_pct_from_all=True,
        )
        return StageResult(outcome, data, mask)

    pending: dict[int, object] = {i: None for i in range(n)}
    while not all(done):
        progress = False
        for i, gen in enumerate(generators):
            if done[i]:
                continue
            if i in waiting:
                if not complete(i, waiting[i]):
                    continue
                pending[i] = result_for(i, waiting.pop(i))
            while True:
                try:
                    cmd = gen.send(pending[i])
                except StopIteration as stop:
                    results[i] = stop.value
                    done[i] = True
                    progress = True
                    break
                pending[i] = None
                if isinstance(cmd, SendShard):
                    stage(cmd.dst, cmd.stage)["data"][i] = np.asarray(
                        cmd.data, dtype=np.float32
                    ).copy()
                elif isinstance(cmd, OpenStage):
                    stage(i, cmd.key)["expected"] = cmd.expected
                elif isinstance(cmd, RoundEnd):
                    pass
                elif isinstance(cmd, AwaitStage):
                    if complete(i, cmd.key):
                        pending[i] = result_for(i, cmd.key)
                        continue
                    waiting[i] = cmd.key
                    progress = True
                    break
                else:
                    raise TypeError(f"unknown channel command {cmd!r}")
        if not progress:
            stuck = {i: waiting.get(i) for i in range(n) if not done[i]}
            raise CollectiveDeadlock(f"no progress; nodes blocked on {stuck}")
    return results
