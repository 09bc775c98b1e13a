"""Unreliable-datagram backend: runs the same collectives over real UDP.

This is the wall-clock counterpart of the simulator driver. Each node binds
one socket; stage packets are demultiplexed by the stage kind carried in the
header's bucket_id field. Loss can be injected on the send side with a
seeded drop proxy so tests get reproducible packet loss on loopback.
"""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass, field

import numpy as np

from .collectives import AwaitStage, OpenStage, RoundEnd, SendShard, StageResult
from .transport import Completion, StageOutcome
from .wire import HEADER_LEN, MAX_PAYLOAD, decode_header, encode_header, iter_packets

ENTRY_BYTES = 4


class DatagramTimeout(Exception):
    pass


@dataclass
class _RxStage:
    kind: int
    expected: dict
    open_time: float
    buf: dict = field(default_factory=dict)
    mask: dict = field(default_factory=dict)
    expected_bytes: int = 0
    received_bytes: int = 0
    last_seen: set = field(default_factory=set)
    last_arrival: float = 0.0

    def complete(self) -> bool:
        return self.received_bytes >= self.expected_bytes


class DatagramEndpoint:
    """One rank of a UDP collective.

    addrs maps rank -> (host, port). drop_prob applies a deterministic
    send-side coin flip per packet (the "unreliable" in loopback tests).
    """

    def __init__(
        self,
        rank: int,
        addrs: dict,
        t_b: float = 1.0,
        x_pct: float = 10.0,
        t_c: float | None = None,
        drop_prob: float = 0.0,
        seed: int = 0,
        max_payload: int = MAX_PAYLOAD,
    ):
        self.rank = rank
        self.addrs = dict(addrs)
        self.addr_to_rank = {tuple(a): r for r, a in self.addrs.items()}
        self.t_b = t_b
        self.x_pct = x_pct
        self.t_c = t_c if t_c is not None else t_b
        self.drop_prob = drop_prob
        self.max_payload = max_payload
        self.rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed, rank]))
        )
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(tuple(self.addrs[rank]))
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        self.stages: dict[int, _RxStage] = {}
        self._early: dict[int, list] = {}  # kind -> packets seen pre-open
        self.outcomes: list[tuple[int, StageOutcome]] = []

    def close(self) -> None:
        self.sock.close()

    # -- driving a collective -------------------------------------------------

    def run(self, gen):
        """Drive a collective generator to completion; returns its result."""
        value = None
        while True:
            try:
                cmd = gen.send(value)
            except StopIteration as stop:
                return stop.value
            value = None
            if isinstance(cmd, SendShard):
                self._send(cmd)
            elif isinstance(cmd, OpenStage):
                self._open(cmd)
            elif isinstance(cmd, RoundEnd):
                pass  # real sockets pace themselves
            elif isinstance(cmd, AwaitStage):
                value = self._await(cmd.key)
            else:
                raise TypeError(f"unknown channel command {cmd!r}")

    @staticmethod
    def _stage_kind(key: str) -> int:
        # TAR stage keys are "s1"/"s2"; only one stage per kind may be live
        # at a time, so the kind doubles as the wire-level demux tag.
        return 1 if key.endswith("1") else 2

    def _send(self, cmd: SendShard) -> None:
        data = np.ascontiguousarray(cmd.data, dtype=np.float32).tobytes()
        kind = self._stage_kind(cmd.stage)
        dest = tuple(self.addrs[cmd.dst])
        # offsets on the wire are relative to the shard being sent; the
        # receiver indexes its per-peer shard buffer directly
        for header, payload in iter_packets(
            kind,
            data,
            max_payload=self.max_payload,
        ):
            if self.drop_prob > 0 and self.rng.random() < self.drop_prob:
                continue
            self.sock.sendto(encode_header(header) + payload, dest)

    def _open(self, cmd: OpenStage) -> None:
        st = _RxStage(kind=cmd.kind, expected=dict(cmd.expected), open_time=time.monotonic())
        for peer, (_shard, n_entries) in st.expected.items():
            st.buf[peer] = np.zeros(n_entries, dtype=np.float32)
            st.mask[peer] = np.zeros(n_entries, dtype=bool)
            st.expected_bytes += n_entries * ENTRY_BYTES
        self.stages[cmd.kind] = st
        # a faster peer may have finished the previous stage and started
        # sending before we opened; replay anything that arrived early
        for packet, src in self._early.pop(cmd.kind, []):
            self._ingest(packet, src)

    def _ingest(self, packet: bytes, src_addr) -> None:
        header = decode_header(packet[:HEADER_LEN])
        st = self.stages.get(header.bucket_id)
        peer = self.addr_to_rank.get(tuple(src_addr))
        if st is None:
            if peer is not None:
                self._early.setdefault(header.bucket_id, []).append(
                    (packet, src_addr)
                )
            return
        if peer not in st.buf:
            return
        payload = np.frombuffer(packet[HEADER_LEN:], dtype=np.float32)
        off = header.byte_offset // ENTRY_BYTES
        buf = st.buf[peer]
        mask = st.mask[peer]
        hi = min(off + len(payload), len(buf))
        if hi <= off:
            return
        newly = int(hi - off) - int(mask[off:hi].sum())
        buf[off:hi] = payload[: hi - off]
        mask[off:hi] = True
        st.received_bytes += newly * ENTRY_BYTES
        st.last_arrival = time.monotonic()
        if header.last_percentile:
            st.last_seen.add(peer)

    def _await(self, key: str) -> StageResult:
        kind = self._stage_kind(key)
        st = self.stages[kind]
        grace = self.x_pct / 100.0 * self.t_c
        completion = Completion.HARD_TIMEOUT
        while True:
            now = time.monotonic()
            if st.complete():
                completion = Completion.ON_TIME
                break
            hard_left = st.open_time + self.t_b - now
            if hard_left <= 0:
                completion = Completion.HARD_TIMEOUT
                break
            early_ready = st.expected and all(
                p in st.last_seen for p in st.expected
            )
            if early_ready and now - max(st.last_arrival, st.open_time) >= grace:
                completion = Completion.EARLY_TIMEOUT
                break
            wait = hard_left if not early_ready else min(hard_left, grace / 4)
            self.sock.settimeout(max(wait, 1e-4))
            try:
                packet, src = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            self._ingest(packet, src)
        elapsed = time.monotonic() - st.open_time
        outcome = StageOutcome(
            completion=completion,
            elapsed=elapsed,
            loss_rate=(
                1.0 - st.received_bytes / st.expected_bytes
                if st.expected_bytes
                else 0.0
            ),
            expected_bytes=st.expected_bytes,
            received_bytes=st.received_bytes,
            last_pct_from_all=bool(st.expected)
            and all(p in st.last_seen for p in st.expected),
        )
        self.outcomes.append((kind, outcome))
        return StageResult(outcome, dict(st.buf), dict(st.mask))
