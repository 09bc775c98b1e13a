"""Packet header codec and bucket/shard framing.

The 9-byte header travels in front of every gradient payload, on both the
simulated channel and the real datagram backend. All multi-byte fields are
big-endian. Layout:

    bucket_id   u16   which in-flight bucket the payload belongs to
    byte_offset u32   offset of the payload into the bucket's byte stream
    timeout     u8    quantized completion-time report (1/255 of t_B)
    flags       u8    bit 0: last-percentile tag; bits 1-7: incast advert
    reserved    u8    must be zero
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

HEADER_LEN = 9
MAX_PAYLOAD = 1400  # gradient bytes per datagram, stays under common MTUs
ENTRY_BYTES = 4  # float32 gradient entries

_HEADER_STRUCT = struct.Struct(">HIBBB")


class HeaderError(ValueError):
    """Raised for out-of-range header fields or truncated input."""


class AssemblyError(ValueError):
    """Raised when a shard set cannot be reassembled into a bucket."""


@dataclass(frozen=True)
class PacketHeader:
    bucket_id: int
    byte_offset: int
    timeout_share: int = 0
    last_percentile: bool = False
    incast: int = 0  # 0 means "unchanged"

    def __post_init__(self):
        if not 0 <= self.bucket_id <= 0xFFFF:
            raise HeaderError(f"bucket_id out of u16 range: {self.bucket_id}")
        if not 0 <= self.byte_offset <= 0xFFFFFFFF:
            raise HeaderError(f"byte_offset out of u32 range: {self.byte_offset}")
        if not 0 <= self.timeout_share <= 0xFF:
            raise HeaderError(f"timeout_share out of u8 range: {self.timeout_share}")
        if not 0 <= self.incast <= 127:
            raise HeaderError(f"incast advert must fit in 7 bits: {self.incast}")


def encode_header(h: PacketHeader) -> bytes:
    """Serialize a header to exactly 9 bytes (big-endian, reserved byte 0)."""
    flags = (int(bool(h.last_percentile))) | (h.incast << 1)
    return _HEADER_STRUCT.pack(h.bucket_id, h.byte_offset, h.timeout_share, flags, 0)


def decode_header(b: bytes) -> PacketHeader:
    """Inverse of :func:`encode_header`; trailing payload bytes are ignored."""
    if len(b) < HEADER_LEN:
        raise HeaderError(f"need {HEADER_LEN} header bytes, got {len(b)}")
    bucket_id, byte_offset, timeout_share, flags, reserved = _HEADER_STRUCT.unpack_from(b)
    if reserved != 0:
        raise HeaderError(f"reserved header byte must be zero, got {reserved}")
    return PacketHeader(
        bucket_id=bucket_id,
        byte_offset=byte_offset,
        timeout_share=timeout_share,
        last_percentile=bool(flags & 1),
        incast=flags >> 1,
    )


def quantize_timeout(t: float, t_b: float) -> int:
    """Quantize a duration to 1/255 units of the advertised hard bound."""
    if t_b <= 0:
        return 0
    return min(255, max(0, round(255.0 * t / t_b)))


def dequantize_timeout(share: int, t_b: float) -> float:
    return (share / 255.0) * t_b


@dataclass
class GradientBucket:
    """A fixed-length vector of float32 gradient entries; one AllReduce unit."""

    bucket_id: int
    entries: np.ndarray
    generation: int = 0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float32)
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("gradient entries must be finite on ingest")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def byte_length(self) -> int:
        return len(self.entries) * ENTRY_BYTES


@dataclass
class Shard:
    """One of N contiguous slices of a bucket."""

    origin_node: int
    shard_index: int
    slice: np.ndarray
    entry_offset: int = 0
    bucket_id: int = 0
    generation: int = 0


def shard_lengths(length: int, n: int) -> list[int]:
    """Ceiling-split: the first (length mod n) shards get one extra entry."""
    if n < 1:
        raise ValueError("node count must be >= 1")
    base, extra = divmod(length, n)
    return [base + 1 if j < extra else base for j in range(n)]


def shard_offsets(length: int, n: int) -> list[int]:
    offs = [0]
    for ln in shard_lengths(length, n):
        offs.append(offs[-1] + ln)
    return offs  # n + 1 fence posts


def partition_bucket(bkt: GradientBucket, n: int, origin_node: int = 0) -> list[Shard]:
    """Split a bucket into n contiguous shards that partition it exactly."""
    lens = shard_lengths(len(bkt.entries), n)
    shards = []
    off = 0
    for j, ln in enumerate(lens):
        shards.append(
            Shard(
                origin_node=origin_node,
                shard_index=j,
                slice=bkt.entries[off : off + ln],
                entry_offset=off,
                bucket_id=bkt.bucket_id,
                generation=bkt.generation,
            )
        )
        off += ln
    return shards


def concat_shards(shards: list[Shard]) -> GradientBucket:
    """Reassemble shards (in any order) into the original bucket."""
    if not shards:
        raise AssemblyError("no shards to assemble")
    n = len(shards)
    by_index: dict[int, Shard] = {}
    for s in shards:
        if s.shard_index in by_index:
            raise AssemblyError(f"duplicate shard index {s.shard_index}")
        by_index[s.shard_index] = s
    missing = [j for j in range(n) if j not in by_index]
    if missing:
        raise AssemblyError(f"missing shard indices {missing}")
    entries = np.concatenate([by_index[j].slice for j in range(n)])
    first = by_index[0]
    return GradientBucket(
        bucket_id=first.bucket_id, entries=entries, generation=first.generation
    )


def packets_for_bytes(n_bytes: int, max_payload: int = MAX_PAYLOAD) -> int:
    """Number of datagrams needed to carry n_bytes of gradient payload."""
    if n_bytes <= 0:
        return 0
    return -(-n_bytes // max_payload)


def iter_packets(
    bucket_id: int,
    data: bytes,
    base_offset: int = 0,
    max_payload: int = MAX_PAYLOAD,
    timeout_share: int = 0,
    incast: int = 0,
):
    """Frame a byte stream into (header, payload) datagrams.

    The final 1% of a stream's packets (at least the last one) carry the
    last-percentile tag.
    """
    total = packets_for_bytes(len(data), max_payload)
    tagged_from = total - max(1, total // 100)
    for k in range(total):
        lo = k * max_payload
        payload = data[lo : lo + max_payload]
        header = PacketHeader(
            bucket_id=bucket_id,
            byte_offset=base_offset + lo,
            timeout_share=timeout_share,
            last_percentile=k >= tagged_from,
            incast=incast,
        )
        yield header, payload
