"""Round-robin pair schedules and round-count arithmetic for the collectives.

In stage-round k, node i sends to nodes (i + kI + 1 .. i + kI + I) mod n,
clipped so each sender talks to exactly n-1 distinct partners per stage.
Every ordered pair therefore appears exactly once per stage, no pair repeats
across rounds, and each receiver hears from at most I senders per round.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Topology:
    n: int
    group_size: int = 0  # 0 means ungrouped (flat)
    self_index: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 nodes")
        if self.group_size:
            if self.n % self.group_size != 0:
                raise ValueError("group_size must divide n")

    @property
    def groups(self) -> int:
        return self.n // self.group_size if self.group_size else 1


@dataclass
class RotationIndex:
    """Global shard-responsibility index, advanced once per generation."""

    r: int = 0

    def advanced(self, n: int) -> "RotationIndex":
        return RotationIndex((self.r + 1) % n)


def shard_owner(shard_index: int, r: int, n: int) -> int:
    """Node responsible for aggregating a shard in the current generation."""
    return (shard_index + r) % n


def owned_shard(node: int, r: int, n: int) -> int:
    """Shard index a node is responsible for (inverse of shard_owner)."""
    return (node - r) % n


@dataclass(frozen=True)
class PairSchedule:
    rounds: tuple  # tuple of dicts sender -> tuple(receivers)
    incast: int
    n: int

    def fan_in(self, round_index: int) -> int:
        """Max concurrent senders any receiver sees in the given round."""
        counts: dict[int, int] = {}
        for _, dsts in self.rounds[round_index].items():
            for d in dsts:
                counts[d] = counts.get(d, 0) + 1
        return max(counts.values(), default=0)


def build_schedule(n: int, incast: int) -> PairSchedule:
    """Non-repeating round-robin schedule: ceil((n-1)/I) rounds per stage."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if not 1 <= incast <= n - 1:
        raise ValueError(f"incast factor must be in [1, {n - 1}], got {incast}")
    n_rounds = -(-(n - 1) // incast)
    rounds = []
    for k in range(n_rounds):
        offsets = range(k * incast + 1, min(k * incast + incast, n - 1) + 1)
        rounds.append({i: tuple((i + o) % n for o in offsets) for i in range(n)})
    return PairSchedule(rounds=tuple(rounds), incast=incast, n=n)


def rounds_count(n: int, variant: str, groups: int = 1, incast: int = 1) -> int:
    """Total send(bcast)/receive rounds for one AllReduce.

    tar:   2 * ceil((n-1)/I)
    tar2d: 2 * (n/G - 1) + (G - 1)     (I = 1 within phases)
    ring:  2 * (n - 1)
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if variant == "tar":
        if not 1 <= incast <= n - 1:
            raise ValueError("incast factor out of range")
        return 2 * (-(-(n - 1) // incast))
    if variant == "tar2d":
        if groups < 1 or n % groups != 0:
            raise ValueError("groups must divide n")
        g = n // groups
        return 2 * (g - 1) + (groups - 1)
    if variant == "ring":
        return 2 * (n - 1)
    if variant == "ps":
        return 2  # gather + broadcast, both full-incast
    raise ValueError(f"unknown variant {variant!r}")
