"""Randomized Hadamard codec for dispersing the effect of dropped entries.

Encoding multiplies the (zero-padded) bucket by (1/sqrt(d)) * H * D, where H
is the d x d Walsh-Hadamard matrix and D a seeded Rademacher diagonal. A
dropped coordinate of the transformed vector then perturbs every original
entry slightly instead of wiping one out, and rescaling by d/received gives
an unbiased reconstruction under uniform drops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptyReceptionError(RuntimeError):
    """Nothing arrived; the caller should consult the safeguards policy."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    if n <= 1:
        return 1
    return 1 << (n - 1).bit_length()


def derive_seed(job_seed: int, bucket_id: int, generation: int) -> int:
    """Per-(bucket, generation) seed so sender and receiver agree on D."""
    ss = np.random.SeedSequence([int(job_seed), int(bucket_id), int(generation)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class RhtContext:
    dim: int
    seed: int
    orig_len: int
    signs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not _is_pow2(self.dim):
            raise ValueError(f"dim must be a power of two, got {self.dim}")
        if self.orig_len > self.dim:
            raise ValueError("orig_len exceeds padded dim")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))
        signs = rng.integers(0, 2, size=self.dim).astype(np.float64) * 2.0 - 1.0
        object.__setattr__(self, "signs", signs)

    @classmethod
    def for_length(cls, orig_len: int, seed: int) -> "RhtContext":
        return cls(dim=next_pow2(orig_len), seed=seed, orig_len=orig_len)


@dataclass
class DropMask:
    """Per-entry reception flags for a transformed vector (True = arrived)."""

    received: np.ndarray

    def __post_init__(self):
        self.received = np.asarray(self.received, dtype=bool)

    @property
    def received_count(self) -> int:
        return int(self.received.sum())

    @classmethod
    def full(cls, dim: int) -> "DropMask":
        return cls(np.ones(dim, dtype=bool))


def fwht_in_place(v: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform (in place, O(d log d))."""
    v = np.ascontiguousarray(v)
    d = len(v)
    if not _is_pow2(d):
        raise ValueError(f"length must be a power of two, got {d}")
    h = 1
    while h < d:
        blocks = v.reshape(-1, 2 * h)
        a = blocks[:, :h].copy()
        b = blocks[:, h:]
        blocks[:, :h] = a + b
        blocks[:, h:] = a - b
        h *= 2
    return v


def rht_encode(x: np.ndarray, ctx: RhtContext) -> np.ndarray:
    """y = (1/sqrt(dim)) * H * D * pad(x); orthonormal, so norms match."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) != ctx.orig_len:
        raise ValueError(f"expected {ctx.orig_len} entries, got {len(x)}")
    padded = np.zeros(ctx.dim, dtype=np.float64)
    padded[: ctx.orig_len] = x
    y = fwht_in_place(padded * ctx.signs)
    y /= np.sqrt(ctx.dim)
    return y


def rht_decode(y_recv: np.ndarray, mask: DropMask, ctx: RhtContext) -> np.ndarray:
    """Reconstruct the original entries from a partially received transform.

    Missing entries of y_recv must be zero-filled. The d/received rescale
    makes the estimate unbiased under a uniformly random drop mask.
    """
    y_recv = np.asarray(y_recv, dtype=np.float64)
    if len(y_recv) != ctx.dim:
        raise ValueError(f"expected {ctx.dim} entries, got {len(y_recv)}")
    if len(mask.received) != ctx.dim:
        raise ValueError("drop mask length does not match dim")
    received = mask.received_count
    if received == 0:
        raise EmptyReceptionError("no transformed entries received")
    scale = ctx.dim / received
    y = np.where(mask.received, y_recv, 0.0) * scale
    x = ctx.signs * fwht_in_place(y)  # H is symmetric, H^T = H
    x /= np.sqrt(ctx.dim)
    return x[: ctx.orig_len]


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared componentwise difference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
