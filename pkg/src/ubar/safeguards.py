"""Loss monitor: accept, skip, or halt on excessive per-generation loss.

A generation whose loss exceeds the skip threshold is discarded (the model
update is not applied anywhere, so parameters stay bit-identical). Halting
requires `window` consecutive generations above the halt threshold, so a
single spike never stops a job.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Action(enum.Enum):
    ACCEPT = "accept"
    SKIP_UPDATE = "skip_update"
    HALT = "halt"


@dataclass(frozen=True)
class SafeguardPolicy:
    skip_threshold: float = 0.02  # aligned with the HT activation threshold
    halt_threshold: float = 0.30
    window: int = 3

    def __post_init__(self):
        if not 0.0 < self.skip_threshold <= self.halt_threshold <= 1.0:
            raise ValueError("need 0 < skip_threshold <= halt_threshold <= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class LossHistory:
    consecutive_above_halt: int = 0
    losses: list = field(default_factory=list)


def assess(loss_rate: float, policy: SafeguardPolicy, history: LossHistory) -> Action:
    """Classify one generation's loss and update the violation streak."""
    if not 0.0 <= loss_rate <= 1.0:
        raise ValueError(f"loss rate out of range: {loss_rate}")
    history.losses.append(loss_rate)
    if loss_rate > policy.halt_threshold:
        history.consecutive_above_halt += 1
        if history.consecutive_above_halt >= policy.window:
            return Action.HALT
        return Action.SKIP_UPDATE
    history.consecutive_above_halt = 0
    if loss_rate > policy.skip_threshold:
        return Action.SKIP_UPDATE
    return Action.ACCEPT
