"""Unreliable-bounded-transport controller state and control-loop rules.

The pieces here are pure and backend-independent: hard-bound calibration,
expected-completion estimation, the moving-average early timeout, the x%
loss-band loop, dynamic incast negotiation, and additive-increase /
multiplicative-decrease rate control. The simulator driver and the datagram
backend both consume them.
"""

from __future__ import annotations

import enum
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

# Loss band the x% loop (and incast negotiation) steers toward.
LOSS_BAND_LOW = 0.0001  # 0.01%
LOSS_BAND_HIGH = 0.001  # 0.1%
HT_ACTIVATION_LOSS = 0.02  # 2%

DEFAULT_ALPHA = 0.95
DEFAULT_X_PCT = 10.0
X_PCT_MIN = 1.0
X_PCT_MAX = 50.0

CALIBRATION_ITERATIONS = 20
CALIBRATION_PERCENTILE = 95

RTT_SAMPLE_EVERY = 10  # every 10th packet

GBIT = 1e9 / 8  # bytes/sec


class CalibrationError(ValueError):
    pass


class Completion(enum.Enum):
    ON_TIME = "on_time"
    EARLY_TIMEOUT = "early_timeout"
    HARD_TIMEOUT = "hard_timeout"


@dataclass
class StageOutcome:
    completion: Completion
    elapsed: float
    loss_rate: float
    expected_bytes: int = 0
    received_bytes: int = 0
    last_pct_from_all: bool = False


@dataclass
class TimeoutState:
    t_b: float
    t_c_stage1: float = 0.0
    t_c_stage2: float = 0.0
    alpha: float = DEFAULT_ALPHA
    x_pct: float = DEFAULT_X_PCT

    def __post_init__(self):
        self.t_c_stage1 = min(self.t_c_stage1, self.t_b)
        self.t_c_stage2 = min(self.t_c_stage2, self.t_b)
        self.x_pct = min(max(self.x_pct, X_PCT_MIN), X_PCT_MAX)

    def t_c(self, stage_kind: int) -> float:
        return self.t_c_stage1 if stage_kind == 1 else self.t_c_stage2

    def set_t_c(self, stage_kind: int, value: float) -> None:
        value = min(value, self.t_b)
        if stage_kind == 1:
            self.t_c_stage1 = value
        else:
            self.t_c_stage2 = value


@dataclass
class IncastState:
    i_factor: int = 1
    advertised: int = 1


@dataclass
class RateState:
    rate: float = 1.0 * GBIT  # bytes/sec
    last_rtt: float = 0.0
    t_low: float = 25e-6
    t_high: float = 250e-6
    add_step: float = 50e6 / 8  # 50 Mbit/s in bytes/sec
    beta: float = 0.5

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if not self.t_low < self.t_high:
            raise ValueError("t_low must be below t_high")


def calibrate_t_b(samples: list[float]) -> float:
    """Nearest-rank 95th percentile of pooled reliable-run stage times."""
    if not samples:
        raise CalibrationError("no calibration samples")
    ordered = sorted(samples)
    rank = -(-CALIBRATION_PERCENTILE * len(ordered) // 100)  # ceil
    return ordered[rank - 1]


def expected_completion(outcome: StageOutcome, t_b: float) -> float:
    """Per-stage completion estimate feeding the t_C moving average."""
    if outcome.completion is Completion.ON_TIME:
        return outcome.elapsed
    if outcome.completion is Completion.HARD_TIMEOUT:
        return t_b
    # Early timeout: extrapolate from the fraction of bytes that made it.
    if outcome.received_bytes <= 0:
        return t_b
    return outcome.elapsed * outcome.expected_bytes / outcome.received_bytes


def fold_t_c(local_estimates: list[float], prev_t_c: float, alpha: float) -> float:
    """Median of the per-node estimates, blended into the moving average.

    The first fold (prev_t_c <= 0) seeds the average with the median itself.
    Even-length lists use the lower median.
    """
    if not local_estimates:
        return prev_t_c
    ordered = sorted(local_estimates)
    med = ordered[(len(ordered) - 1) // 2]
    if prev_t_c <= 0:
        return med
    return alpha * med + (1.0 - alpha) * prev_t_c


def adjust_x_pct(x: float, loss_rate: float) -> float:
    """Double above the band (capped at 50), step down by 1 below it."""
    if loss_rate > LOSS_BAND_HIGH:
        return min(2.0 * x, X_PCT_MAX)
    if loss_rate < LOSS_BAND_LOW:
        return max(x - 1.0, X_PCT_MIN)
    return x


def maybe_activate_ht(loss_rate: float) -> bool:
    """Strictly above 2% turns the Hadamard codec on (and it latches)."""
    return loss_rate > HT_ACTIVATION_LOSS


def adjust_incast(
    state: IncastState, loss_rate: float, timeout_occurred: bool, n: int
) -> IncastState:
    """Unit steps: back off on loss/timeouts, probe upward when quiet."""
    i = state.i_factor
    if loss_rate > LOSS_BAND_HIGH or timeout_occurred:
        i = max(1, i - 1)
    elif loss_rate < LOSS_BAND_LOW and not timeout_occurred:
        i = min(n - 1, i + 1)
    return IncastState(i_factor=i, advertised=i)


def effective_incast(adverts: list[int]) -> int:
    """A sender honors the smallest incast factor its receivers report."""
    if not adverts:
        return 1
    return max(1, min(adverts))


def rate_update(state: RateState, rtt: float) -> RateState:
    if rtt <= 0:
        return state  # sample discarded
    if rtt < state.t_low:
        new_rate = state.rate + state.add_step
    elif rtt > state.t_high:
        new_rate = state.rate * (1.0 - state.beta * (1.0 - state.t_high / rtt))
    else:
        new_rate = state.rate
    return replace(state, rate=new_rate, last_rtt=rtt)


@dataclass
class UbtController:
    """Per-node transport controller; mutated only by that node's task."""

    n: int
    timeouts: TimeoutState
    incast: IncastState = field(default_factory=IncastState)
    rate: RateState = field(default_factory=RateState)
    ht_active: bool = False
    _pkt_counter: int = 0

    def early_wait(self, stage_kind: int) -> float:
        """Drain-wait before early expiry: x% of the stage's t_C."""
        t_c = self.timeouts.t_c(stage_kind)
        if t_c <= 0:
            t_c = self.timeouts.t_b
        return (self.timeouts.x_pct / 100.0) * t_c

    def observe_rtt(self, rtt: float) -> None:
        self._pkt_counter += 1
        if self._pkt_counter % RTT_SAMPLE_EVERY == 0:
            self.rate = rate_update(self.rate, rtt)

    def fold_stage_t_c(self, stage_kind: int, node_estimates: list[float]) -> None:
        prev = self.timeouts.t_c(stage_kind)
        self.timeouts.set_t_c(
            stage_kind, fold_t_c(node_estimates, prev, self.timeouts.alpha)
        )

    def end_generation(self, loss_rate: float, timeout_occurred: bool) -> None:
        """Runs the x%/incast/HT control loops on the generation's loss."""
        self.timeouts.x_pct = adjust_x_pct(self.timeouts.x_pct, loss_rate)
        self.incast = adjust_incast(self.incast, loss_rate, timeout_occurred, self.n)
        if maybe_activate_ht(loss_rate):
            self.ht_active = True  # latches for the remainder of the job
