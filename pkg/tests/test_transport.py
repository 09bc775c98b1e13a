import math

import pytest

from ubar.transport import (
    CALIBRATION_ITERATIONS,
    Completion,
    IncastState,
    RateState,
    StageOutcome,
    TimeoutState,
    UbtController,
    adjust_incast,
    adjust_x_pct,
    calibrate_t_b,
    effective_incast,
    expected_completion,
    fold_t_c,
    maybe_activate_ht,
    rate_update,
)


def outcome(completion, elapsed, expected=100, received=100):
    return StageOutcome(
        completion=completion,
        elapsed=elapsed,
        loss_rate=1 - received / expected,
        expected_bytes=expected,
        received_bytes=received,
        last_pct_from_all=True,
    )


# -- t_B calibration ----------------------------------------------------------


def test_calibrate_t_b_nearest_rank():
    times = [float(v) for v in range(1, 101)]  # 1..100
    assert calibrate_t_b(times) == 95.0


def test_calibrate_t_b_small_sample():
    assert calibrate_t_b([5.0, 5.0, 5.0, 100.0]) == 100.0


def test_calibrate_t_b_order_invariant():
    import random

    times = [float(v) for v in range(1, 101)]
    random.Random(0).shuffle(times)
    assert calibrate_t_b(times) == 95.0


def test_calibration_iteration_count():
    assert CALIBRATION_ITERATIONS == 20


# -- expected completion ------------------------------------------------------


def test_expected_completion_on_time_uses_elapsed():
    o = outcome(Completion.ON_TIME, 7.0)
    assert expected_completion(o, t_b=10.0) == 7.0


def test_expected_completion_hard_timeout_is_t_b():
    o = outcome(Completion.HARD_TIMEOUT, 10.0, expected=100, received=40)
    assert expected_completion(o, t_b=10.0) == 10.0


def test_expected_completion_early_extrapolates():
    # 9ms with 90% received extrapolates to exactly 10ms
    o = outcome(Completion.EARLY_TIMEOUT, 9e-3, expected=100, received=90)
    assert math.isclose(expected_completion(o, t_b=1.0), 10e-3)


def test_expected_completion_nothing_received_falls_back():
    o = outcome(Completion.EARLY_TIMEOUT, 1.0, expected=100, received=0)
    assert expected_completion(o, t_b=42.0) == 42.0


# -- t_C folding ---------------------------------------------------------------


def test_fold_t_c_ema():
    # alpha=0.95: 0.95*median + 0.05*previous
    got = fold_t_c([10.0, 10.0, 10.0], prev_t_c=20.0, alpha=0.95)
    assert math.isclose(got, 10.5)


def test_fold_t_c_uses_median_across_nodes():
    got = fold_t_c([1.0, 100.0, 3.0], prev_t_c=0.0, alpha=1.0)
    assert got == 3.0


def test_fold_t_c_seeds_from_first_sample():
    assert fold_t_c([8.0], prev_t_c=0.0, alpha=0.95) == 8.0


def test_t_c_never_exceeds_t_b():
    ts = TimeoutState(t_b=1.0, t_c_stage1=0.5, t_c_stage2=0.5)
    ts.set_t_c(1, 5.0)
    assert ts.t_c(1) == 1.0


# -- x% grace loop --------------------------------------------------------------


def test_x_pct_doubles_on_high_loss():
    assert adjust_x_pct(10.0, loss_rate=0.02) == 20.0


def test_x_pct_decrements_on_low_loss():
    assert adjust_x_pct(10.0, loss_rate=0.00005) == 9.0


def test_x_pct_holds_in_band():
    assert adjust_x_pct(10.0, loss_rate=0.0005) == 10.0


def test_x_pct_caps():
    assert adjust_x_pct(40.0, loss_rate=0.02) == 50.0
    assert adjust_x_pct(1.0, loss_rate=0.0) == 1.0


# -- hadamard activation ---------------------------------------------------------


def test_ht_activates_strictly_above_two_percent():
    assert maybe_activate_ht(0.021) is True
    assert maybe_activate_ht(0.020) is False
    assert maybe_activate_ht(0.0) is False


def test_ht_latches_on():
    c = UbtController(n=4, timeouts=TimeoutState(t_b=1.0))
    c.end_generation(loss_rate=0.05, timeout_occurred=True)
    assert c.ht_active
    c.end_generation(loss_rate=0.0, timeout_occurred=False)
    assert c.ht_active  # stays on once triggered


# -- dynamic incast ---------------------------------------------------------------


def test_incast_advert_steps_up_on_clean_generation():
    st = IncastState(i_factor=2, advertised=2)
    out = adjust_incast(st, loss_rate=0.0, timeout_occurred=False, n=8)
    assert out.advertised == 3


def test_incast_advert_steps_down_on_loss():
    st = IncastState(i_factor=3, advertised=3)
    out = adjust_incast(st, loss_rate=0.02, timeout_occurred=True, n=8)
    assert out.advertised == 2


def test_incast_bounded():
    st = IncastState(i_factor=1, advertised=1)
    out = adjust_incast(st, loss_rate=0.5, timeout_occurred=True, n=8)
    assert out.advertised == 1
    st = IncastState(i_factor=7, advertised=7)
    out = adjust_incast(st, loss_rate=0.0, timeout_occurred=False, n=8)
    assert out.advertised == 7  # capped at n-1


def test_effective_incast_is_min_of_adverts():
    assert effective_incast([3, 2, 4]) == 2
    assert effective_incast([5]) == 5


# -- rate control -------------------------------------------------------------------


def test_rate_additive_increase_below_t_low():
    rs = RateState(rate=1e9 / 8)
    out = rate_update(rs, rtt=20e-6)
    assert math.isclose(out.rate, 1.05e9 / 8)


def test_rate_multiplicative_decrease_above_t_high():
    rs = RateState(rate=1e9 / 8)
    out = rate_update(rs, rtt=500e-6)
    # 1 - 0.5*(1 - 250/500) = 0.75
    assert math.isclose(out.rate, 0.75e9 / 8)


def test_rate_dead_band_no_change():
    rs = RateState(rate=1e9 / 8)
    out = rate_update(rs, rtt=100e-6)
    assert out.rate == rs.rate


def test_rate_stays_positive():
    rs = RateState(rate=1e5)
    for _ in range(50):
        rs = rate_update(rs, rtt=10.0)
    assert rs.rate > 0


# -- controller glue ------------------------------------------------------------------


def test_controller_early_wait_scales_with_x_pct():
    c = UbtController(
        n=4, timeouts=TimeoutState(t_b=1.0, t_c_stage1=0.5, t_c_stage2=0.25, x_pct=10.0)
    )
    assert math.isclose(c.early_wait(1), 0.05)
    assert math.isclose(c.early_wait(2), 0.025)


def test_controller_rtt_sampled_every_tenth_packet():
    c = UbtController(n=4, timeouts=TimeoutState(t_b=1.0), rate=RateState(rate=1e9 / 8))
    for _ in range(9):
        c.observe_rtt(20e-6)
    assert c.rate.rate == 1e9 / 8  # not yet sampled
    c.observe_rtt(20e-6)  # 10th packet
    assert c.rate.rate > 1e9 / 8


def test_controller_generation_loop_updates_everything():
    c = UbtController(n=8, timeouts=TimeoutState(t_b=1.0, x_pct=10.0))
    c.end_generation(loss_rate=0.05, timeout_occurred=True)
    assert c.timeouts.x_pct == 20.0
    assert c.ht_active  # 5% > 2%
    assert c.incast.advertised == 1
