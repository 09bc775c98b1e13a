import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from ubar.hadamard import (
    DropMask,
    EmptyReceptionError,
    RhtContext,
    derive_seed,
    fwht_in_place,
    mse,
    next_pow2,
    rht_decode,
    rht_encode,
)


def test_next_pow2():
    assert next_pow2(1) == 1
    assert next_pow2(2) == 2
    assert next_pow2(3) == 4
    assert next_pow2(4096) == 4096
    assert next_pow2(4097) == 8192


def test_fwht_h2_base_cases():
    x = np.array([1.0, 0.0])
    fwht_in_place(x)
    np.testing.assert_allclose(x, [1.0, 1.0])
    y = np.array([0.0, 1.0])
    fwht_in_place(y)
    np.testing.assert_allclose(y, [1.0, -1.0])


@pytest.mark.parametrize("dim", [2, 4, 8, 16, 32, 64, 128])
def test_fwht_matches_dense_hadamard(dim):
    # scipy's Sylvester construction is the independent oracle
    h = scipy.linalg.hadamard(dim).astype(np.float64)
    rng = np.random.default_rng(dim)
    x = rng.standard_normal(dim)
    got = x.copy()
    fwht_in_place(got)
    np.testing.assert_allclose(got, h @ x, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("dim", [2, 4, 16, 64])
def test_encode_matches_dense_construction(dim):
    ctx = RhtContext.for_length(dim, seed=99)
    h = scipy.linalg.hadamard(dim).astype(np.float64)
    d = np.diag(ctx.signs.astype(np.float64))
    rng = np.random.default_rng(7)
    x = rng.standard_normal(dim)
    want = (h @ d @ x) / np.sqrt(dim)
    np.testing.assert_allclose(rht_encode(x, ctx), want, rtol=1e-9, atol=1e-12)


def test_encode_is_orthonormal():
    ctx = RhtContext.for_length(1024, seed=5)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(1024)
    y = rht_encode(x, ctx)
    assert abs(np.linalg.norm(y) - np.linalg.norm(x)) < 1e-5 * np.linalg.norm(x)


def test_encode_zero_is_zero():
    ctx = RhtContext.for_length(16, seed=0)
    np.testing.assert_array_equal(rht_encode(np.zeros(16), ctx), np.zeros(16))


@pytest.mark.parametrize("length", [2, 3, 5, 17, 100, 1000, 2048, 4095, 4096])
def test_roundtrip_no_loss(length):
    ctx = RhtContext.for_length(length, seed=length)
    rng = np.random.default_rng(length)
    x = rng.standard_normal(length)
    y = rht_encode(x, ctx)
    back = rht_decode(y, DropMask.full(ctx.dim), ctx)
    np.testing.assert_allclose(back[:length], x, rtol=1e-6, atol=1e-9)


def test_padded_tail_roundtrip():
    # padding carries transformed signal and must vanish after decode
    ctx = RhtContext.for_length(5, seed=1)
    assert ctx.dim == 8
    x = np.arange(5, dtype=np.float64)
    y = rht_encode(x, ctx)
    assert len(y) == 8
    back = rht_decode(y, DropMask.full(8), ctx)
    np.testing.assert_allclose(back[:5], x, rtol=1e-9, atol=1e-12)


def test_decode_empty_reception_raises():
    ctx = RhtContext.for_length(8, seed=2)
    y = rht_encode(np.ones(8), ctx)
    mask = DropMask(np.zeros(8, dtype=bool))
    with pytest.raises(EmptyReceptionError):
        rht_decode(y * mask.received, mask, ctx)


def test_seed_derivation_is_stable_and_distinct():
    a = derive_seed(1, 2, 3)
    assert a == derive_seed(1, 2, 3)
    assert a != derive_seed(1, 2, 4)
    assert a != derive_seed(1, 3, 3)
    assert a != derive_seed(2, 2, 3)


def test_same_context_same_signs():
    c1 = RhtContext.for_length(64, seed=10)
    c2 = RhtContext.for_length(64, seed=10)
    np.testing.assert_array_equal(c1.signs, c2.signs)
    c3 = RhtContext.for_length(64, seed=11)
    assert not np.array_equal(c1.signs, c3.signs)


def test_monte_carlo_unbiasedness():
    """Mean reconstruction over random 10% drop masks stays within 3 sigma."""
    dim = 256
    ctx = RhtContext.for_length(dim, seed=123)
    rng = np.random.default_rng(456)
    x = rng.standard_normal(dim)
    y = rht_encode(x, ctx)
    trials = 10_000
    acc = np.zeros(dim)
    for _ in range(trials):
        keep = rng.random(dim) >= 0.10
        if not keep.any():
            continue
        acc += rht_decode(np.where(keep, y, 0.0), DropMask(keep), ctx)
    mean_est = acc / trials
    resid = mean_est - x
    # per-coordinate variance of the estimator, measured empirically
    se = np.std(resid) / 1.0
    assert np.abs(resid).max() < max(3 * np.sqrt(trials) * se / np.sqrt(trials), 0.05), (
        np.abs(resid).max()
    )
    # the mean over all coordinates should be very tight
    assert abs(resid.mean()) < 0.01


def test_dispersal_beats_zero_fill_on_hot_tail():
    """Dropping a chunk that carries concentrated energy: dispersal wins."""
    length = 1024
    ctx = RhtContext.for_length(length, seed=77)
    rng = np.random.default_rng(88)
    x = 0.01 * rng.standard_normal(length)
    x[-256:] += rng.standard_normal(256)  # hot region at the tail
    # the same 25% tail chunk is lost either raw or encoded
    keep = np.ones(length, dtype=bool)
    keep[-256:] = False

    zero_fill = np.where(keep, x, 0.0)
    mse_raw = mse(zero_fill, x)

    y = rht_encode(x, ctx)
    decoded = rht_decode(np.where(keep, y, 0.0), DropMask(keep), ctx)
    mse_ht = mse(decoded, x)
    assert mse_ht < mse_raw


def test_decode_scale_compensates_loss():
    # with r of d entries kept, decode rescales by d/r before inverting
    ctx = RhtContext.for_length(512, seed=3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal(512)
    y = rht_encode(x, ctx)
    errs = []
    for frac in (0.0, 0.05, 0.2):
        keep = rng.random(512) >= frac
        est = rht_decode(np.where(keep, y, 0.0), DropMask(keep), ctx)
        errs.append(mse(est, x))
    assert errs[0] < 1e-12
    assert errs[0] < errs[1] < errs[2]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 2048), st.integers(0, 2**31 - 1))
def test_roundtrip_property(length, seed):
    ctx = RhtContext.for_length(length, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(length)
    back = rht_decode(rht_encode(x, ctx), DropMask.full(ctx.dim), ctx)
    np.testing.assert_allclose(back[:length], x, rtol=1e-6, atol=1e-8)
