import math
import random
from decimal import Decimal, getcontext

import numpy as np
import pytest

from tracewatch.delay import (
    DECREASE,
    INCREASE,
    DelayReference,
    MedianEstimate,
    characterize,
    detect,
    min_detectable_event,
    update_reference,
    wilson_ranks,
    wilson_scores,
)
from tracewatch.ingest import TimeBin
from tracewatch.links import LinkKey


def wilson_decimal(n, z="1.96", p="0.5"):
    """High-precision Wilson bounds, independent of the float implementation."""
    getcontext().prec = 50
    n, z, p = Decimal(n), Decimal(z), Decimal(p)
    z2 = z * z
    inv = 1 / (1 + z2 / n)
    center = p + z2 / (2 * n)
    half = z * (p * (1 - p) / n + z2 / (4 * n * n)).sqrt()
    return inv * (center - half), inv * (center + half)


@pytest.mark.parametrize("n", [5, 10, 30, 100, 1000])
def test_wilson_scores_match_high_precision(n):
    w_l, w_u = wilson_scores(n)
    ref_l, ref_u = wilson_decimal(n)
    assert abs(w_l - float(ref_l)) < 1e-9
    assert abs(w_u - float(ref_u)) < 1e-9


def test_wilson_ranks_n100():
    w_l, w_u = wilson_scores(100)
    assert w_l == pytest.approx(0.40383, abs=1e-5)
    assert w_u == pytest.approx(0.59617, abs=1e-5)
    assert wilson_ranks(100) == (40, 60)


def test_wilson_ranks_single_sample_collapses():
    assert wilson_ranks(1) == (1, 1)


@pytest.mark.parametrize("n", [2, 5, 10, 11])
def test_wilson_ranks_zero_z_is_floor_ceil_half(n):
    w_l, w_u = wilson_scores(n, z=0.0)
    assert w_l == w_u == 0.5
    assert wilson_ranks(n, z=0.0) == (math.floor(n / 2), math.ceil(n / 2))


def test_wilson_rank_bounds_hold():
    for n in range(1, 400):
        lo, hi = wilson_ranks(n)
        assert 1 <= lo <= hi <= n


def test_wilson_interval_narrows_with_n():
    widths = [abs(np.diff(wilson_scores(n))[0]) for n in (10, 100, 1000, 10000)]
    assert widths == sorted(widths, reverse=True)


def test_wilson_zero_samples_is_error():
    with pytest.raises(ValueError):
        wilson_scores(0)
    with pytest.raises(ValueError):
        characterize([])


# -- characterization ------------------------------------------------------


def test_characterize_odd_median_zero_z():
    est = characterize([1.0, 2.0, 3.0, 4.0, 5.0], z=0.0)
    assert est.median == 3.0
    # ranks floor(2.5)=2 and ceil(2.5)=3 pick the order statistics around p
    assert (est.ci_low, est.ci_high) == (2.0, 3.0)
    assert est.n_samples == 5


def test_characterize_identity_hundred():
    est = characterize([float(v) for v in range(1, 101)])
    assert est.median == 50.5
    assert (est.ci_low, est.ci_high) == (40.0, 60.0)


def test_characterize_is_order_free():
    samples = [5.0, 1.0, 4.0, 2.0, 3.0]
    assert characterize(samples) == characterize(sorted(samples))


@pytest.mark.parametrize("n", [255, 256, 720, 1801])
def test_characterize_large_pool_matches_manual_order_stats(n):
    # the vectorized sort path must agree with direct order-statistic picks
    rng = random.Random(n)
    samples = [rng.gauss(10.0, 4.0) for _ in range(n)]
    est = characterize(samples)
    ordered = sorted(samples)
    mid = n // 2
    expected_median = ordered[mid] if n % 2 else 0.5 * (ordered[mid - 1] + ordered[mid])
    lo, hi = wilson_ranks(n)
    assert est.median == expected_median
    assert est.ci_low == ordered[lo - 1]
    assert est.ci_high == ordered[hi - 1]


def test_characterize_noisy_pool_has_steady_medians():
    # heavy-tailed pool moment-matched to mean 4.8, std 12.2: medians stay
    # within a narrow band while the raw samples swing wildly
    rng = np.random.default_rng(8)
    m, s = 4.8, 12.2
    sigma2 = math.log(1.0 + (s * s) / (m * m))
    mu = math.log(m) - sigma2 / 2.0
    medians, raw_std = [], []
    for _ in range(40):
        pool = rng.lognormal(mu, math.sqrt(sigma2), size=720)
        est = characterize(list(pool))
        assert est.ci_low <= est.median <= est.ci_high
        medians.append(est.median)
        raw_std.append(pool.std())
    band = max(medians) - min(medians)
    assert band < 0.5
    assert np.mean(raw_std) > 10 * band


def test_median_robust_to_outlier_injection():
    rng = random.Random(13)
    for _ in range(30):
        n = rng.randrange(11, 60, 2)
        base = sorted(rng.uniform(0, 50) for _ in range(n))
        k = rng.randint(1, n // 2 - 1)
        spiked = sorted(base + [1e9] * k)
        old = characterize(base).median
        new = characterize(spiked).median
        # k < n/2 outliers shift the median at most to a nearby order statistic
        assert old <= new <= base[min(n - 1, n // 2 + k)]


# -- reference and detection -------------------------------------------------


def est(median, lo, hi, n=100):
    return MedianEstimate(median, lo, hi, n, 0, 0)


def ready_ref(median, lo, hi):
    return DelayReference(ref_median=median, ref_low=lo, ref_high=hi, bins_observed=3)


def test_warmup_initializes_with_median_of_three():
    ref = DelayReference()
    update_reference(ref, est(5.0, 4.5, 5.5))
    assert not ref.ready
    update_reference(ref, est(7.0, 6.5, 7.5))
    assert not ref.ready
    update_reference(ref, est(6.0, 5.5, 6.5))
    assert ref.ready
    assert ref.ref_median == 6.0
    assert ref.ref_low == 5.5
    assert ref.ref_high == 6.5
    assert ref.bins_observed == 3


def test_smoothing_step():
    ref = ready_ref(6.0, 5.5, 6.5)
    update_reference(ref, est(10.0, 9.5, 10.5), alpha=0.01)
    assert ref.ref_median == pytest.approx(6.04)
    assert ref.ref_low == pytest.approx(5.54)
    assert ref.ref_high == pytest.approx(6.54)


def test_constant_stream_is_fixed_point():
    ref = ready_ref(6.0, 5.5, 6.5)
    for _ in range(200):
        update_reference(ref, est(6.0, 5.5, 6.5), alpha=0.05)
    assert ref.ref_median == pytest.approx(6.0)
    assert ref.ref_low == pytest.approx(5.5)
    assert ref.ref_high == pytest.approx(6.5)


def test_detect_increase_gap_over_half_width():
    alarm = detect(est(11.0, 10.0, 12.0), ready_ref(5.0, 4.0, 6.0))
    assert alarm is not None
    assert alarm.direction == INCREASE
    assert alarm.deviation == pytest.approx(4.0)
    assert not alarm.degenerate


def test_detect_overlap_is_quiet():
    assert detect(est(5.2, 4.9, 5.5), ready_ref(5.0, 4.0, 6.0)) is None


def test_detect_small_median_gap_is_quiet():
    # disjoint CIs but |5.8 - 5.3| < 1 ms
    assert detect(est(5.8, 5.75, 5.85), ready_ref(5.3, 5.25, 5.35)) is None


def test_detect_decrease_is_signed_negative():
    alarm = detect(est(1.0, 0.5, 1.5), ready_ref(5.0, 4.0, 6.0))
    assert alarm.direction == DECREASE
    assert alarm.deviation == pytest.approx(-(4.0 - 1.5) / (5.0 - 4.0))


def test_detect_is_symmetric_under_interval_swap():
    obs, ref = est(11.0, 10.0, 12.0), ready_ref(5.0, 4.0, 6.0)
    up = detect(obs, ref)
    down = detect(est(5.0, 4.0, 6.0), ready_ref(11.0, 10.0, 12.0))
    assert up.direction == INCREASE and down.direction == DECREASE
    # same gap (4 ms), each normalized by its own reference half-width
    assert up.deviation == pytest.approx(4.0)
    assert down.deviation == pytest.approx(-4.0)


def test_detect_degenerate_reference_flagged():
    alarm = detect(est(11.0, 10.0, 12.0), ready_ref(5.0, 4.0, 5.0))
    assert alarm.degenerate
    assert alarm.deviation == pytest.approx((10.0 - 5.0) / 1e-6)


def test_detect_during_warmup_is_an_error():
    with pytest.raises(ValueError):
        detect(est(11.0, 10.0, 12.0), DelayReference())


def test_detect_carries_link_and_bin():
    key, tbin = LinkKey("a", "b"), TimeBin(3600, 3600)
    alarm = detect(est(11.0, 10.0, 12.0), ready_ref(5.0, 4.0, 6.0), link=key, tbin=tbin)
    assert alarm.link == key
    assert alarm.bin == tbin


# -- coverage property --------------------------------------------------------


def test_ci_covers_true_median_at_nominal_rate():
    rng = np.random.default_rng(7)
    hits = 0
    trials = 2000
    for _ in range(trials):
        est_ = characterize(list(rng.lognormal(0.0, 1.0, size=100)))
        if est_.ci_low <= 1.0 <= est_.ci_high:
            hits += 1
    assert 0.93 <= hits / trials <= 0.97


# -- detectability bound -------------------------------------------------------


def test_min_detectable_event_builtin_cadence():
    assert min_detectable_event(2, 3, 1.0) * 60 == pytest.approx(33.333, abs=0.01)


def test_min_detectable_event_anchoring_cadence():
    assert min_detectable_event(4, 3, 0.25) * 60 == pytest.approx(9.1667, abs=0.01)


def test_min_detectable_event_asymptote_is_half_bin():
    assert min_detectable_event(2, 10_000_000, 1.0) == pytest.approx(0.5, abs=1e-5)


def test_min_detectable_event_rejects_narrow_bins():
    with pytest.raises(ValueError, match="minimum usable"):
        min_detectable_event(2, 3, 0.4)  # T_min = 0.5 h for r=2, n=3
    with pytest.raises(ValueError):
        min_detectable_event(0, 3, 1.0)
