import math
import random

import pytest

from tracewatch.aggregate import (
    DELAY,
    UNKNOWN_AS,
    SeverityAggregator,
    build_event_reports,
    connected_alarms,
    detect_events,
    magnitude,
    prefix_of,
    series_values,
    tfidf_characterize,
)
from tracewatch.delay import DelayAlarm, MedianEstimate
from tracewatch.forwarding import UNRESPONSIVE, ForwardingAlarm, PatternKey
from tracewatch.ingest import PrefixTable, TimeBin
from tracewatch.links import LinkKey

BIN = TimeBin(0, 3600)


def delay_alarm(near, far, deviation):
    est = MedianEstimate(10.0, 9.0, 11.0, 100, 10, 3)
    return DelayAlarm(LinkKey(near, far), BIN, deviation, "increase",
                      est, 5.0, 4.0, 6.0, False)


def fw_alarm(responsibilities, router="10.0.0.1", dst="198.51.100.1"):
    return ForwardingAlarm(PatternKey(router, dst), BIN, -0.8, responsibilities)


@pytest.fixture
def table():
    t = PrefixTable()
    t.add("10.1.0.0/16", 1)
    t.add("10.2.0.0/16", 2)
    return t


def test_cross_as_link_credits_both_groups(table):
    agg = SeverityAggregator(table)
    agg.add_delay_alarm(delay_alarm("10.1.0.9", "10.2.0.9", 4.0), bin_idx=5)
    assert agg.series[1].delay_series == {5: 4.0}
    assert agg.series[2].delay_series == {5: 4.0}


def test_single_as_link_credits_once(table):
    agg = SeverityAggregator(table)
    agg.add_delay_alarm(delay_alarm("10.1.0.9", "10.1.0.10", 4.0), bin_idx=5)
    assert agg.series[1].delay_series == {5: 4.0}
    assert set(agg.series) == {1}


def test_decrease_alarms_still_add_magnitude(table):
    agg = SeverityAggregator(table)
    agg.add_delay_alarm(delay_alarm("10.1.0.9", "10.1.0.10", -3.0), bin_idx=2)
    assert agg.series[1].delay_series == {2: 3.0}


def test_opposite_responsibilities_cancel_within_as(table):
    agg = SeverityAggregator(table)
    agg.add_forwarding_alarm(
        fw_alarm({"10.1.0.9": -0.3, "10.1.0.10": 0.3, UNRESPONSIVE: 0.0}), bin_idx=4
    )
    assert agg.series[1].fw_series[4] == pytest.approx(0.0)


def test_unresponsive_bucket_never_assigned(table):
    agg = SeverityAggregator(table)
    agg.add_forwarding_alarm(fw_alarm({UNRESPONSIVE: 0.5, "10.1.0.9": -0.5}), bin_idx=4)
    assert set(agg.series) == {1}


def test_unmappable_addresses_fall_to_pseudo_as(table):
    agg = SeverityAggregator(table)
    agg.add_delay_alarm(delay_alarm("192.0.2.1", "10.1.0.9", 2.0), bin_idx=1)
    assert agg.series[UNKNOWN_AS].delay_series == {1: 2.0}
    assert agg.series[1].delay_series == {1: 2.0}


def test_delay_contribution_sum_invariant(table):
    rng = random.Random(17)
    agg = SeverityAggregator(table)
    expected = 0.0
    for _ in range(60):
        a = f"10.{rng.randint(1, 2)}.0.{rng.randint(1, 200)}"
        b = f"10.{rng.randint(1, 2)}.0.{rng.randint(1, 200)}"
        if a == b:
            continue
        d = rng.uniform(-8, 8)
        alarm = delay_alarm(a, b, d)
        agg.add_delay_alarm(alarm, bin_idx=0)
        n_ases = len({table.lookup(a), table.lookup(b)})
        expected += abs(d) * n_ases
    total = sum(s.delay_series.get(0, 0.0) for s in agg.series.values())
    assert total == pytest.approx(expected)


# -- magnitude ------------------------------------------------------------------


def test_constant_series_has_zero_magnitude():
    mags = magnitude([3.0] * 30, window=10)
    assert all(m == 0.0 for m in mags[1:])
    assert mags[0] is None  # single-value window undefined


def test_single_spike_over_quiet_window():
    values = [0.0] * 20 + [10.0]
    mags = magnitude(values, window=21)
    assert mags[-1] == pytest.approx(10.0)


def test_magnitude_shift_invariance_exact():
    rng = random.Random(4)
    values = [rng.uniform(-5, 5) for _ in range(50)]
    shifted = [v + 123.456 for v in values]
    a = magnitude(values, window=12)
    b = magnitude(shifted, window=12)
    for x, y in zip(a, b):
        if x is None:
            assert y is None
        else:
            assert y == pytest.approx(x, abs=1e-9)


def test_magnitude_uses_trailing_window():
    # burst at t=5 must not influence bins before it
    values = [1.0, 1.0, 1.0, 1.0, 1.0, 50.0, 1.0]
    mags = magnitude(values, window=3)
    assert mags[4] == 0.0
    assert mags[5] > 5
    assert magnitude(values[:6], window=3)[:5] == mags[:5]


def test_magnitude_short_window_undefined():
    assert magnitude([5.0], window=10) == [None]
    with pytest.raises(ValueError):
        magnitude([1.0, 2.0], window=1)


def test_two_bursts_isolated_over_week_window():
    rng = random.Random(9)
    values = [rng.uniform(0.0, 0.4) for _ in range(168)]
    values[100] = 40.0
    values[140] = 55.0
    mags = magnitude(values, window=168)
    hot = [i for i, m in enumerate(mags) if m is not None and abs(m) > 5.0]
    assert hot == [100, 140]


def test_series_values_zero_fill():
    assert series_values({3: 2.5, 5: 1.0}, 2, 5) == [0.0, 2.5, 0.0, 1.0, 0.0]


# -- tf-idf -------------------------------------------------------------------


def test_term_in_every_document_scores_log2():
    docs = {b: ["10.0.0.0/24"] for b in range(10)}
    [(term, score)] = tfidf_characterize([3], list(range(10)), docs)
    assert term == "10.0.0.0/24"
    assert score == pytest.approx(math.log(2.0))


def test_event_only_term_scores_f_log_d_plus_one():
    docs = {50: ["10.0.0.0/24"] * 5}
    ranking = tfidf_characterize([50], list(range(100)), docs)
    assert ranking[0][1] == pytest.approx(5 * math.log(101.0))


def test_absent_term_not_ranked():
    docs = {0: ["10.0.0.0/24"], 5: ["10.9.9.0/24"]}
    ranking = tfidf_characterize([5], list(range(10)), docs)
    assert [t for t, _ in ranking] == ["10.9.9.0/24"]


def test_tfidf_scores_nonnegative_and_decreasing_in_spread():
    # same event frequency, increasingly common elsewhere -> lower score
    scores = []
    for spread in (1, 3, 6, 9):
        docs = {b: ["10.0.0.0/24"] for b in range(spread)}
        docs.setdefault(50, []).extend(["10.0.0.0/24"] * 4)
        ranking = tfidf_characterize([50], list(range(60)), docs)
        scores.append(ranking[0][1])
        assert ranking[0][1] >= 0
    assert scores == sorted(scores, reverse=True)


def test_tfidf_ties_break_by_prefix_order():
    docs = {7: ["10.2.0.0/24", "10.1.0.0/24"]}
    ranking = tfidf_characterize([7], list(range(10)), docs)
    assert [t for t, _ in ranking] == ["10.1.0.0/24", "10.2.0.0/24"]


def test_prefix_of_v4_and_v6():
    assert prefix_of("10.1.2.3") == "10.1.2.0/24"
    assert prefix_of("2001:db8:1:2:3::4") == "2001:db8:1:2::/64"


# -- components ------------------------------------------------------------------


def test_components_split_disconnected_alarms():
    alarms = [delay_alarm("10.0.0.1", "10.0.0.2", 1.0),
              delay_alarm("10.0.0.2", "10.0.0.3", 1.0),
              delay_alarm("10.0.0.8", "10.0.0.9", 1.0)]
    comps = connected_alarms(alarms)
    assert [c.nodes for c in comps] == [
        ["10.0.0.1", "10.0.0.2", "10.0.0.3"],
        ["10.0.0.8", "10.0.0.9"],
    ]
    assert comps[0].edges == [("10.0.0.1", "10.0.0.2"), ("10.0.0.2", "10.0.0.3")]


def test_components_empty_and_star():
    assert connected_alarms([]) == []
    alarms = [delay_alarm("10.0.0.1", f"10.0.0.{i}", 1.0) for i in range(2, 6)]
    (comp,) = connected_alarms(alarms)
    assert "10.0.0.1" in comp.nodes
    assert len(comp.nodes) == 5


def test_components_partition_alarmed_ips():
    rng = random.Random(77)
    alarms = [
        delay_alarm(f"10.0.{rng.randint(0, 5)}.{rng.randint(1, 9)}",
                    f"10.0.{rng.randint(0, 5)}.{rng.randint(10, 19)}", 1.0)
        for _ in range(40)
    ]
    comps = connected_alarms(alarms)
    seen = [n for c in comps for n in c.nodes]
    every = {a.link.near for a in alarms} | {a.link.far for a in alarms}
    assert sorted(seen) == sorted(every)  # no duplicates across components


# -- events ---------------------------------------------------------------------


def test_detect_events_contiguous_runs():
    mags = [None, 0.0, 6.0, 7.0, 0.0, -8.0, 0.0]
    assert detect_events(mags, 5.0) == [(2, 3, 3, 7.0), (5, 5, 5, -8.0)]


def test_event_reports_peak_scope(table):
    agg = SeverityAggregator(table)
    # two-bin event; one prefix only appears in the non-peak bin
    agg.add_delay_alarm(delay_alarm("10.1.0.9", "10.1.7.7", 30.0), 20)
    agg.add_delay_alarm(delay_alarm("10.1.0.9", "10.1.8.8", 50.0), 21)
    contiguous = build_event_reports(agg, 0, 40, window=20, threshold=5.0)
    peak_only = build_event_reports(agg, 0, 40, window=20, threshold=5.0,
                                    event_scope="peak")
    (c_report,), (p_report,) = contiguous, peak_only
    assert (c_report.start_bin, c_report.end_bin) == (20, 21)
    assert p_report.peak_bin == 21
    c_terms = {t for t, _ in c_report.characterization}
    p_terms = {t for t, _ in p_report.characterization}
    assert "10.1.7.0/24" in c_terms
    assert "10.1.7.0/24" not in p_terms  # bin 20 excluded from the peak document
    assert "10.1.8.0/24" in p_terms
    with pytest.raises(ValueError, match="event scope"):
        build_event_reports(agg, 0, 40, window=20, event_scope="bogus")


def test_event_reports_end_to_end(table):
    agg = SeverityAggregator(table)
    for b in range(40):
        agg.add_delay_alarm(delay_alarm("10.1.0.9", "10.1.0.10", 0.1), b)
    agg.add_delay_alarm(delay_alarm("10.1.0.9", "10.1.7.7", 50.0), 30)
    reports = build_event_reports(agg, 0, 40, window=20, threshold=5.0)
    (report,) = reports
    assert report.asn == 1
    assert report.kind == DELAY
    assert (report.start_bin, report.end_bin, report.peak_bin) == (30, 30, 30)
    assert report.characterization
    # the burst-only prefix outranks the background one
    assert report.characterization[0][0] == "10.1.7.0/24"
    # component summary spans the alarmed links of the event bin
    (comp,) = report.components
    assert comp.nodes == ["10.1.0.9", "10.1.0.10", "10.1.7.7"]
