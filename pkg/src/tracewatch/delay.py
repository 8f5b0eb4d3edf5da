"""Delay-change detection on per-bin differential RTT pools.

Each accepted link-bin is characterized by its median and a distribution-free
95% confidence interval picked by Wilson-score order-statistic ranks (the
median of n samples is normally distributed even when the samples are not,
so medians make a robust detector signal where means do not). A per-link
normal reference is the exponentially smoothed history of those medians and
bounds; a bin whose confidence interval clears the reference interval by
more than the small-change floor raises an alarm whose deviation is the gap
normalized by the reference interval half-width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .ingest import TimeBin
from .links import LinkKey

INCREASE = "increase"
DECREASE = "decrease"

# Expected samples for a minimally diverse link: 3 probes x 3 packets.
MIN_EXPECTED_SAMPLES = 9

# Denominator floor for references whose CI half-width collapsed to zero.
DEGENERATE_EPSILON = 1e-6


def wilson_scores(n: int, z: float = 1.96, p: float = 0.5) -> Tuple[float, float]:
    """Wilson-score interval bounds (w_l, w_u) in [0, 1] for n samples.

    With p = 0.5 these locate the order-statistic ranks bounding the
    median's confidence interval; z = 1.96 gives the 95% level.
    """
    if n < 1:
        raise ValueError("cannot characterize zero samples")
    z2 = z * z
    inv = 1.0 / (1.0 + z2 / n)
    center = p + z2 / (2.0 * n)
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n))
    return inv * (center - half), inv * (center + half)


def wilson_ranks(n: int, z: float = 1.96) -> Tuple[int, int]:
    """1-based sorted-sample ranks (l, u) of the median CI bounds.

    Rounded outward (floor/ceil) and clamped to [1, n]; outward rounding
    widens the interval, which errs on the side of fewer alarms.
    """
    w_l, w_u = wilson_scores(n, z)
    lo = max(1, math.floor(n * w_l))
    hi = min(n, math.ceil(n * w_u))
    return lo, hi


class MedianEstimate(NamedTuple):
    """Median and CI of one link-bin differential RTT pool."""

    median: float
    ci_low: float
    ci_high: float
    n_samples: int
    n_probes: int
    n_asns: int


def characterize(
    samples: List[float],
    z: float = 1.96,
    n_probes: int = 0,
    n_asns: int = 0,
) -> MedianEstimate:
    """Median and Wilson-ranked CI bounds of a sample pool."""
    n = len(samples)
    if n == 0:
        raise ValueError("cannot characterize zero samples")
    # numpy sorts large pools far faster; small ones are cheaper in Python
    if n >= 256:
        ordered = np.sort(np.asarray(samples, dtype=float))
        get = ordered.item
    else:
        ordered = sorted(samples)
        get = ordered.__getitem__
    mid = n // 2
    if n % 2:
        median = get(mid)
    else:
        median = 0.5 * (get(mid - 1) + get(mid))
    lo, hi = wilson_ranks(n, z)
    return MedianEstimate(median, get(lo - 1), get(hi - 1), n, n_probes, n_asns)


@dataclass
class DelayReference:
    """Smoothed normal reference for one link's median and CI bounds.

    The first three accepted bins form the warmup; the reference starts as
    their component-wise median, then follows exponential smoothing.
    """

    ref_median: Optional[float] = None
    ref_low: Optional[float] = None
    ref_high: Optional[float] = None
    bins_observed: int = 0
    warmup: List[Tuple[float, float, float]] = field(default_factory=list)

    @property
    def ready(self) -> bool:
        return self.ref_median is not None


def update_reference(
    ref: DelayReference, obs: MedianEstimate, alpha: float = 0.01
) -> DelayReference:
    """Fold one observed bin into the reference (smoothing after warmup)."""
    ref.bins_observed += 1
    if not ref.ready:
        ref.warmup.append((obs.median, obs.ci_low, obs.ci_high))
        if len(ref.warmup) == 3:
            ms, los, his = zip(*ref.warmup)
            ref.ref_median = sorted(ms)[1]
            ref.ref_low = sorted(los)[1]
            ref.ref_high = sorted(his)[1]
            ref.warmup.clear()
        return ref
    beta = 1.0 - alpha
    ref.ref_median = alpha * obs.median + beta * ref.ref_median
    ref.ref_low = alpha * obs.ci_low + beta * ref.ref_low
    ref.ref_high = alpha * obs.ci_high + beta * ref.ref_high
    return ref


class DelayAlarm(NamedTuple):
    """A statistically significant delay change on one link in one bin."""

    link: Optional[LinkKey]
    bin: Optional[TimeBin]
    deviation: float  # signed: positive for increase, negative for decrease
    direction: str
    observed: MedianEstimate
    ref_median: float
    ref_low: float
    ref_high: float
    degenerate: bool


def detect(
    obs: MedianEstimate,
    ref: DelayReference,
    min_diff_ms: float = 1.0,
    link: Optional[LinkKey] = None,
    tbin: Optional[TimeBin] = None,
) -> Optional[DelayAlarm]:
    """Compare an observed bin against the reference; alarm on disjoint CIs.

    No alarm while the intervals overlap or the median gap is below
    ``min_diff_ms`` (statistically significant but operationally dull).
    The deviation is the inter-interval gap over the reference CI
    half-width on the crossed side; a collapsed half-width is floored at
    DEGENERATE_EPSILON and the alarm flagged.
    """
    if not ref.ready:
        raise ValueError("reference still in warmup")
    if abs(obs.median - ref.ref_median) < min_diff_ms:
        return None
    degenerate = False
    if ref.ref_high < obs.ci_low:
        denom = ref.ref_high - ref.ref_median
        if denom <= 0.0:
            denom = DEGENERATE_EPSILON
            degenerate = True
        deviation = (obs.ci_low - ref.ref_high) / denom
        direction = INCREASE
    elif ref.ref_low > obs.ci_high:
        denom = ref.ref_median - ref.ref_low
        if denom <= 0.0:
            denom = DEGENERATE_EPSILON
            degenerate = True
        deviation = -((ref.ref_low - obs.ci_high) / denom)
        direction = DECREASE
    else:
        return None
    return DelayAlarm(
        link,
        tbin,
        deviation,
        direction,
        obs,
        ref.ref_median,
        ref.ref_low,
        ref.ref_high,
        degenerate,
    )


def min_detectable_event(
    traceroutes_per_hour: float, n_probes: int, bin_hours: float
) -> float:
    """Shortest detectable event duration in hours for a link.

    With n probes probing at r traceroutes/hour into bins of T hours, the
    expected 3rn packets per hour mean an event must shift the majority of
    one bin's samples, giving 1/(3rn) + T/2. Bins below the minimum usable
    width T_min = 9/(3rn) cannot gather the expected nine packets.
    """
    r, n, t = traceroutes_per_hour, n_probes, bin_hours
    if r <= 0 or n < 1:
        raise ValueError("probing rate and probe count must be positive")
    t_min = MIN_EXPECTED_SAMPLES / (3.0 * r * n)
    if t < t_min:
        raise ValueError(
            f"bin of {t:g} h is below the minimum usable width {t_min:g} h "
            f"for {n} probes at {r:g} traceroutes/hour"
        )
    return 1.0 / (3.0 * r * n) + t / 2.0
