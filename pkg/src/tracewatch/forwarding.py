"""Packet-forwarding pattern learning and anomaly detection.

For each (router, traceroute destination) pair, the per-bin forwarding
pattern counts probe packets per observed next hop. Packets that drew no
reply land in a single aggregate UNRESPONSIVE bucket: dropped and silent
next hops are indistinguishable in traceroute. A smoothed reference pattern
summarizes usual behavior; a bin whose pattern anti-correlates with the
reference (Pearson rho below a negative threshold) is anomalous, and each
next hop gets a responsibility score attributing the change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional

from .ingest import PACKETS_PER_HOP, TimeBin, TracerouteRecord

# Aggregate bucket for unresponsive or packet-dropping next hops.
UNRESPONSIVE = "*"

# Smoothed counts below this are dropped from references to bound memory.
PRUNE_EPSILON = 1e-9

DEFAULT_TAU = -0.25


class PatternKey(NamedTuple):
    router: str
    destination: str


@dataclass
class ForwardingPattern:
    """Next-hop packet counts for one router toward one destination, one bin."""

    key: PatternKey
    bin: TimeBin
    counts: Dict[str, float] = field(default_factory=dict)


@dataclass
class ForwardingReference:
    """Exponentially smoothed usual forwarding pattern for one key."""

    key: PatternKey
    ref_counts: Dict[str, float] = field(default_factory=dict)
    bins_observed: int = 0


class Correlation(NamedTuple):
    rho: float
    variance_defined: bool


class ForwardingAlarm(NamedTuple):
    """An anomalous forwarding pattern with per-next-hop attributions."""

    key: PatternKey
    bin: TimeBin
    rho: float
    responsibilities: Dict[str, float]


def build_patterns(
    records: Iterable[TracerouteRecord],
    tbin: TimeBin,
    packets_per_hop: int = PACKETS_PER_HOP,
) -> Dict[PatternKey, ForwardingPattern]:
    """Count next-hop packets for every responsive router in the bin.

    Each consecutive hop transition attributes up to ``packets_per_hop``
    packets: one per RTT sample of the responsive next hop, the remainder
    (timeouts) to the UNRESPONSIVE bucket.
    """
    patterns: Dict[PatternKey, ForwardingPattern] = {}
    for rec in records:
        hops = rec.hops
        dst = rec.dst_addr
        prev_idx, prev_addr = 0, None
        for hop in hops:
            idx, addr, rtts = hop
            if idx - prev_idx == 1 and prev_addr is not None:
                key = PatternKey(prev_addr, dst)
                pattern = patterns.get(key)
                if pattern is None:
                    pattern = patterns[key] = ForwardingPattern(key, tbin)
                counts = pattern.counts
                k = len(rtts)
                if addr is not None and k:
                    counts[addr] = counts.get(addr, 0) + k
                if k < packets_per_hop:
                    counts[UNRESPONSIVE] = (
                        counts.get(UNRESPONSIVE, 0) + packets_per_hop - k
                    )
            prev_idx, prev_addr = idx, addr
    return patterns


def _proportional(xs: List[float], ys: List[float]) -> bool:
    """True when xs == s * ys for some s > 0 (or both are all zero)."""
    sx, sy = sum(xs), sum(ys)
    if sx == 0.0 and sy == 0.0:
        return True
    if sx == 0.0 or sy == 0.0:
        return False
    return all(
        math.isclose(x * sy, y * sx, rel_tol=1e-9, abs_tol=1e-12)
        for x, y in zip(xs, ys)
    )


def correlate(
    counts: Dict[str, float], ref_counts: Dict[str, float]
) -> Correlation:
    """Pearson correlation of a pattern against its reference.

    Computed over the union of next hops, with zeros for hops unseen on
    either side. Constant vectors leave Pearson undefined: identical
    patterns (up to scale) read as rho = 1, anything else as rho = 0, both
    flagged via ``variance_defined=False``.
    """
    keys = set(counts)
    keys.update(ref_counts)
    xs = [float(counts.get(k, 0.0)) for k in keys]
    ys = [float(ref_counts.get(k, 0.0)) for k in keys]
    n = len(keys)
    if n < 2:
        return Correlation(1.0 if _proportional(xs, ys) else 0.0, False)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    cov = var_x = var_y = 0.0
    for x, y in zip(xs, ys):
        dx = x - mean_x
        dy = y - mean_y
        cov += dx * dy
        var_x += dx * dx
        var_y += dy * dy
    if var_x <= 0.0 or var_y <= 0.0:
        return Correlation(1.0 if _proportional(xs, ys) else 0.0, False)
    rho = cov / math.sqrt(var_x * var_y)
    return Correlation(max(-1.0, min(1.0, rho)), True)


def detect_forwarding(
    pattern: ForwardingPattern,
    ref: ForwardingReference,
    tau: float = DEFAULT_TAU,
) -> Optional[ForwardingAlarm]:
    """Alarm when the pattern anti-correlates with its reference (rho < tau).

    Responsibilities over the union of next hops: positive for newly
    favored hops, negative for devalued ones, summing the change weighted
    by -rho.
    """
    corr = correlate(pattern.counts, ref.ref_counts)
    if not corr.variance_defined or corr.rho >= tau:
        return None
    keys = set(pattern.counts)
    keys.update(ref.ref_counts)
    diffs = {
        k: float(pattern.counts.get(k, 0.0)) - float(ref.ref_counts.get(k, 0.0))
        for k in keys
    }
    total = sum(abs(d) for d in diffs.values())
    # identical patterns give rho = 1, which cannot reach a negative tau
    assert total > 0.0, "anti-correlated patterns cannot be identical"
    rho = corr.rho
    responsibilities = {k: -rho * d / total for k, d in diffs.items()}
    return ForwardingAlarm(pattern.key, pattern.bin, rho, responsibilities)


def update_fw_reference(
    ref: Optional[ForwardingReference],
    pattern: ForwardingPattern,
    alpha: float = 0.01,
) -> ForwardingReference:
    """Fold a bin's pattern into the reference; first observation adopts it."""
    if ref is None or ref.bins_observed == 0:
        return ForwardingReference(pattern.key, dict(pattern.counts), 1)
    beta = 1.0 - alpha
    merged: Dict[str, float] = {}
    keys = set(pattern.counts)
    keys.update(ref.ref_counts)
    for k in keys:
        value = alpha * pattern.counts.get(k, 0.0) + beta * ref.ref_counts.get(k, 0.0)
        if value >= PRUNE_EPSILON:
            merged[k] = value
    ref.ref_counts = merged
    ref.bins_observed += 1
    return ref
