"""Per-AS alarm aggregation, disruption magnitude and event characterization.

Alarms are grouped by the origin AS of their IP addresses (longest-prefix
match; unmappable addresses fall into pseudo-AS 0). Each AS gets two
severity time series: summed delay deviations and summed forwarding
responsibilities. A robust z-like magnitude over a sliding window turns a
series into peaks; contiguous peak bins form events, characterized by
TF-IDF over the /24 (v6: /64) prefixes reported by the underlying alarms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from ipaddress import ip_address, ip_network
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .delay import DelayAlarm
from .forwarding import UNRESPONSIVE, ForwardingAlarm
from .ingest import PrefixTable

DELAY = "delay"
FORWARDING = "forwarding"

# Pseudo-AS for addresses not covered by the prefix table.
UNKNOWN_AS = 0

MAD_SCALE = 1.4826  # normal-consistency constant
DEFAULT_WINDOW = 168  # one week of hourly bins
DEFAULT_MAG_THRESHOLD = 5.0


def prefix_of(addr: str) -> str:
    """Aggregation prefix of an address: /24 for IPv4, /64 for IPv6."""
    ip = ip_address(addr)
    length = 24 if ip.version == 4 else 64
    return str(ip_network(f"{addr}/{length}", strict=False))


def _prefix_sort_key(prefix: str):
    net = ip_network(prefix)
    return (net.version, int(net.network_address), net.prefixlen)


@dataclass
class AsSeries:
    """Severity history for one AS; missing bins are implicitly zero."""

    asn: int
    delay_series: Dict[int, float] = field(default_factory=dict)
    fw_series: Dict[int, float] = field(default_factory=dict)


class SeverityAggregator:
    """Routes alarms into per-AS series and per-bin term documents."""

    def __init__(self, table: Optional[PrefixTable] = None):
        self.table = table
        self.series: Dict[int, AsSeries] = {}
        # (asn, kind) -> bin index -> list of prefix terms
        self.documents: Dict[Tuple[int, str], Dict[int, List[str]]] = {}
        # asn -> bin index -> alarmed (near, far) pairs, for component output
        self.links: Dict[int, Dict[int, List[Tuple[str, str]]]] = {}

    def _asn(self, addr: str) -> int:
        if self.table is None:
            return UNKNOWN_AS
        asn = self.table.lookup(addr)
        return UNKNOWN_AS if asn is None else asn

    def _series(self, asn: int) -> AsSeries:
        s = self.series.get(asn)
        if s is None:
            s = self.series[asn] = AsSeries(asn)
        return s

    def _doc(self, asn: int, kind: str, bin_idx: int) -> List[str]:
        docs = self.documents.setdefault((asn, kind), {})
        doc = docs.get(bin_idx)
        if doc is None:
            doc = docs[bin_idx] = []
        return doc

    def add_delay_alarm(self, alarm: DelayAlarm, bin_idx: int) -> None:
        """Credit |deviation| to every AS on the link (both when they differ)."""
        ips = [alarm.link.near, alarm.link.far]
        severity = abs(alarm.deviation)
        for asn in {self._asn(ip) for ip in ips}:
            self._series(asn).delay_series[bin_idx] = (
                self._series(asn).delay_series.get(bin_idx, 0.0) + severity
            )
            self._doc(asn, DELAY, bin_idx).extend(prefix_of(ip) for ip in ips)
            self.links.setdefault(asn, {}).setdefault(bin_idx, []).append(
                (alarm.link.near, alarm.link.far)
            )

    def add_forwarding_alarm(self, alarm: ForwardingAlarm, bin_idx: int) -> None:
        """Credit each responsibility to its next hop's AS (signed).

        Opposite-signed scores within one AS cancel: an intra-AS reroute is
        not a disruption at AS granularity. The UNRESPONSIVE bucket has no
        address and is never assigned.
        """
        for hop, r in alarm.responsibilities.items():
            if hop == UNRESPONSIVE:
                continue
            asn = self._asn(hop)
            series = self._series(asn)
            series.fw_series[bin_idx] = series.fw_series.get(bin_idx, 0.0) + r
            self._doc(asn, FORWARDING, bin_idx).append(prefix_of(hop))


def series_values(series: Dict[int, float], start_bin: int, n_bins: int) -> List[float]:
    """Dense value list over [start_bin, start_bin + n_bins), zero-filled."""
    return [series.get(start_bin + i, 0.0) for i in range(n_bins)]


def magnitude(
    values: Sequence[float], window: int = DEFAULT_WINDOW
) -> List[Optional[float]]:
    """Robust per-bin disruption magnitude over a trailing sliding window.

    mag_t = (x_t - median(W_t)) / (1 + 1.4826 * mad(W_t)) where W_t holds the
    last ``window`` values ending at t inclusive. Bins whose window holds
    fewer than two values are undefined (None).
    """
    if window < 2:
        raise ValueError("window must cover at least 2 bins")
    x = np.asarray(values, dtype=float)
    out: List[Optional[float]] = []
    for t in range(len(x)):
        w = x[max(0, t - window + 1) : t + 1]
        if len(w) < 2:
            out.append(None)
            continue
        med = float(np.median(w))
        mad = float(np.median(np.abs(w - med)))
        out.append((float(x[t]) - med) / (1.0 + MAD_SCALE * mad))
    return out


def tfidf_characterize(
    event_bins: Iterable[int],
    all_bins: Sequence[int],
    docs: Dict[int, List[str]],
) -> List[Tuple[str, float]]:
    """Rank the event's prefixes by TF-IDF against the full bin corpus.

    Every bin in ``all_bins`` is a document (possibly empty); the event
    document is the union of ``event_bins``. Score per term is
    f_event * ln(1 + |D| / n_term). Descending score, ties by prefix
    numeric order.
    """
    event_bins = set(event_bins)
    universe = set(all_bins) | event_bins  # event bins are documents too
    n_docs = len(universe)
    if n_docs == 0:
        return []
    appearances: Dict[str, int] = {}
    for b in universe:
        for term in set(docs.get(b, ())):
            appearances[term] = appearances.get(term, 0) + 1
    freq: Dict[str, int] = {}
    for b in event_bins:
        for term in docs.get(b, ()):
            freq[term] = freq.get(term, 0) + 1
    scored = [
        (term, f * math.log(1.0 + n_docs / appearances[term]))
        for term, f in freq.items()
    ]
    scored.sort(key=lambda item: (-item[1], _prefix_sort_key(item[0])))
    return scored


class Component(NamedTuple):
    """One connected component of the per-bin alarmed-link graph."""

    nodes: List[str]
    edges: List[Tuple[str, str]]


def _addr_sort_key(addr: str):
    ip = ip_address(addr)
    return (ip.version, int(ip))


def components_of_links(links: Iterable[Tuple[str, str]]) -> List[Component]:
    """Connected components over undirected (near, far) address pairs.

    Output is deterministic: nodes and edges sorted by address, components
    ordered by their smallest node.
    """
    adjacency: Dict[str, set] = {}
    edges = set()
    for a, b in links:
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)
        edges.add((min(a, b, key=_addr_sort_key), max(a, b, key=_addr_sort_key)))

    components: List[Component] = []
    seen: set = set()
    for start in sorted(adjacency, key=_addr_sort_key):
        if start in seen:
            continue
        stack, nodes = [start], set()
        while stack:
            node = stack.pop()
            if node in nodes:
                continue
            nodes.add(node)
            stack.extend(adjacency[node] - nodes)
        seen.update(nodes)
        comp_edges = sorted(
            (e for e in edges if e[0] in nodes),
            key=lambda e: (_addr_sort_key(e[0]), _addr_sort_key(e[1])),
        )
        components.append(Component(sorted(nodes, key=_addr_sort_key), comp_edges))
    return components


def connected_alarms(alarms: Iterable[DelayAlarm]) -> List[Component]:
    """Connected components over the links of one bin's delay alarms."""
    return components_of_links((a.link.near, a.link.far) for a in alarms)


class EventReport(NamedTuple):
    """A detected per-AS disruption with its characterization."""

    asn: int
    kind: str
    start_bin: int
    end_bin: int
    peak_bin: int
    peak_magnitude: float
    characterization: List[Tuple[str, float]]
    components: List[Component]


def detect_events(
    mags: Sequence[Optional[float]],
    threshold: float = DEFAULT_MAG_THRESHOLD,
) -> List[Tuple[int, int, int, float]]:
    """Contiguous runs of |mag| > threshold as (start, end, peak, peak_mag)."""
    events = []
    run_start = None
    peak_i = peak = None
    for i, m in enumerate(mags):
        if m is not None and abs(m) > threshold:
            if run_start is None:
                run_start, peak_i, peak = i, i, m
            elif abs(m) > abs(peak):
                peak_i, peak = i, m
        elif run_start is not None:
            events.append((run_start, i - 1, peak_i, peak))
            run_start = None
    if run_start is not None:
        events.append((run_start, len(mags) - 1, peak_i, peak))
    return events


def build_event_reports(
    agg: SeverityAggregator,
    start_bin: int,
    n_bins: int,
    window: int = DEFAULT_WINDOW,
    threshold: float = DEFAULT_MAG_THRESHOLD,
    topk: int = 10,
    event_scope: str = "contiguous",
) -> List[EventReport]:
    """Detect and characterize events across all aggregated ASes.

    ``event_scope`` selects the TF-IDF event document: all bins of the
    contiguous run ("contiguous", default) or just the peak bin ("peak").
    """
    if event_scope not in ("contiguous", "peak"):
        raise ValueError(f"unknown event scope {event_scope!r}")
    all_bins = list(range(start_bin, start_bin + n_bins))
    reports: List[EventReport] = []
    for asn in sorted(agg.series):
        entry = agg.series[asn]
        for kind, series in ((DELAY, entry.delay_series), (FORWARDING, entry.fw_series)):
            if not series:
                continue
            values = series_values(series, start_bin, n_bins)
            mags = magnitude(values, window)
            docs = agg.documents.get((asn, kind), {})
            for rel_start, rel_end, rel_peak, peak in detect_events(mags, threshold):
                if event_scope == "peak":
                    event_bins: Iterable[int] = [start_bin + rel_peak]
                else:
                    event_bins = range(start_bin + rel_start, start_bin + rel_end + 1)
                event_bins = list(event_bins)
                chars = tfidf_characterize(event_bins, all_bins, docs)[:topk]
                as_links = agg.links.get(asn, {})
                components = components_of_links(
                    pair for b in event_bins for pair in as_links.get(b, ())
                )
                reports.append(
                    EventReport(
                        asn,
                        kind,
                        start_bin + rel_start,
                        start_bin + rel_end,
                        start_bin + rel_peak,
                        peak,
                        chars,
                        components,
                    )
                )
    return reports
