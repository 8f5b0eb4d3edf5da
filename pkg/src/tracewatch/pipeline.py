"""End-to-end per-bin pipeline: links -> diversity -> detection -> aggregation.

Per time bin, in order: differential RTTs are pooled per link, the
probe-diversity gate drops ambiguous links, surviving pools are
characterized and compared against their references, and references are
updated with the observed bin whether or not it alarmed (smoothing bounds
anomaly bleed-through). Forwarding patterns run on the same bin. Per-link
state is independent, so the inner stages can be sharded by key; bins must
be processed in increasing order per key.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from . import aggregate as agg
from .delay import (
    MIN_EXPECTED_SAMPLES,
    DelayAlarm,
    DelayReference,
    characterize,
    detect,
    update_reference,
)
from .forwarding import (
    DEFAULT_TAU,
    UNRESPONSIVE,
    ForwardingAlarm,
    ForwardingPattern,
    ForwardingReference,
    PatternKey,
    detect_forwarding,
    update_fw_reference,
)
from .ingest import PACKETS_PER_HOP, TimeBin, TracerouteRecord
from .links import (
    LinkKey,
    LinkObservations,
    diversity_seed,
    enforce_diversity,
)
from .state import Checkpoint


@dataclass
class PipelineConfig:
    bin_width: int = 3600
    min_as: int = 3
    entropy_threshold: float = 0.5
    seed: int = 0
    alpha: float = 0.01
    min_diff_ms: float = 1.0
    z: float = 1.96
    min_samples: int = MIN_EXPECTED_SAMPLES
    tau: float = DEFAULT_TAU
    fw_alpha: float = 0.01
    packets_per_hop: int = PACKETS_PER_HOP
    threads: int = 1


@dataclass
class RunSummary:
    records: int = 0
    bins: int = 0
    delay_alarms: int = 0
    forwarding_alarms: int = 0


def scan_bin(
    records: List[TracerouteRecord],
    tbin: TimeBin,
    packets_per_hop: int = PACKETS_PER_HOP,
):
    """One fused pass over a bin's records: link pools and forwarding counts.

    Semantically identical to composing links.collect_link_observations with
    forwarding.build_patterns (asserted in tests); fused here because the
    double hop-walk dominated pipeline cost.
    """
    link_pools: dict = {}  # (near, far) -> {probe_id: (asn, [deltas])}
    pattern_counts: dict = {}  # (router, dst) -> {next_hop: packets}
    unresponsive = UNRESPONSIVE
    for rec in records:
        hops = rec.hops
        n = len(hops)
        if n == 0:
            continue
        dst = rec.dst_addr
        probe_id = rec.probe_id
        probe_asn = rec.probe_asn
        prev_idx, prev_addr, prev_rtts = hops[0]
        for i in range(1, n):
            idx, addr, rtts = hops[i]
            if idx - prev_idx == 1 and prev_addr is not None:
                counts = pattern_counts.get((prev_addr, dst))
                if counts is None:
                    counts = pattern_counts[(prev_addr, dst)] = {}
                k = len(rtts)
                if addr is not None and k:
                    counts[addr] = counts.get(addr, 0) + k
                    if prev_rtts and addr != prev_addr:
                        probes = link_pools.get((prev_addr, addr))
                        if probes is None:
                            probes = link_pools[(prev_addr, addr)] = {}
                        deltas = [ry - rx for rx in prev_rtts for ry in rtts]
                        entry = probes.get(probe_id)
                        if entry is None:
                            probes[probe_id] = (probe_asn, deltas)
                        else:
                            entry[1].extend(deltas)
                if k < packets_per_hop:
                    counts[unresponsive] = (
                        counts.get(unresponsive, 0) + packets_per_hop - k
                    )
            prev_idx, prev_addr, prev_rtts = idx, addr, rtts

    pools = {}
    for raw_key, probes in link_pools.items():
        key = LinkKey(*raw_key)
        pools[key] = LinkObservations(key, tbin, probes)
    patterns = {}
    for raw_key, counts in pattern_counts.items():
        key = PatternKey(*raw_key)
        patterns[key] = ForwardingPattern(key, tbin, counts)
    return pools, patterns


class Pipeline:
    """Stateful bin-sequential analysis over parsed traceroute records."""

    def __init__(self, config: Optional[PipelineConfig] = None, table=None):
        self.config = config or PipelineConfig()
        self.table = table
        self.delay_refs: Dict[LinkKey, DelayReference] = {}
        self.fw_refs: Dict[PatternKey, ForwardingReference] = {}
        self.aggregator = agg.SeverityAggregator(table)
        self.start_bin: Optional[int] = None
        self.last_bin: Optional[int] = None

    # -- state round trip ---------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        ckpt = Checkpoint(
            bin_width=self.config.bin_width,
            last_bin=self.last_bin if self.last_bin is not None else -1,
            start_bin=self.start_bin,
        )
        ckpt.delay_refs = self.delay_refs
        ckpt.fw_refs = self.fw_refs
        ckpt.series = self.aggregator.series
        ckpt.documents = self.aggregator.documents
        ckpt.links = self.aggregator.links
        return ckpt

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.bin_width != self.config.bin_width:
            raise ValueError(
                f"checkpoint bin width {ckpt.bin_width} != configured "
                f"{self.config.bin_width}"
            )
        self.delay_refs = ckpt.delay_refs
        self.fw_refs = ckpt.fw_refs
        self.aggregator.series = ckpt.series
        self.aggregator.documents = ckpt.documents
        self.aggregator.links = ckpt.links
        self.start_bin = ckpt.start_bin
        self.last_bin = ckpt.last_bin if ckpt.last_bin >= 0 else None

    # -- per-bin processing ---------------------------------------------------

    def _process_link(self, key: LinkKey, obs, tbin: TimeBin) -> Optional[DelayAlarm]:
        cfg = self.config
        verdict, filtered = enforce_diversity(
            obs,
            cfg.min_as,
            diversity_seed(cfg.seed, key, tbin.start),
            cfg.entropy_threshold,
        )
        if not verdict.accepted:
            return None
        est = characterize(
            filtered.all_deltas(), cfg.z, filtered.n_probes, len(filtered.as_counts)
        )
        ref = self.delay_refs.get(key)
        if ref is None:
            ref = self.delay_refs[key] = DelayReference()
        alarm = None
        if ref.ready and est.n_samples >= cfg.min_samples:
            alarm = detect(est, ref, cfg.min_diff_ms, key, tbin)
        update_reference(ref, est, cfg.alpha)
        return alarm

    def process_bin(
        self, bin_idx: int, records: List[TracerouteRecord]
    ) -> Tuple[List[DelayAlarm], List[ForwardingAlarm]]:
        cfg = self.config
        tbin = TimeBin(bin_idx * cfg.bin_width, cfg.bin_width)
        if self.start_bin is None:
            self.start_bin = bin_idx
        self.last_bin = bin_idx

        pools, patterns = scan_bin(records, tbin, cfg.packets_per_hop)
        keys = sorted(pools)
        if cfg.threads > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                results = list(
                    pool.map(lambda k: self._process_link(k, pools[k], tbin), keys)
                )
        else:
            results = [self._process_link(k, pools[k], tbin) for k in keys]
        delay_alarms = [a for a in results if a is not None]

        fw_alarms: List[ForwardingAlarm] = []
        for key in sorted(patterns):
            pattern = patterns[key]
            ref = self.fw_refs.get(key)
            if ref is not None:
                alarm = detect_forwarding(pattern, ref, cfg.tau)
                if alarm is not None:
                    fw_alarms.append(alarm)
            self.fw_refs[key] = update_fw_reference(ref, pattern, cfg.fw_alpha)

        for alarm in delay_alarms:
            self.aggregator.add_delay_alarm(alarm, bin_idx)
        for alarm in fw_alarms:
            self.aggregator.add_forwarding_alarm(alarm, bin_idx)
        return delay_alarms, fw_alarms

    # -- full runs ------------------------------------------------------------

    def run(
        self,
        records: Iterable[TracerouteRecord],
        on_alarms: Optional[Callable] = None,
        until_bin: Optional[int] = None,
    ) -> RunSummary:
        """Group records into bins and process bins in increasing order.

        Bins at or before a restored checkpoint's last bin are skipped, so
        re-running over the same input resumes exactly. ``until_bin`` stops
        after that bin (inclusive), leaving state ready to checkpoint.
        """
        cfg = self.config
        resume_after = self.last_bin if self.last_bin is not None else None
        summary = RunSummary()
        grouped: Dict[int, List[TracerouteRecord]] = {}
        width = cfg.bin_width
        n_records = 0
        for rec in records:
            b = int(rec.timestamp // width)
            if resume_after is not None and b <= resume_after:
                continue
            if until_bin is not None and b > until_bin:
                continue
            lst = grouped.get(b)
            if lst is None:
                lst = grouped[b] = []
            lst.append(rec)
            n_records += 1
        summary.records = n_records
        for b in sorted(grouped):
            delay_alarms, fw_alarms = self.process_bin(b, grouped[b])
            summary.bins += 1
            summary.delay_alarms += len(delay_alarms)
            summary.forwarding_alarms += len(fw_alarms)
            if on_alarms is not None:
                on_alarms(b, delay_alarms, fw_alarms)
        return summary

    def event_reports(
        self,
        window: int = agg.DEFAULT_WINDOW,
        threshold: float = agg.DEFAULT_MAG_THRESHOLD,
        topk: int = 10,
        event_scope: str = "contiguous",
    ) -> List[agg.EventReport]:
        if self.start_bin is None or self.last_bin is None:
            return []
        return agg.build_event_reports(
            self.aggregator,
            self.start_bin,
            self.last_bin - self.start_bin + 1,
            window,
            threshold,
            topk,
            event_scope,
        )


# -- output serialization ------------------------------------------------------


def delay_alarm_to_json(alarm: DelayAlarm, bin_idx: int) -> str:
    obs = alarm.observed
    doc = {
        "type": "delay",
        "bin": bin_idx,
        "bin_start": alarm.bin.start if alarm.bin else None,
        "near": alarm.link.near,
        "far": alarm.link.far,
        "deviation": alarm.deviation,
        "direction": alarm.direction,
        "median": obs.median,
        "ci_low": obs.ci_low,
        "ci_high": obs.ci_high,
        "n_samples": obs.n_samples,
        "n_probes": obs.n_probes,
        "n_asns": obs.n_asns,
        "ref_median": alarm.ref_median,
        "ref_low": alarm.ref_low,
        "ref_high": alarm.ref_high,
        "degenerate": alarm.degenerate,
    }
    return json.dumps(doc, sort_keys=True)


def forwarding_alarm_to_json(alarm: ForwardingAlarm, bin_idx: int) -> str:
    doc = {
        "type": "forwarding",
        "bin": bin_idx,
        "bin_start": alarm.bin.start if alarm.bin else None,
        "router": alarm.key.router,
        "dst": alarm.key.destination,
        "rho": alarm.rho,
        "responsibilities": dict(sorted(alarm.responsibilities.items())),
    }
    return json.dumps(doc, sort_keys=True)


def event_report_to_json(report: agg.EventReport) -> str:
    doc = {
        "type": "event",
        "asn": report.asn,
        "kind": report.kind,
        "start_bin": report.start_bin,
        "end_bin": report.end_bin,
        "peak_bin": report.peak_bin,
        "peak_magnitude": report.peak_magnitude,
        "prefixes": [[p, s] for p, s in report.characterization],
        "components": [
            {"nodes": comp.nodes, "edges": [list(e) for e in comp.edges]}
            for comp in report.components
        ],
    }
    return json.dumps(doc, sort_keys=True)
