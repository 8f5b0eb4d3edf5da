"""Per-link differential RTT extraction and probe-diversity filtering.

A link is a directed pair of IP addresses adjacent on a traceroute forward
path. For adjacent responsive hops X and Y the differential RTT samples are
all pairwise RTT(Y) - RTT(X) combinations, so one traceroute contributes one
to nine samples per link. Values may be negative: they embed return-path
asymmetry and only their fluctuation is meaningful.

Links monitored from too few origin ASes, or dominated by one AS, are
ambiguous (a shared return path is indistinguishable from the link itself),
so each per-bin sample pool is gated on AS count and normalized entropy
before characterization.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

from .ingest import TimeBin, TracerouteRecord


class LinkKey(NamedTuple):
    """Directed link as observed on the forward path."""

    near: str
    far: str


class DiversityVerdict(NamedTuple):
    accepted: bool
    entropy: float
    removed_probes: list


def extract_links(record: TracerouteRecord) -> Iterator[Tuple[LinkKey, List[float]]]:
    """Yield (link, differential RTT samples) for each adjacent hop pair.

    Adjacency requires hop indices differing by exactly 1 and both hops
    responsive; pairs separated by an unresponsive hop are not links.
    Records with fewer than two responsive hops yield nothing.
    """
    hops = record.hops
    n = len(hops)
    if n < 2:
        return
    prev_idx, prev_addr, prev_rtts = hops[0]
    for i in range(1, n):
        hop = hops[i]
        idx, addr, rtts = hop
        if (
            idx - prev_idx == 1
            and prev_rtts
            and rtts
            and prev_addr is not None
            and addr is not None
            and addr != prev_addr
        ):
            yield LinkKey(prev_addr, addr), [ry - rx for rx in prev_rtts for ry in rtts]
        prev_idx, prev_addr, prev_rtts = idx, addr, rtts


@dataclass
class LinkObservations:
    """Differential RTT samples for one link within one time bin.

    Samples are held per probe so diversity filtering can drop whole probes.
    """

    key: LinkKey
    bin: TimeBin
    # probe_id -> (probe_asn, [deltas])
    probes: Dict[int, Tuple[Optional[int], List[float]]] = field(default_factory=dict)

    def add(self, probe_id: int, probe_asn: Optional[int], deltas: List[float]) -> None:
        """Fold in one record's samples; adopts ``deltas`` without copying."""
        entry = self.probes.get(probe_id)
        if entry is None:
            self.probes[probe_id] = (probe_asn, deltas)
        else:
            entry[1].extend(deltas)

    @property
    def as_counts(self) -> Dict[int, int]:
        """Distinct probes per AS; probes with unknown ASN are not counted."""
        counts: Dict[int, int] = {}
        for asn, _ in self.probes.values():
            if asn is not None:
                counts[asn] = counts.get(asn, 0) + 1
        return counts

    @property
    def samples(self) -> List[Tuple[int, Optional[int], float]]:
        return [
            (pid, asn, d)
            for pid, (asn, deltas) in self.probes.items()
            for d in deltas
        ]

    def all_deltas(self) -> List[float]:
        out: List[float] = []
        for _, deltas in self.probes.values():
            out.extend(deltas)
        return out

    @property
    def n_samples(self) -> int:
        return sum(len(deltas) for _, deltas in self.probes.values())

    @property
    def n_probes(self) -> int:
        return len(self.probes)


def collect_link_observations(
    records, tbin: TimeBin
) -> Dict[LinkKey, LinkObservations]:
    """Merge per-record link samples into per-link pools for one bin.

    The merge is associative and commutative, so record subsets can be
    processed independently and combined.
    """
    pools: Dict[LinkKey, LinkObservations] = {}
    for rec in records:
        probe_id = rec.probe_id
        probe_asn = rec.probe_asn
        for key, deltas in extract_links(rec):
            obs = pools.get(key)
            if obs is None:
                obs = pools[key] = LinkObservations(key, tbin)
            obs.add(probe_id, probe_asn, deltas)
    return pools


def normalized_entropy(as_counts: Dict[int, int]) -> float:
    """Entropy of the probe-per-AS distribution, scaled to [0, 1].

    1.0 means probes are evenly spread over n >= 2 ASes, 0.0 means one AS
    holds everything. A single-AS distribution is 0.0 by convention.
    """
    if not as_counts:
        raise ValueError("entropy of empty AS distribution is undefined")
    counts = [c for c in as_counts.values() if c > 0]
    if not counts:
        raise ValueError("entropy needs at least one AS with probes")
    n = len(counts)
    if n == 1:
        return 0.0
    total = sum(counts)
    h = 0.0
    for c in counts:
        p = c / total
        h -= p * math.log(p)
    return h / math.log(n)


def diversity_seed(master_seed: int, key: LinkKey, bin_start: int) -> int:
    """Stable per-(link, bin) seed so results are independent of shard order."""
    material = f"{master_seed}|{key.near}|{key.far}|{bin_start}".encode()
    return int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "big")


def enforce_diversity(
    obs: LinkObservations,
    min_as: int = 3,
    rng_seed: int = 0,
    entropy_threshold: float = 0.5,
) -> Tuple[DiversityVerdict, Optional[LinkObservations]]:
    """Gate a link's per-bin pool on probe-AS diversity.

    Links seen from fewer than ``min_as`` ASes are rejected outright. While
    the entropy is at or below the threshold, one randomly chosen probe is
    discarded from whichever AS currently holds the most probes (ties broken
    toward the lowest ASN). Rejection also occurs if removals would push the
    AS count below ``min_as``. Deterministic for a given ``rng_seed``.
    """
    if min_as < 1:
        raise ValueError("min_as must be at least 1")
    counts = obs.as_counts
    if len(counts) < min_as:
        return DiversityVerdict(False, 0.0, []), None

    rng = random.Random(rng_seed)
    # probes grouped per AS, sorted for deterministic choice under one seed
    by_as: Dict[int, List[int]] = {}
    for pid, (asn, _) in obs.probes.items():
        if asn is not None:
            by_as.setdefault(asn, []).append(pid)
    for pids in by_as.values():
        pids.sort()

    removed: List[int] = []
    entropy = normalized_entropy({a: len(p) for a, p in by_as.items()})
    max_removals = sum(len(p) for p in by_as.values())
    for _ in range(max_removals):
        if entropy > entropy_threshold:
            break
        # most represented AS, lowest ASN on ties
        top_asn = min(by_as, key=lambda a: (-len(by_as[a]), a))
        pids = by_as[top_asn]
        victim = pids.pop(rng.randrange(len(pids)))
        removed.append(victim)
        if not pids:
            del by_as[top_asn]
        if len(by_as) < min_as:
            return DiversityVerdict(False, entropy, removed), None
        entropy = normalized_entropy({a: len(p) for a, p in by_as.items()})

    if entropy <= entropy_threshold:
        return DiversityVerdict(False, entropy, removed), None

    if not removed:
        return DiversityVerdict(True, entropy, []), obs

    dropped = set(removed)
    filtered = LinkObservations(
        obs.key,
        obs.bin,
        {pid: entry for pid, entry in obs.probes.items() if pid not in dropped},
    )
    return DiversityVerdict(True, entropy, removed), filtered
