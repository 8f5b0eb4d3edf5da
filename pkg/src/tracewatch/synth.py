"""Ground-truth traceroute generator over a synthetic multi-AS topology.

Produces newline-delimited records in the ingest schema from a declarative
topology (probes, routers, link delays, forward paths) plus an anomaly
script (congestion, loss, reroute events pinned to bins). Per-hop RTT is
the forward path delay up to the hop, plus a per-(router, probe) return
path term held constant across bins, plus heavy-tailed noise with rare
outlier spikes. Output is byte-identical for identical inputs and seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Tuple

DEFAULT_BIN_WIDTH = 3600
DEFAULT_RATE_PER_HOUR = 2  # builtin-cadence default: one traceroute per 30 min
DEFAULT_LINK_MS = 5.0
DEFAULT_UPLINK_MS = 2.0


class SynthProbe(NamedTuple):
    probe_id: int
    src_addr: str
    asn: int


class Congestion(NamedTuple):
    near: str
    far: str
    start_bin: int
    end_bin: int
    added_ms: float
    jitter_ms: float = 0.0


class Loss(NamedTuple):
    router: str
    start_bin: int
    end_bin: int
    drop_prob: float


class Reroute(NamedTuple):
    router: str
    old_next: str
    new_next: str
    start_bin: int
    end_bin: int


@dataclass
class AnomalyScript:
    events: List = field(default_factory=list)

    def active(self, kind, bin_idx: int):
        return [
            e for e in self.events
            if isinstance(e, kind) and e.start_bin <= bin_idx <= e.end_bin
        ]


@dataclass
class NoiseModel:
    """Per-sample lognormal noise with occasional large outliers."""

    median_ms: float = 0.3
    sigma: float = 0.6
    outlier_prob: float = 0.01
    outlier_scale: Tuple[float, float] = (10.0, 100.0)

    def sample(self, rng: random.Random) -> float:
        value = rng.lognormvariate(math.log(self.median_ms), self.sigma)
        if self.outlier_prob > 0.0 and rng.random() < self.outlier_prob:
            value *= rng.uniform(*self.outlier_scale)
        return value


@dataclass
class SynthTopology:
    probes: List[SynthProbe] = field(default_factory=list)
    routers: Dict[str, int] = field(default_factory=dict)  # ip -> asn
    destinations: List[str] = field(default_factory=list)
    links: Dict[Tuple[str, str], float] = field(default_factory=dict)
    # (probe_id, dst) -> ordered hop addresses, last one the destination
    paths: Dict[Tuple[int, str], List[str]] = field(default_factory=dict)
    eps_overrides: Dict[Tuple[str, int], float] = field(default_factory=dict)
    uplinks: Dict[int, float] = field(default_factory=dict)

    def link_delay(self, near: str, far: str) -> float:
        return self.links.get((near, far), DEFAULT_LINK_MS)

    def validate_script(self, script: AnomalyScript) -> None:
        """Every scripted event must reference existing topology elements."""
        for ev in script.events:
            if isinstance(ev, Congestion):
                if (ev.near, ev.far) not in self.links:
                    raise ValueError(f"congestion on unknown link {ev.near}->{ev.far}")
            elif isinstance(ev, Loss):
                if ev.router not in self.routers:
                    raise ValueError(f"loss at unknown router {ev.router}")
            elif isinstance(ev, Reroute):
                for addr in (ev.router, ev.old_next, ev.new_next):
                    if addr not in self.routers and addr not in self.destinations:
                        raise ValueError(f"reroute references unknown node {addr}")
            else:
                raise ValueError(f"unknown event type {ev!r}")

    def pfx2as_lines(self) -> List[str]:
        """Host-route prefix table covering every address in the topology."""
        lines = []
        for probe in self.probes:
            length = 32 if ":" not in probe.src_addr else 128
            lines.append(f"{probe.src_addr}\t{length}\t{probe.asn}")
        for ip, asn in self.routers.items():
            length = 32 if ":" not in ip else 128
            lines.append(f"{ip}\t{length}\t{asn}")
        return sorted(set(lines))


def _stable_int(*parts) -> int:
    material = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "big")


def _eps(topology: SynthTopology, seed: int, router: str, probe_id: int) -> float:
    """Return-path delay term, constant for a (router, probe) pair."""
    override = topology.eps_overrides.get((router, probe_id))
    if override is not None:
        return override
    return 3.0 * (_stable_int(seed, "eps", router, probe_id) % 10_000) / 10_000.0


def _effective_path(
    path: List[str], script: AnomalyScript, bin_idx: int
) -> List[str]:
    reroutes = script.active(Reroute, bin_idx)
    if not reroutes:
        return path
    path = list(path)
    for ev in reroutes:
        for i in range(len(path) - 1):
            if path[i] == ev.router and path[i + 1] == ev.old_next:
                path[i + 1] = ev.new_next
    return path


def generate(
    topology: SynthTopology,
    script: Optional[AnomalyScript],
    bins: int,
    rng_seed: int,
    rate_per_hour: float = DEFAULT_RATE_PER_HOUR,
    bin_width: int = DEFAULT_BIN_WIDTH,
    noise: Optional[NoiseModel] = None,
    packets_per_hop: int = 3,
) -> Iterator[str]:
    """Yield traceroute records (JSON lines) for ``bins`` consecutive bins.

    Deterministic: per-traceroute RNG streams are derived from the seed and
    the traceroute's coordinates, so output does not depend on iteration
    parallelism or prior state.
    """
    if script is None:
        script = AnomalyScript()
    topology.validate_script(script)
    if noise is None:
        noise = NoiseModel()

    per_bin = max(1, round(rate_per_hour * bin_width / 3600.0))
    interval = bin_width // per_bin
    probes = sorted(topology.probes)
    destinations = sorted(topology.destinations)

    for bin_idx in range(bins):
        bin_start = bin_idx * bin_width
        congestions = script.active(Congestion, bin_idx)
        losses = script.active(Loss, bin_idx)
        drop_at = {ev.router: ev.drop_prob for ev in losses}
        for probe in probes:
            for dst in destinations:
                base_path = topology.paths.get((probe.probe_id, dst))
                if not base_path:
                    continue
                path = _effective_path(base_path, script, bin_idx)
                # cumulative forward delay and congestion surcharge per hop
                cum = [topology.uplinks.get(probe.probe_id, DEFAULT_UPLINK_MS)]
                for i in range(1, len(path)):
                    cum.append(cum[-1] + topology.link_delay(path[i - 1], path[i]))
                surcharge = [0.0] * len(path)
                jitter_bound = [0.0] * len(path)
                for ev in congestions:
                    for i in range(1, len(path)):
                        if path[i - 1] == ev.near and path[i] == ev.far:
                            for j in range(i, len(path)):
                                surcharge[j] += ev.added_ms
                                jitter_bound[j] += ev.jitter_ms
                eps_cache = [
                    _eps(topology, rng_seed, hop, probe.probe_id) for hop in path
                ]
                for rep in range(per_bin):
                    rng = random.Random(
                        _stable_int(rng_seed, bin_idx, probe.probe_id, dst, rep)
                    )
                    offset = _stable_int(rng_seed, "ts", probe.probe_id, dst) % interval
                    ts = bin_start + rep * interval + offset
                    result = []
                    for i, hop_addr in enumerate(path):
                        slots = []
                        drop = drop_at.get(hop_addr, 0.0)
                        jitter = jitter_bound[i]
                        for _ in range(packets_per_hop):
                            if drop and rng.random() < drop:
                                slots.append({"x": "*"})
                                continue
                            rtt = cum[i] + surcharge[i] + eps_cache[i] + noise.sample(rng)
                            if jitter:
                                rtt += rng.uniform(0.0, jitter)
                            slots.append({"from": hop_addr, "rtt": round(rtt, 3)})
                        result.append({"hop": i + 1, "result": slots})
                    doc = {
                        "prb_id": probe.probe_id,
                        "from": probe.src_addr,
                        "timestamp": ts,
                        "dst_addr": dst,
                        "result": result,
                    }
                    yield json.dumps(doc, separators=(",", ":"))


def default_topology(
    n_ases: int = 5, probes_per_as: int = 4, n_dests: int = 2
) -> SynthTopology:
    """Small multi-AS fan: per-AS access routers feeding a shared backbone.

    Probes from each AS reach every destination through their access router,
    a common backbone pair, and a destination edge, so backbone links are
    seen from all ASes (full probe diversity) while access links are
    single-AS and get filtered.
    """
    topo = SynthTopology()
    backbone_a, backbone_b = "172.16.0.1", "172.16.0.2"
    topo.routers[backbone_a] = 64510
    topo.routers[backbone_b] = 64510
    for j in range(1, n_ases + 1):
        asn = 64500 + j
        access = f"10.{j}.0.1"
        topo.routers[access] = asn
        topo.links[(access, backbone_a)] = 5.0
        for i in range(probes_per_as):
            probe_id = 1000 + (j - 1) * probes_per_as + i
            topo.probes.append(SynthProbe(probe_id, f"10.{j}.1.{i + 1}", asn))
    topo.links[(backbone_a, backbone_b)] = 10.0
    for d in range(1, n_dests + 1):
        dst = f"198.51.{99 + d}.1"
        topo.routers[dst] = 64600 + d
        topo.destinations.append(dst)
        topo.links[(backbone_b, dst)] = 3.0
    for probe in topo.probes:
        access = f"10.{(probe.probe_id - 1000) // probes_per_as + 1}.0.1"
        for dst in topo.destinations:
            topo.paths[(probe.probe_id, dst)] = [access, backbone_a, backbone_b, dst]
    return topo


def parse_topology(lines: Iterable[str]) -> SynthTopology:
    """Load a topology from its line-oriented text form.

    Grammar (one directive per line, '#' starts a comment)::

        probe  <id> <src_addr> <asn>
        router <ip> <asn>
        dest   <ip> <asn>
        link   <near_ip> <far_ip> <delay_ms>
        path   <probe_id> <dst_ip> <hop_ip> [<hop_ip> ...]
        eps    <router_ip> <probe_id> <ms>
        uplink <probe_id> <ms>
    """
    topo = SynthTopology()
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "probe":
                topo.probes.append(SynthProbe(int(args[0]), args[1], int(args[2])))
            elif kind == "router":
                topo.routers[args[0]] = int(args[1])
            elif kind == "dest":
                topo.routers[args[0]] = int(args[1])
                topo.destinations.append(args[0])
            elif kind == "link":
                topo.links[(args[0], args[1])] = float(args[2])
            elif kind == "path":
                topo.paths[(int(args[0]), args[1])] = list(args[2:])
            elif kind == "eps":
                topo.eps_overrides[(args[0], int(args[1]))] = float(args[2])
            elif kind == "uplink":
                topo.uplinks[int(args[0])] = float(args[1])
            else:
                raise ValueError(f"unknown directive {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"topology line {lineno}: {exc}") from exc
    return topo


def parse_script(lines: Iterable[str]) -> AnomalyScript:
    """Load an anomaly script from its line-oriented text form.

    Grammar (bins are inclusive indices)::

        congestion <near_ip> <far_ip> <start_bin> <end_bin> <added_ms> [jitter_ms]
        loss       <router_ip> <start_bin> <end_bin> <drop_prob>
        reroute    <router_ip> <old_next_ip> <new_next_ip> <start_bin> <end_bin>
    """
    script = AnomalyScript()
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "congestion":
                jitter = float(args[5]) if len(args) > 5 else 0.0
                script.events.append(
                    Congestion(args[0], args[1], int(args[2]), int(args[3]),
                               float(args[4]), jitter)
                )
            elif kind == "loss":
                script.events.append(
                    Loss(args[0], int(args[1]), int(args[2]), float(args[3]))
                )
            elif kind == "reroute":
                script.events.append(
                    Reroute(args[0], args[1], args[2], int(args[3]), int(args[4]))
                )
            else:
                raise ValueError(f"unknown directive {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"script line {lineno}: {exc}") from exc
    return script
