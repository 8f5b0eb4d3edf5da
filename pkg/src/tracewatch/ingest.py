"""Traceroute record parsing, IP-to-ASN mapping and time binning.

Input is newline-delimited JSON, one traceroute per line, following the
public RIPE Atlas result layout::

    {"prb_id": 123, "from": "10.0.1.2", "timestamp": 1446178800,
     "dst_addr": "198.51.100.1",
     "result": [{"hop": 1, "result": [{"from": "10.0.0.1", "rtt": 1.9},
                                      {"x": "*"}, ...]}, ...]}

Malformed lines are skipped and counted, never fatal; an unreadable
stream is.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from ipaddress import ip_address, ip_network
from typing import IO, Iterable, Iterator, List, NamedTuple, Optional

import msgspec

# Default number of probe packets sent per hop (Atlas default).
PACKETS_PER_HOP = 3

_INF = math.inf


class IngestError(Exception):
    """Fatal ingestion failure (unreadable stream), with the line number."""

    def __init__(self, message: str, line_number: int = 0):
        super().__init__(message)
        self.line_number = line_number


class Hop(NamedTuple):
    """One traceroute hop: responding address (None = unresponsive) and RTTs."""

    hop_index: int
    from_addr: Optional[str]
    rtts: list


class TracerouteRecord(NamedTuple):
    """One probe-to-destination measurement with its ordered hops."""

    probe_id: int
    probe_asn: Optional[int]
    timestamp: float
    src_addr: Optional[str]
    dst_addr: str
    hops: list


@dataclass(slots=True)
class ParseStats:
    """Line accounting for one parse pass."""

    lines: int = 0
    parsed: int = 0
    skipped: int = 0


class _SlotDoc(msgspec.Struct, gc=False):
    """One probe packet: a reply (from/rtt), a timeout (x) or an error."""

    rtt: Optional[float] = None
    from_: Optional[str] = msgspec.field(name="from", default=None)


class _HopDoc(msgspec.Struct, gc=False):
    hop: int = 0
    result: Optional[List[_SlotDoc]] = None


class _RecordDoc(msgspec.Struct, gc=False):
    prb_id: int
    timestamp: float
    dst_addr: str
    result: List[_HopDoc]
    from_: Optional[str] = msgspec.field(name="from", default=None)


_decode_record = msgspec.json.Decoder(_RecordDoc).decode


def parse_records(
    stream: IO[bytes] | Iterable[bytes],
    table: Optional["PrefixTable"] = None,
    stats: Optional[ParseStats] = None,
) -> Iterator[TracerouteRecord]:
    """Yield valid traceroute records from a byte stream, in input order.

    Lines that are not valid documents (bad JSON, missing or mistyped
    required fields) are counted in ``stats.skipped`` and skipped. Within a
    valid document, defensive cleanup applies: duplicate or out-of-order
    hop entries keep the first occurrence, stray responders beyond the
    first address of a hop are dropped, and non-positive RTT samples are
    dropped individually.

    When a prefix table is given, each record's probe ASN is resolved from
    its source address by longest-prefix match (cached per address).

    Raises IngestError if the stream itself cannot be read.
    """
    if stats is None:
        stats = ParseStats()
    missing = object()
    asn_cache: dict = {}
    lookup = table.lookup if table is not None else (lambda addr: None)
    decode = _decode_record
    hop_cls = Hop
    rec_cls = TracerouteRecord
    inf = _INF

    lineno = 0
    n_parsed = n_skipped = 0
    try:
        for raw in stream:
            lineno += 1
            try:
                doc = decode(raw)
            except (msgspec.DecodeError, msgspec.ValidationError):
                n_skipped += 1
                continue
            hops = []
            last_idx = 0
            for h in doc.result:
                idx = h.hop
                # duplicate or out-of-order hop entries: first occurrence wins
                if idx <= last_idx:
                    continue
                last_idx = idx
                addr = None
                rtts = []
                slots = h.result
                if slots is not None:
                    for slot in slots:
                        a = slot.from_
                        if a is None:
                            continue
                        # first responding address wins; stray responders dropped
                        if addr is None:
                            addr = a
                        elif a != addr:
                            continue
                        r = slot.rtt
                        if r is not None and 0.0 < r < inf:
                            rtts.append(r)
                hops.append(hop_cls(idx, addr, rtts))
            src = doc.from_
            if src:
                asn = asn_cache.get(src, missing)
                if asn is missing:
                    asn = asn_cache[src] = lookup(src)
            else:
                asn = None
            n_parsed += 1
            yield rec_cls(doc.prb_id, asn, doc.timestamp, src, doc.dst_addr, hops)
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"unreadable input at line {lineno + 1}: {exc}", lineno + 1)
    finally:
        stats.lines += lineno
        stats.parsed += n_parsed
        stats.skipped += n_skipped


def record_to_dict(rec: TracerouteRecord) -> dict:
    """Re-serialize a record into the input schema (lossless round trip)."""
    result = []
    for hop in rec.hops:
        slots = [{"from": hop.from_addr, "rtt": r} for r in hop.rtts]
        if not slots:
            slots = [{"x": "*"}] * PACKETS_PER_HOP
        result.append({"hop": hop.hop_index, "result": slots})
    doc = {
        "prb_id": rec.probe_id,
        "timestamp": rec.timestamp,
        "dst_addr": rec.dst_addr,
        "result": result,
    }
    if rec.src_addr is not None:
        doc["from"] = rec.src_addr
    return doc


class PrefixTable:
    """Longest-prefix-match IP-to-ASN lookup.

    Entries are bucketed by (ip version, prefix length) so a lookup scans
    prefix lengths from most to least specific and stops at the first hit.
    Immutable once loaded; safe to share across workers.
    """

    def __init__(self):
        # (version, length) -> {network_int: asn}
        self._buckets: dict = {}
        self._lengths_v4: list = []
        self._lengths_v6: list = []
        self._cache: dict = {}
        self.entries: list = []

    def add(self, prefix: str, asn: int) -> None:
        net = ip_network(prefix, strict=False)
        ver, length = net.version, net.prefixlen
        bucket = self._buckets.setdefault((ver, length), {})
        bucket[int(net.network_address)] = asn
        lengths = self._lengths_v4 if ver == 4 else self._lengths_v6
        if length not in lengths:
            lengths.append(length)
            lengths.sort(reverse=True)
        self.entries.append((net, asn))
        self._cache.clear()

    def lookup(self, addr: Optional[str]) -> Optional[int]:
        """ASN of the most specific covering prefix, or None."""
        if not addr:
            return None
        try:
            return self._cache[addr]
        except KeyError:
            pass
        try:
            ip = ip_address(addr)
        except ValueError:
            self._cache[addr] = None
            return None
        val = int(ip)
        bits = 32 if ip.version == 4 else 128
        lengths = self._lengths_v4 if ip.version == 4 else self._lengths_v6
        buckets = self._buckets
        result = None
        for length in lengths:
            prefix_int = (val >> (bits - length)) << (bits - length) if length else 0
            asn = buckets[(ip.version, length)].get(prefix_int)
            if asn is not None:
                result = asn
                break
        self._cache[addr] = result
        return result

    def lookup_bruteforce(self, addr: str) -> Optional[int]:
        """Reference scan over every entry; slow, for cross-checking only."""
        try:
            ip = ip_address(addr)
        except ValueError:
            return None
        best_len, best_asn = -1, None
        for net, asn in self.entries:
            # >= keeps the last of duplicate prefixes, matching add() overwrite
            if ip.version == net.version and ip in net and net.prefixlen >= best_len:
                best_len, best_asn = net.prefixlen, asn
        return best_asn

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "PrefixTable":
        """Load pfx2as-style lines: ``prefix<TAB>length<TAB>asn``.

        Multi-origin ASN fields ("100_200" or "100,200") keep the first ASN.
        """
        table = cls()
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                continue
            prefix, length, asn_field = parts[0], parts[1], parts[2]
            asn_str = asn_field.replace(",", "_").split("_")[0]
            try:
                table.add(f"{prefix}/{int(length)}", int(asn_str))
            except ValueError:
                continue
        return table

    @classmethod
    def from_file(cls, path: str) -> "PrefixTable":
        with io.open(path, "r", encoding="utf-8") as fh:
            return cls.from_lines(fh)


class TimeBin(NamedTuple):
    """Half-open interval [start, start + width)."""

    start: int
    width: int


@dataclass
class BinConfig:
    """Time-bin geometry; width in seconds, > 0."""

    width: int = 3600

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("bin width must be positive")


def assign_bin(ts: float, cfg: BinConfig) -> TimeBin:
    """Bin containing ts: every timestamp maps to exactly one bin."""
    width = cfg.width
    index = math.floor(ts / width)
    return TimeBin(index * width, width)


def bin_index(ts: float, width: int) -> int:
    """Ordinal bin number floor(ts / width); bins partition the time axis."""
    return math.floor(ts / width)
