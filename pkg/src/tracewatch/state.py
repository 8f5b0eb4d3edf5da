"""Checkpointing of detector references and aggregation state.

A checkpoint is a two-line text file: a self-describing header with format
name, version and the SHA-256 of the payload, then one canonical JSON
payload line (keys sorted, floats via repr so doubles round-trip exactly).
Saving is atomic (temp file + rename): a failed save never corrupts the
previous checkpoint. Restoring and re-saving without processing yields a
byte-identical file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .aggregate import AsSeries
from .delay import DelayReference
from .forwarding import ForwardingReference, PatternKey
from .links import LinkKey

FORMAT_NAME = "tracewatch-checkpoint"
FORMAT_VERSION = 1

_SEP = "|"


class CheckpointError(Exception):
    """Checkpoint file cannot be used."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint payload does not match its checksum."""


@dataclass
class Checkpoint:
    """Complete resumable pipeline state at a bin boundary."""

    bin_width: int
    last_bin: int
    start_bin: Optional[int] = None
    delay_refs: Dict[LinkKey, DelayReference] = field(default_factory=dict)
    fw_refs: Dict[PatternKey, ForwardingReference] = field(default_factory=dict)
    series: Dict[int, AsSeries] = field(default_factory=dict)
    documents: Dict[Tuple[int, str], Dict[int, List[str]]] = field(default_factory=dict)
    links: Dict[int, Dict[int, List[Tuple[str, str]]]] = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "last_bin": self.last_bin,
            "start_bin": self.start_bin,
            "delay_refs": {
                _SEP.join(key): {
                    "median": ref.ref_median,
                    "low": ref.ref_low,
                    "high": ref.ref_high,
                    "bins": ref.bins_observed,
                    "warmup": [list(w) for w in ref.warmup],
                }
                for key, ref in self.delay_refs.items()
            },
            "fw_refs": {
                _SEP.join(key): {"counts": ref.ref_counts, "bins": ref.bins_observed}
                for key, ref in self.fw_refs.items()
            },
            "series": {
                str(asn): {
                    "delay": {str(b): v for b, v in entry.delay_series.items()},
                    "fw": {str(b): v for b, v in entry.fw_series.items()},
                }
                for asn, entry in self.series.items()
            },
            "documents": {
                f"{asn}{_SEP}{kind}": {str(b): terms for b, terms in docs.items()}
                for (asn, kind), docs in self.documents.items()
            },
            "links": {
                str(asn): {
                    str(b): [list(pair) for pair in pairs]
                    for b, pairs in by_bin.items()
                }
                for asn, by_bin in self.links.items()
            },
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Checkpoint":
        ckpt = cls(bin_width=payload["bin_width"], last_bin=payload["last_bin"])
        ckpt.start_bin = payload.get("start_bin")
        for key_str, data in payload["delay_refs"].items():
            near, far = key_str.split(_SEP)
            ckpt.delay_refs[LinkKey(near, far)] = DelayReference(
                ref_median=data["median"],
                ref_low=data["low"],
                ref_high=data["high"],
                bins_observed=data["bins"],
                warmup=[tuple(w) for w in data["warmup"]],
            )
        for key_str, data in payload["fw_refs"].items():
            router, dst = key_str.split(_SEP)
            ckpt.fw_refs[PatternKey(router, dst)] = ForwardingReference(
                PatternKey(router, dst), dict(data["counts"]), data["bins"]
            )
        for asn_str, entry in payload["series"].items():
            asn = int(asn_str)
            ckpt.series[asn] = AsSeries(
                asn,
                {int(b): v for b, v in entry["delay"].items()},
                {int(b): v for b, v in entry["fw"].items()},
            )
        for key_str, docs in payload["documents"].items():
            asn_str, kind = key_str.split(_SEP)
            ckpt.documents[(int(asn_str), kind)] = {
                int(b): list(terms) for b, terms in docs.items()
            }
        for asn_str, by_bin in payload["links"].items():
            ckpt.links[int(asn_str)] = {
                int(b): [tuple(pair) for pair in pairs]
                for b, pairs in by_bin.items()
            }
        return ckpt


def save(checkpoint: Checkpoint, path: str) -> None:
    """Atomically write the checkpoint with an integrity checksum."""
    payload = json.dumps(checkpoint.to_payload(), sort_keys=True)
    digest = hashlib.sha256(payload.encode()).hexdigest()
    header = json.dumps(
        {"format": FORMAT_NAME, "version": FORMAT_VERSION, "sha256": digest},
        sort_keys=True,
    )
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(header + "\n" + payload + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str) -> Checkpoint:
    """Read and verify a checkpoint; raises on version or integrity mismatch."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        payload_line = fh.readline().rstrip("\n")
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"not a {FORMAT_NAME} file")
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} != supported {FORMAT_VERSION}"
        )
    digest = hashlib.sha256(payload_line.encode()).hexdigest()
    if digest != header.get("sha256"):
        raise CheckpointIntegrityError("checkpoint payload checksum mismatch")
    return Checkpoint.from_payload(json.loads(payload_line))
