import io
import json

import pytest

from tracewatch import synth
from tracewatch.ingest import PrefixTable


def make_record(
    probe_id=1,
    src="10.0.1.2",
    timestamp=0,
    dst="198.51.100.1",
    hops=(),
):
    """Build one ingest-schema document from (hop, addr, rtts) triples."""
    result = []
    for idx, addr, rtts in hops:
        if addr is None:
            slots = [{"x": "*"}] * 3
        else:
            slots = [{"from": addr, "rtt": r} for r in rtts]
        result.append({"hop": idx, "result": slots})
    return {
        "prb_id": probe_id,
        "from": src,
        "timestamp": timestamp,
        "dst_addr": dst,
        "result": result,
    }


def lines_of(*docs):
    return io.BytesIO(b"".join(json.dumps(d).encode() + b"\n" for d in docs))


@pytest.fixture(scope="session")
def fan_topology():
    return synth.default_topology()


@pytest.fixture(scope="session")
def fan_table(fan_topology):
    return PrefixTable.from_lines(fan_topology.pfx2as_lines())


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, fan_topology):
    """Shared synthetic corpora: baseline, congestion and loss runs."""
    root = tmp_path_factory.mktemp("corpora")
    (root / "pfx2as.txt").write_text("\n".join(fan_topology.pfx2as_lines()) + "\n")

    def write(name, script, bins, seed=42):
        with open(root / name, "w") as fh:
            for line in synth.generate(fan_topology, script, bins, seed):
                fh.write(line + "\n")

    write("baseline48.ndjson", None, 48)
    congestion = synth.AnomalyScript(
        [synth.Congestion("172.16.0.1", "172.16.0.2", 30, 31, 15.0, 1.0)]
    )
    write("congestion48.ndjson", congestion, 48)
    loss = synth.AnomalyScript([synth.Loss("172.16.0.1", 8, 8, 0.9)])
    write("loss12.ndjson", loss, 12)
    return root
