"""Command-line interface.

Subcommands:
    run          full pipeline over a traceroute file, emitting alarm NDJSON
    synth        generate a synthetic ground-truth corpus
    magnitude    per-AS disruption magnitudes from an alarm file
    characterize TF-IDF prefix ranking for one AS and bin range
    mindetect    minimum detectable event duration calculator
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional, Tuple

from . import aggregate as agg
from . import pipeline as pl
from . import state as state_mod
from . import synth as synth_mod
from .delay import DelayAlarm, MedianEstimate, min_detectable_event
from .forwarding import ForwardingAlarm, PatternKey
from .ingest import IngestError, ParseStats, PrefixTable, TimeBin, parse_records
from .links import LinkKey

log = logging.getLogger("tracewatch")


def _open_input(path: str):
    if path == "-":
        return sys.stdin.buffer
    return open(path, "rb")


def _open_output(path: Optional[str], mode: str = "a"):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, mode, encoding="utf-8"), True


def _add_run_parser(sub) -> None:
    p = sub.add_parser("run", help="run the analysis pipeline over a record file")
    p.add_argument("--input", required=True, help="NDJSON traceroute file, or - for stdin")
    p.add_argument("--pfx2as", required=True, help="prefix-to-ASN table file")
    p.add_argument("--output", default="-", help="alarm NDJSON output (append), - for stdout")
    p.add_argument("--events-output", default=None, help="event NDJSON output (append)")
    p.add_argument("--bin-width", type=int, default=3600, help="bin width, seconds")
    p.add_argument("--min-as", type=int, default=3, help="minimum distinct probe ASes per link")
    p.add_argument("--entropy-threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0, help="diversity-filter RNG seed")
    p.add_argument("--alpha", type=float, default=0.01, help="delay reference smoothing factor")
    p.add_argument("--min-diff-ms", type=float, default=1.0)
    p.add_argument("--z", type=float, default=1.96, help="confidence coefficient")
    p.add_argument("--min-samples", type=int, default=9)
    p.add_argument("--tau", type=float, default=-0.25, help="forwarding anomaly threshold")
    p.add_argument("--fw-alpha", type=float, default=0.01)
    p.add_argument("--window", type=int, default=168, help="magnitude sliding window, bins")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--mag-threshold", type=float, default=5.0)
    p.add_argument("--event-scope", choices=("contiguous", "peak"), default="contiguous")
    p.add_argument("--state", default=None, help="checkpoint file to resume from / save to")
    p.add_argument("--until-bin", type=int, default=None, help="stop after this bin index")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--probe-rate", type=float, default=None,
                   help="declared traceroutes/hour per probe (bin-width conformance check)")
    p.add_argument("--probes-per-link", type=int, default=None,
                   help="declared probes per link (bin-width conformance check)")


def _cmd_run(args) -> int:
    if args.min_as < 3:
        log.warning("min-as=%d below 3 trades accuracy for coverage", args.min_as)
    if args.probe_rate is not None and args.probes_per_link is not None:
        try:
            min_detectable_event(args.probe_rate, args.probes_per_link, args.bin_width / 3600.0)
        except ValueError as exc:
            log.error("configuration conflict: %s", exc)
            return 2

    table = PrefixTable.from_file(args.pfx2as)
    config = pl.PipelineConfig(
        bin_width=args.bin_width,
        min_as=args.min_as,
        entropy_threshold=args.entropy_threshold,
        seed=args.seed,
        alpha=args.alpha,
        min_diff_ms=args.min_diff_ms,
        z=args.z,
        min_samples=args.min_samples,
        tau=args.tau,
        fw_alpha=args.fw_alpha,
        threads=args.threads,
    )
    pipeline = pl.Pipeline(config, table)
    if args.state is not None:
        try:
            pipeline.restore(state_mod.load(args.state))
            log.info("resumed from %s at bin %s", args.state, pipeline.last_bin)
        except FileNotFoundError:
            pass
        except (state_mod.CheckpointError, ValueError) as exc:
            log.error("cannot resume from %s: %s", args.state, exc)
            return 2

    stats = ParseStats()
    try:
        stream = _open_input(args.input)
    except OSError as exc:
        log.error("fatal ingestion error: %s", exc)
        return 1

    out, close_out = _open_output(args.output)
    write = out.write

    def on_alarms(bin_idx, delay_alarms, fw_alarms):
        for alarm in delay_alarms:
            write(pl.delay_alarm_to_json(alarm, bin_idx) + "\n")
        for alarm in fw_alarms:
            write(pl.forwarding_alarm_to_json(alarm, bin_idx) + "\n")

    try:
        records = parse_records(stream, table, stats)
        summary = pipeline.run(records, on_alarms, until_bin=args.until_bin)
    except IngestError as exc:
        log.error("fatal ingestion error: %s", exc)
        return 1
    finally:
        if stream is not sys.stdin.buffer:
            stream.close()
        out.flush()
        if close_out:
            out.close()

    if stats.skipped:
        log.info("skipped %d malformed line(s) of %d", stats.skipped, stats.lines)
    log.info(
        "processed %d records in %d bins: %d delay alarm(s), %d forwarding alarm(s)",
        summary.records, summary.bins, summary.delay_alarms, summary.forwarding_alarms,
    )

    if args.events_output is not None:
        reports = pipeline.event_reports(
            args.window, args.mag_threshold, args.topk, args.event_scope
        )
        ev_out, close_ev = _open_output(args.events_output)
        for report in reports:
            ev_out.write(pl.event_report_to_json(report) + "\n")
        ev_out.flush()
        if close_ev:
            ev_out.close()
        log.info("emitted %d event report(s)", len(reports))

    if args.state is not None:
        state_mod.save(pipeline.to_checkpoint(), args.state)
        log.info("checkpoint saved to %s", args.state)
    return 0


def _add_synth_parser(sub) -> None:
    p = sub.add_parser("synth", help="generate a synthetic traceroute corpus")
    p.add_argument("--topology", default=None, help="topology file (default: built-in fan)")
    p.add_argument("--script", default=None, help="anomaly script file")
    p.add_argument("--bins", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=2.0, help="traceroutes/hour per probe")
    p.add_argument("--bin-width", type=int, default=3600)
    p.add_argument("--output", default="-")
    p.add_argument("--emit-pfx2as", default=None, help="write the matching prefix table here")
    p.add_argument("--ases", type=int, default=5, help="built-in topology: AS count")
    p.add_argument("--probes-per-as", type=int, default=4)
    p.add_argument("--dests", type=int, default=2)
    p.add_argument("--noise-median", type=float, default=0.3)
    p.add_argument("--noise-sigma", type=float, default=0.6)
    p.add_argument("--outlier-prob", type=float, default=0.01)


def _cmd_synth(args) -> int:
    if args.topology is not None:
        with open(args.topology, "r", encoding="utf-8") as fh:
            topology = synth_mod.parse_topology(fh)
    else:
        topology = synth_mod.default_topology(args.ases, args.probes_per_as, args.dests)
    script = None
    if args.script is not None:
        with open(args.script, "r", encoding="utf-8") as fh:
            script = synth_mod.parse_script(fh)
    if args.emit_pfx2as is not None:
        with open(args.emit_pfx2as, "w", encoding="utf-8") as fh:
            fh.write("\n".join(topology.pfx2as_lines()) + "\n")
    noise = synth_mod.NoiseModel(
        median_ms=args.noise_median,
        sigma=args.noise_sigma,
        outlier_prob=args.outlier_prob,
    )
    out, close_out = _open_output(args.output, mode="w")
    count = 0
    for line in synth_mod.generate(
        topology, script, args.bins, args.seed,
        rate_per_hour=args.rate, bin_width=args.bin_width, noise=noise,
    ):
        out.write(line + "\n")
        count += 1
    out.flush()
    if close_out:
        out.close()
    log.info("generated %d records over %d bins", count, args.bins)
    return 0


def load_alarms(path: str) -> Tuple[List[Tuple[int, DelayAlarm]], List[Tuple[int, ForwardingAlarm]]]:
    """Read an alarm NDJSON file back into alarm tuples with bin indices."""
    delay: List[Tuple[int, DelayAlarm]] = []
    forwarding: List[Tuple[int, ForwardingAlarm]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("type") == "delay":
                est = MedianEstimate(
                    doc["median"], doc["ci_low"], doc["ci_high"],
                    doc["n_samples"], doc["n_probes"], doc["n_asns"],
                )
                delay.append((
                    doc["bin"],
                    DelayAlarm(
                        LinkKey(doc["near"], doc["far"]),
                        TimeBin(doc["bin_start"], 0) if doc.get("bin_start") is not None else None,
                        doc["deviation"], doc["direction"], est,
                        doc["ref_median"], doc["ref_low"], doc["ref_high"],
                        doc.get("degenerate", False),
                    ),
                ))
            elif doc.get("type") == "forwarding":
                forwarding.append((
                    doc["bin"],
                    ForwardingAlarm(
                        PatternKey(doc["router"], doc["dst"]),
                        TimeBin(doc["bin_start"], 0) if doc.get("bin_start") is not None else None,
                        doc["rho"], dict(doc["responsibilities"]),
                    ),
                ))
    return delay, forwarding


def _aggregator_from_alarms(path: str, table: Optional[PrefixTable]) -> Tuple[agg.SeverityAggregator, Optional[int], Optional[int]]:
    aggregator = agg.SeverityAggregator(table)
    delay, forwarding = load_alarms(path)
    bins = [b for b, _ in delay] + [b for b, _ in forwarding]
    for b, alarm in delay:
        aggregator.add_delay_alarm(alarm, b)
    for b, alarm in forwarding:
        aggregator.add_forwarding_alarm(alarm, b)
    if not bins:
        return aggregator, None, None
    return aggregator, min(bins), max(bins)


def _parse_range(text: Optional[str]) -> Optional[Tuple[int, int]]:
    if text is None:
        return None
    start, _, end = text.partition(":")
    try:
        lo, hi = int(start), int(end)
    except ValueError:
        raise SystemExit(f"bad bin range {text!r}: expected start:end")
    if hi < lo:
        raise SystemExit(f"bad bin range {text!r}: end before start")
    return lo, hi


def _add_magnitude_parser(sub) -> None:
    p = sub.add_parser("magnitude", help="per-AS magnitudes from an alarm file")
    p.add_argument("--alarms", required=True)
    p.add_argument("--pfx2as", required=True)
    p.add_argument("--window", type=int, default=168)
    p.add_argument("--range", default=None, help="bin range start:end (default: alarm span)")
    p.add_argument("--output", default="-")


def _cmd_magnitude(args) -> int:
    table = PrefixTable.from_file(args.pfx2as)
    aggregator, lo, hi = _aggregator_from_alarms(args.alarms, table)
    bounds = _parse_range(args.range) or (lo, hi)
    if bounds[0] is None:
        log.info("no alarms, nothing to compute")
        return 0
    start, end = bounds
    n_bins = end - start + 1
    out, close_out = _open_output(args.output)
    for asn in sorted(aggregator.series):
        entry = aggregator.series[asn]
        for kind, series in ((agg.DELAY, entry.delay_series), (agg.FORWARDING, entry.fw_series)):
            if not series:
                continue
            values = agg.series_values(series, start, n_bins)
            for i, mag in enumerate(agg.magnitude(values, args.window)):
                if mag is None:
                    continue
                out.write(json.dumps(
                    {"type": "magnitude", "asn": asn, "kind": kind,
                     "bin": start + i, "value": mag},
                    sort_keys=True,
                ) + "\n")
    out.flush()
    if close_out:
        out.close()
    return 0


def _add_characterize_parser(sub) -> None:
    p = sub.add_parser("characterize", help="TF-IDF prefix ranking for an AS event")
    p.add_argument("--alarms", required=True)
    p.add_argument("--pfx2as", required=True)
    p.add_argument("--asn", type=int, required=True)
    p.add_argument("--kind", choices=(agg.DELAY, agg.FORWARDING), default=agg.DELAY)
    p.add_argument("--event-bins", required=True, help="event bin range start:end")
    p.add_argument("--range", default=None, help="document corpus range (default: alarm span)")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--output", default="-")


def _cmd_characterize(args) -> int:
    table = PrefixTable.from_file(args.pfx2as)
    aggregator, lo, hi = _aggregator_from_alarms(args.alarms, table)
    bounds = _parse_range(args.range) or (lo, hi)
    if bounds[0] is None:
        log.info("no alarms, nothing to characterize")
        return 0
    ev_start, ev_end = _parse_range(args.event_bins)
    docs = aggregator.documents.get((args.asn, args.kind), {})
    ranking = agg.tfidf_characterize(
        range(ev_start, ev_end + 1),
        list(range(bounds[0], bounds[1] + 1)),
        docs,
    )[: args.topk]
    out, close_out = _open_output(args.output)
    out.write(json.dumps(
        {"type": "characterization", "asn": args.asn, "kind": args.kind,
         "start_bin": ev_start, "end_bin": ev_end,
         "prefixes": [[p, s] for p, s in ranking]},
        sort_keys=True,
    ) + "\n")
    out.flush()
    if close_out:
        out.close()
    return 0


def _add_mindetect_parser(sub) -> None:
    p = sub.add_parser("mindetect", help="minimum detectable event duration")
    p.add_argument("--rate", type=float, required=True, help="traceroutes/hour per probe")
    p.add_argument("--probes", type=int, required=True, help="probes monitoring the link")
    p.add_argument("--bin-hours", type=float, required=True)


def _cmd_mindetect(args) -> int:
    try:
        hours = min_detectable_event(args.rate, args.probes, args.bin_hours)
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    print(json.dumps(
        {"hours": hours, "minutes": hours * 60.0,
         "rate": args.rate, "probes": args.probes, "bin_hours": args.bin_hours},
        sort_keys=True,
    ))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracewatch",
        description="Delay-change and forwarding-anomaly detection from traceroutes",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub)
    _add_synth_parser(sub)
    _add_magnitude_parser(sub)
    _add_characterize_parser(sub)
    _add_mindetect_parser(sub)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    commands = {
        "run": _cmd_run,
        "synth": _cmd_synth,
        "magnitude": _cmd_magnitude,
        "characterize": _cmd_characterize,
        "mindetect": _cmd_mindetect,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
