"""Traceroute-based detection of Internet delay changes and forwarding anomalies."""

from .aggregate import (
    AsSeries,
    Component,
    EventReport,
    SeverityAggregator,
    build_event_reports,
    components_of_links,
    connected_alarms,
    magnitude,
    tfidf_characterize,
)
from .delay import (
    DelayAlarm,
    DelayReference,
    MedianEstimate,
    characterize,
    detect,
    min_detectable_event,
    update_reference,
    wilson_ranks,
    wilson_scores,
)
from .forwarding import (
    UNRESPONSIVE,
    ForwardingAlarm,
    ForwardingPattern,
    ForwardingReference,
    PatternKey,
    build_patterns,
    correlate,
    detect_forwarding,
    update_fw_reference,
)
from .ingest import (
    BinConfig,
    Hop,
    IngestError,
    ParseStats,
    PrefixTable,
    TimeBin,
    TracerouteRecord,
    assign_bin,
    parse_records,
)
from .links import (
    DiversityVerdict,
    LinkKey,
    LinkObservations,
    collect_link_observations,
    enforce_diversity,
    extract_links,
    normalized_entropy,
)
from .pipeline import Pipeline, PipelineConfig
from .state import Checkpoint, load, save
from .synth import (
    AnomalyScript,
    Congestion,
    Loss,
    NoiseModel,
    Reroute,
    SynthTopology,
    default_topology,
    generate,
    parse_script,
    parse_topology,
)

__version__ = "0.1.0"
