"""twintool: characterize decoded cellular traffic traces, synthesize
replayable UDP traffic scripts, replay them, and validate statistical
fidelity against the original traces."""

from .flowmap import EndpointMap, FlowEvent, Periodic, TrafficScript, emit_script, parse_script
from .ingest import CellSeries, ColumnMapping, DciRecord, aggregate_1s, parse_trace
from .kpm import (ecdf, latency_series, prb_ratio, requirement_satisfaction,
                  windowed_throughput)
from .profile import ClassSpec, WindowProfile, derive_class_flows, window_aggregate
from .replay import PacketLog, SendReport, receive, send
from .ticc import TiccModel, TiccSegmenter, assign, stack_windows
from .validate import ks_distance, normalize, validate_and_loop

__version__ = "0.1.0"

__all__ = [
    "CellSeries", "ColumnMapping", "DciRecord", "parse_trace", "aggregate_1s",
    "TiccSegmenter", "TiccModel", "stack_windows", "assign",
    "WindowProfile", "ClassSpec", "window_aggregate", "derive_class_flows",
    "TrafficScript", "FlowEvent", "Periodic", "EndpointMap",
    "emit_script", "parse_script",
    "PacketLog", "SendReport", "send", "receive",
    "latency_series", "windowed_throughput", "prb_ratio",
    "requirement_satisfaction", "ecdf",
    "ks_distance", "normalize", "validate_and_loop",
    "__version__",
]
