"""Cross-layer KPM analytics: App-layer latency/throughput from packet logs,
protocol-stack metric ingestion, PRB grant ratios, CQI occupancy, and
latency-requirement satisfaction tables.

Dataset readers are header-driven: column names are resolved against a list
of known aliases (display names with units, snake_case variants), and any
unrecognized columns are carried along untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

#: Per-slice PRB allocations (eMBB, URLLC) out of a 50-PRB budget, by the
#: slicing-configuration names used throughout the dataset.
SLICING_CONFIGS = {
    "slicing_1": (9, 41),
    "slicing_2": (21, 29),
    "slicing_3": (30, 20),
    "slicing_4": (39, 11),
    "slicing_5": (50, 0),
}

#: Scheduler ids as logged by the base station.
SCHEDULERS = {"round_robin": 0, "proportional_fair": 2}

#: Slice ids: eMBB is slice 0, URLLC slice 1.
SLICE_IDS = {"eMBB": 0, "URLLC": 1}

CQI_LEVELS = 16  # dl_cqi in [0, 15]; 0 means out of range


@dataclass(frozen=True)
class KpmFrame:
    """One 250 ms protocol-stack logging window for one UE."""

    timestamp: float
    imsi: str
    slice_id: int
    dl_buffer_bytes: float
    dl_mcs: float
    tx_brate_dl_mbps: float
    tx_pkts_dl: float
    dl_cqi: int
    sum_requested_prbs: float
    sum_granted_prbs: float


@dataclass(frozen=True)
class LatencyRequirement:
    use_case: str
    bound_ms: float

    def __post_init__(self):
        if self.bound_ms <= 0:
            raise ValueError("latency bound must be > 0")


#: End-to-end latency requirements of representative low-latency use cases.
DEFAULT_REQUIREMENTS = (
    LatencyRequirement("AGV control", 5.0),
    LatencyRequirement("Cloud gaming", 7.0),
    LatencyRequirement("Robot tooling", 10.0),
    LatencyRequirement("AR in smart factory", 15.0),
    LatencyRequirement("Fault mgmt in distributed power generation", 30.0),
    LatencyRequirement("UAV command and control", 100.0),
    LatencyRequirement("Fault location identification", 140.0),
)

KPM_COLUMN_ALIASES = {
    "timestamp": ["timestamp", "Timestamp", "time", "ts"],
    "imsi": ["imsi", "IMSI", "ue_imsi"],
    "slice_id": ["slice_id", "slice", "slice id"],
    "dl_buffer_bytes": ["dl_buffer [bytes]", "dl_buffer_bytes", "dl_buffer"],
    "dl_mcs": ["dl_mcs"],
    "tx_brate_dl_mbps": ["tx_brate downlink [Mbps]", "tx_brate_dl_mbps",
                         "tx_brate_downlink_mbps", "tx_brate downlink"],
    "tx_pkts_dl": ["tx_pkts downlink", "tx_pkts_dl", "tx_pkts_downlink"],
    "dl_cqi": ["dl_cqi"],
    "sum_requested_prbs": ["sum_requested_prbs"],
    "sum_granted_prbs": ["sum_granted_prbs"],
}

PACKET_LOG_ALIASES = {
    "rx_time": ["rx_time", "rx", "recv_time", "rcv_time"],
    "tx_time": ["tx_time", "tx", "send_time", "snd_time"],
    "flow": ["flow", "flow_id"],
    "seq": ["seq", "sequence", "seq_num"],
    "size": ["size", "payload_size", "len", "bytes"],
    "src": ["src", "source"],
    "dst": ["dst", "destination"],
}


def _rename_by_alias(df: pd.DataFrame, aliases: dict, required) -> pd.DataFrame:
    mapping = {}
    stripped = {c.strip(): c for c in df.columns}
    for canon, names in aliases.items():
        for name in names:
            if name in stripped:
                mapping[stripped[name]] = canon
                break
    df = df.rename(columns=mapping)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValueError(f"missing required columns {missing}; found {list(df.columns)}")
    return df


def read_kpm_csv(path, aliases: dict | None = None) -> pd.DataFrame:
    """Read a protocol-stack metrics CSV (`enb_metrics.csv`-style schema).

    Unknown columns are preserved as opaque extras.
    """
    df = pd.read_csv(path)
    required = ["timestamp", "dl_cqi", "sum_requested_prbs", "sum_granted_prbs"]
    return _rename_by_alias(df, aliases or KPM_COLUMN_ALIASES, required)


def read_packet_log(path, aliases: dict | None = None) -> pd.DataFrame:
    """Read an App-layer packet log (`mgen.csv`-compatible, header-driven)."""
    df = pd.read_csv(path)
    return _rename_by_alias(df, aliases or PACKET_LOG_ALIASES,
                            ["rx_time", "tx_time", "size"])


def frames_to_df(frames) -> pd.DataFrame:
    return pd.DataFrame([vars(f) for f in frames])


def latency_series(log: pd.DataFrame) -> np.ndarray:
    """Per-packet end-to-end latency in ms: (rx - tx) * 1000.

    Negative values (receiver clock behind the sender) are retained but
    logged, since clamping would bias the distribution.
    """
    lat = (log["rx_time"].to_numpy(dtype=float)
           - log["tx_time"].to_numpy(dtype=float)) * 1e3
    negatives = int(np.count_nonzero(lat < 0))
    if negatives:
        logging.getLogger(__name__).warning(
            "%d of %d latencies are negative (clock skew?)", negatives, len(lat))
    return lat


def windowed_throughput(log: pd.DataFrame, window_s: float = 0.25,
                        t0: float | None = None,
                        t_end: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Received Mbps per fixed window aligned at t0 (default: floor of first rx).

    Empty windows are zero; every packet lands in exactly one window, so the
    sum of window rates times the window duration equals total bits received
    within the span.
    """
    if window_s <= 0:
        raise ValueError("window must be > 0")
    rx = log["rx_time"].to_numpy(dtype=float)
    size = log["size"].to_numpy(dtype=float)
    if len(rx) == 0:
        return np.array([]), np.array([])
    if t0 is None:
        t0 = np.floor(rx.min() / window_s) * window_s
    if t_end is None:
        t_end = rx.max() + 1e-12
    n_windows = max(int(np.ceil((t_end - t0) / window_s)), 0)
    idx = np.floor((rx - t0) / window_s).astype(int)
    keep = (idx >= 0) & (idx < n_windows)
    bits = np.bincount(idx[keep], weights=size[keep] * 8.0, minlength=n_windows)
    starts = t0 + window_s * np.arange(n_windows)
    return starts, bits / window_s / 1e6


def active_flows_per_window(log: pd.DataFrame, window_s: float = 1.0,
                            t0: float | None = None,
                            t_end: float | None = None) -> np.ndarray:
    """Distinct flow ids observed in each window (packet-log analogue of
    the per-second active-UE count)."""
    rx = log["rx_time"].to_numpy(dtype=float)
    if len(rx) == 0:
        return np.array([])
    if t0 is None:
        t0 = np.floor(rx.min() / window_s) * window_s
    if t_end is None:
        t_end = rx.max() + 1e-12
    n_windows = max(int(np.ceil((t_end - t0) / window_s)), 0)
    idx = np.floor((rx - t0) / window_s).astype(int)
    flows = log["flow"].to_numpy()
    counts = np.zeros(n_windows)
    for w in range(n_windows):
        counts[w] = len(np.unique(flows[idx == w]))
    return counts


def prb_ratio(frames: pd.DataFrame) -> np.ndarray:
    """Granted-to-requested PRB ratio per frame.

    Frames that requested zero PRBs carry no demand and are excluded from
    the distribution.
    """
    req = frames["sum_requested_prbs"].to_numpy(dtype=float)
    grant = frames["sum_granted_prbs"].to_numpy(dtype=float)
    mask = req > 0
    return grant[mask] / req[mask]


def cqi_occupancy(frames: pd.DataFrame, ues=None) -> pd.DataFrame:
    """Per-UE percentage of frames reporting each CQI value (16 columns).

    Rows sum to 100. A UE with no frames yields an all-zero row and a warning.
    """
    cqi = frames["dl_cqi"].to_numpy()
    if len(cqi) and (cqi.min() < 0 or cqi.max() >= CQI_LEVELS):
        raise ValueError("dl_cqi outside [0, 15]")
    if ues is None:
        ues = sorted(frames["imsi"].unique())
    table = np.zeros((len(ues), CQI_LEVELS))
    for i, ue in enumerate(ues):
        vals = frames.loc[frames["imsi"] == ue, "dl_cqi"].to_numpy(dtype=int)
        if len(vals) == 0:
            log.warning("UE %s has no frames; CQI row left at zero", ue)
            continue
        table[i] = np.bincount(vals, minlength=CQI_LEVELS) / len(vals) * 100.0
    return pd.DataFrame(table, index=ues, columns=range(CQI_LEVELS))


def requirement_satisfaction(latencies_ms, requirements=DEFAULT_REQUIREMENTS) -> pd.DataFrame:
    """Empirical probability that latency meets each requirement's bound."""
    lat = np.asarray(latencies_ms, dtype=float)
    if len(lat) == 0:
        raise ValueError("latency series is empty")
    rows = [(r.use_case, r.bound_ms, float(np.mean(lat <= r.bound_ms)))
            for r in requirements]
    return pd.DataFrame(rows, columns=["use_case", "bound_ms", "probability"])


def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF as (sorted unique values, cumulative probabilities)."""
    vals = np.asarray(values, dtype=float)
    if len(vals) == 0:
        raise ValueError("cannot build an ECDF from an empty sample")
    xs, counts = np.unique(vals, return_counts=True)
    return xs, np.cumsum(counts) / len(vals)


def write_ecdf(path, values, config_hash: str | None = None) -> None:
    xs, ps = ecdf(values)
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("value,cum_prob\n")
        for x, p in zip(xs, ps):
            fh.write(f"{x:.12g},{p:.12g}\n")
