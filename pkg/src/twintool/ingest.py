"""Decoded control-channel trace ingestion.

Parses per-allocation DCI rows from delimited text into typed records and
aggregates them into a gap-free 1 s multivariate cell series (traffic load,
PRB utilization, active UEs) suitable for clustering and windowed profiling.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

DOWNLINK = "downlink"
UPLINK = "uplink"

_DIRECTION_TOKENS = {
    "dl": DOWNLINK, "d": DOWNLINK, "down": DOWNLINK, "downlink": DOWNLINK, "0": DOWNLINK,
    "ul": UPLINK, "u": UPLINK, "up": UPLINK, "uplink": UPLINK, "1": UPLINK,
}

#: PRBs per subframe for common LTE channel bandwidths.
PRB_BUDGETS = {20: 100, 10: 50, 5: 25}


@dataclass(frozen=True)
class DciRecord:
    """One decoded control-channel allocation (per-TTI, per-RNTI)."""

    timestamp_ms: int
    sfn: int
    subframe: int
    rnti: int
    direction: str
    mcs: int
    tbs_bits: int
    prb_count: int


@dataclass
class ColumnMapping:
    """Maps DciRecord fields to trace columns (names or 0-based indices).

    The default layout matches a plain DCI export with columns
    ``timestamp,sfn,subframe,rnti,direction,mcs,tbs,prb``.
    """

    timestamp: int | str = 0
    sfn: int | str = 1
    subframe: int | str = 2
    rnti: int | str = 3
    direction: int | str = 4
    mcs: int | str = 5
    tbs: int | str = 6
    prb: int | str = 7
    delimiter: str = ","
    has_header: bool | None = None  # None = sniff first row
    tbs_unit: str = "bits"  # "bits" or "bytes"

    def __post_init__(self):
        if self.tbs_unit not in ("bits", "bytes"):
            raise ValueError(f"tbs_unit must be 'bits' or 'bytes', got {self.tbs_unit!r}")

    def uses_names(self) -> bool:
        return any(isinstance(c, str) for c in self._columns())

    def _columns(self):
        return (self.timestamp, self.sfn, self.subframe, self.rnti,
                self.direction, self.mcs, self.tbs, self.prb)

    def resolve(self, header: list[str] | None) -> "ColumnMapping":
        """Return a copy with all name references resolved to indices."""
        out = {}
        for name in ("timestamp", "sfn", "subframe", "rnti", "direction", "mcs", "tbs", "prb"):
            col = getattr(self, name)
            if isinstance(col, str):
                if header is None or col not in header:
                    raise ValueError(f"mapped column {col!r} not found in trace header")
                col = header.index(col)
            out[name] = col
        return replace(self, **out)


@dataclass
class ParseResult:
    """Parsed records plus per-file accounting."""

    records: list[DciRecord]
    rows_total: int = 0
    rows_skipped: int = 0
    skip_reasons: dict[str, int] = field(default_factory=dict)


@dataclass
class CellSeries:
    """1 s-granularity multivariate time series for one cell.

    ``t0`` is the epoch (in whole seconds since the trace epoch) of the first
    sample; the step is fixed at 1 s. Variate vectors always have equal length.
    """

    cell_id: str
    t0: int
    load_mbps: np.ndarray
    prb_util: np.ndarray
    active_ues: np.ndarray

    STEP_S = 1.0
    VARIATE_NAMES = ("load_mbps", "prb_util", "active_ues")

    def __post_init__(self):
        self.load_mbps = np.asarray(self.load_mbps, dtype=float)
        self.prb_util = np.asarray(self.prb_util, dtype=float)
        self.active_ues = np.asarray(self.active_ues, dtype=float)
        if not (len(self.load_mbps) == len(self.prb_util) == len(self.active_ues)):
            raise ValueError("variate vectors must have equal length")
        if len(self.prb_util) and (self.prb_util.min() < -1e-9
                                   or self.prb_util.max() > 1.0 + 1e-9):
            raise ValueError("prb_util must lie in [0, 1]; check the PRB budget")
        if len(self.load_mbps) and (self.load_mbps.min() < -1e-9
                                    or self.active_ues.min() < -1e-9):
            raise ValueError("load_mbps and active_ues must be non-negative")

    def __len__(self) -> int:
        return len(self.load_mbps)

    def values(self, variates=VARIATE_NAMES) -> np.ndarray:
        """Stack the selected variates into a (T, n) matrix."""
        return np.column_stack([getattr(self, v) for v in variates]) if len(self) else \
            np.empty((0, len(variates)))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self))


class RowError(ValueError):
    """A skippable per-row defect; ``field`` keys the skip accounting."""

    def __init__(self, field_name, reason):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name


def _int_field(name, raw, lo, hi):
    try:
        value = int(float(raw))
    except ValueError:
        raise RowError(name, f"value {raw!r} is not numeric") from None
    if not lo <= value <= hi:
        raise RowError(name, f"{value} outside [{lo}, {hi}]")
    return value


def _parse_row(row, mapping: ColumnMapping, budget: int) -> DciRecord:
    def cell(name, idx):
        if idx >= len(row):
            raise RowError(name, f"missing column {idx}")
        return row[idx].strip()

    direction = _DIRECTION_TOKENS.get(cell("direction", mapping.direction).lower())
    if direction is None:
        raise RowError("direction", f"unrecognized token {row[mapping.direction]!r}")
    tbs = _int_field("tbs", cell("tbs", mapping.tbs), 1, 2 ** 31)
    if mapping.tbs_unit == "bytes":
        tbs *= 8
    return DciRecord(
        timestamp_ms=_int_field("timestamp", cell("timestamp", mapping.timestamp),
                                0, 2 ** 62),
        sfn=_int_field("sfn", cell("sfn", mapping.sfn), 0, 1023),
        subframe=_int_field("subframe", cell("subframe", mapping.subframe), 0, 9),
        rnti=_int_field("rnti", cell("rnti", mapping.rnti), 1, 65535),
        direction=direction,
        mcs=_int_field("mcs", cell("mcs", mapping.mcs), 0, 31),
        tbs_bits=tbs,
        prb_count=_int_field("prb_count", cell("prb", mapping.prb), 1, budget),
    )


def _looks_like_header(row, mapping: ColumnMapping) -> bool:
    # Only the numeric-mapped cells count: a direction token like "DL" is data.
    numeric_cols = (mapping.timestamp, mapping.sfn, mapping.subframe, mapping.rnti,
                    mapping.mcs, mapping.tbs, mapping.prb)
    for idx in numeric_cols:
        if not isinstance(idx, int) or idx >= len(row):
            continue
        try:
            float(row[idx])
        except ValueError:
            return True
    return False


def parse_trace(path, mapping: ColumnMapping | None = None, budget: int = 100) -> ParseResult:
    """Parse a decoded trace file into DciRecords sorted by timestamp.

    Rows with out-of-range or unparseable values are skipped and counted,
    never fatal. A missing mapped column or unreadable file is fatal.
    """
    mapping = mapping or ColumnMapping()
    result = ParseResult(records=[])
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=mapping.delimiter)
        header = None
        first = True
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if first:
                first = False
                has_header = mapping.has_header
                if has_header is None:
                    has_header = mapping.uses_names() or _looks_like_header(row, mapping)
                if has_header:
                    header = [c.strip() for c in row]
                    mapping = mapping.resolve(header)
                    continue
                mapping = mapping.resolve(None)
            result.rows_total += 1
            try:
                result.records.append(_parse_row(row, mapping, budget))
            except RowError as exc:
                result.rows_skipped += 1
                result.skip_reasons[exc.field] = result.skip_reasons.get(exc.field, 0) + 1
    result.records.sort(key=lambda r: r.timestamp_ms)
    log.info("parsed %s: %d rows, %d skipped", path, result.rows_total, result.rows_skipped)
    return result


def rolling_average(values: np.ndarray, width: int) -> np.ndarray:
    """Centered rolling average; the window shrinks at the series edges."""
    if width < 1:
        raise ValueError("rolling width must be >= 1")
    if width == 1 or len(values) == 0:
        return np.asarray(values, dtype=float).copy()
    return (
        pd.Series(values, dtype=float)
        .rolling(window=width, center=True, min_periods=1)
        .mean()
        .to_numpy()
    )


def bin_seconds(records: list[DciRecord], budget: int, direction: str = DOWNLINK,
                subframes_per_second: int = 1000, cell_id: str = "") -> CellSeries:
    """Aggregate records into raw (unsmoothed) per-second sums.

    The span covers every elapsed second of the full record set, so a
    direction with no records yields an all-zero series over that span.
    Seconds with no traffic are materialized as zeros, not dropped.
    """
    if budget <= 0:
        raise ValueError("PRB budget must be positive")
    if not records:
        return CellSeries(cell_id, 0, np.array([]), np.array([]), np.array([]))

    ts = np.array([r.timestamp_ms for r in records], dtype=np.int64)
    s0 = int(ts.min() // 1000)
    n_seconds = int(ts.max() // 1000) - s0 + 1

    load = np.zeros(n_seconds)
    prbs = np.zeros(n_seconds)
    seen = set()
    ues = np.zeros(n_seconds)
    for rec in records:
        if rec.direction != direction:
            continue
        s = rec.timestamp_ms // 1000 - s0
        load[s] += rec.tbs_bits
        prbs[s] += rec.prb_count
        if (s, rec.rnti) not in seen:
            seen.add((s, rec.rnti))
            ues[s] += 1

    return CellSeries(
        cell_id=cell_id,
        t0=s0,
        load_mbps=load / 1e6,
        prb_util=prbs / (budget * subframes_per_second),
        active_ues=ues,
    )


def aggregate_1s(records: list[DciRecord], budget: int, direction: str = DOWNLINK,
                 rolling_width: int = 5, subframes_per_second: int = 1000,
                 cell_id: str = "") -> CellSeries:
    """Per-second aggregation followed by a centered rolling average.

    load_mbps(s) is the TBS sum in second s over 1e6, prb_util(s) the PRB sum
    over budget x subframes/s, active_ues(s) the count of distinct RNTIs.
    """
    raw = bin_seconds(records, budget, direction, subframes_per_second, cell_id)
    return CellSeries(
        cell_id=raw.cell_id,
        t0=raw.t0,
        load_mbps=rolling_average(raw.load_mbps, rolling_width),
        prb_util=rolling_average(raw.prb_util, rolling_width),
        active_ues=rolling_average(raw.active_ues, rolling_width),
    )


def write_series(path, series: CellSeries, config_hash: str | None = None) -> None:
    """Serialize as delimited text with columns t,load_mbps,prb_util,active_ues."""
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write(f"# cell_id={series.cell_id}\n")
        fh.write("t,load_mbps,prb_util,active_ues\n")
        for i in range(len(series)):
            fh.write(f"{series.t0 + i},{series.load_mbps[i]:.12g},"
                     f"{series.prb_util[i]:.12g},{series.active_ues[i]:.12g}\n")


def read_series(path) -> CellSeries:
    cell_id = ""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# cell_id="):
                    cell_id = line.split("=", 1)[1]
                continue
            if line.startswith("t,"):
                continue
            rows.append([float(x) for x in line.split(",")])
    if not rows:
        return CellSeries(cell_id, 0, np.array([]), np.array([]), np.array([]))
    arr = np.array(rows)
    ts = arr[:, 0].astype(int)
    if len(ts) > 1 and not np.all(np.diff(ts) == 1):
        raise ValueError(f"{path}: series is not gap-free at 1 s steps")
    return CellSeries(cell_id, int(ts[0]), arr[:, 1], arr[:, 2], arr[:, 3])
