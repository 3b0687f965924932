"""Windowed traffic profiles and per-UE flow targets.

Aggregates a labeled 1 s cell series over windows of W seconds and splits
each window's aggregate load into per-service-class, per-UE message rates
that a script generator can realize.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import CellSeries

log = logging.getLogger(__name__)

EMBB = "eMBB"
URLLC = "URLLC"

SHARE_OF_AGGREGATE = "share_of_aggregate"
FIXED = "fixed"


@dataclass(frozen=True)
class ClassSpec:
    """A service class: population, payload size, and rate policy."""

    name: str
    population: int
    payload_bytes: int
    rate_policy: str = SHARE_OF_AGGREGATE
    fixed_rate_msgs_s: float = 0.0

    def __post_init__(self):
        if self.population < 0:
            raise ValueError("population must be >= 0")
        if self.payload_bytes <= 0:
            raise ValueError("payload_bytes must be > 0")
        if self.rate_policy not in (SHARE_OF_AGGREGATE, FIXED):
            raise ValueError(f"unknown rate policy {self.rate_policy!r}")


#: Two-class default: four broadband UEs soaking the aggregate load and four
#: low-rate latency-sensitive UEs at a fixed 10 msg/s of 125 B.
DEFAULT_CLASSES = (
    ClassSpec(EMBB, population=4, payload_bytes=1250, rate_policy=SHARE_OF_AGGREGATE),
    ClassSpec(URLLC, population=4, payload_bytes=125, rate_policy=FIXED,
              fixed_rate_msgs_s=10.0),
)


@dataclass
class ClassFlow:
    """Per-window flow target for one service class."""

    n_active: int
    per_ue_rate_msgs_s: float
    payload_bytes: int

    @property
    def load_bps(self) -> float:
        return self.n_active * self.per_ue_rate_msgs_s * self.payload_bytes * 8.0


@dataclass
class WindowProfile:
    """Aggregated traffic statistics for one window of W seconds."""

    window_index: int
    start: int
    width_s: int
    cluster: int
    agg_rate_mbps: float
    avg_ues: float
    per_class: dict[str, ClassFlow] = field(default_factory=dict)
    unassigned_mbps: float = 0.0

    def twinned_load_bps(self) -> float:
        return sum(f.load_bps for f in self.per_class.values())


def window_aggregate(series: CellSeries, labels: np.ndarray, width_s: int) -> list[WindowProfile]:
    """Aggregate a labeled series into ceil(T / W) window profiles.

    The window cluster is the modal label (ties go to the lower index); rates
    and UE counts are arithmetic means. The final window may be partial.
    """
    if width_s < 1:
        raise ValueError("window width must be >= 1 s")
    labels = np.asarray(labels)
    if len(labels) != len(series):
        raise ValueError(f"labels length {len(labels)} != series length {len(series)}")
    profiles = []
    for w_idx in range(math.ceil(len(series) / width_s)):
        lo, hi = w_idx * width_s, min((w_idx + 1) * width_s, len(series))
        chunk = labels[lo:hi]
        profiles.append(WindowProfile(
            window_index=w_idx,
            start=series.t0 + lo,
            width_s=width_s,
            cluster=int(np.bincount(chunk).argmax()),
            agg_rate_mbps=float(series.load_mbps[lo:hi].mean()),
            avg_ues=float(series.active_ues[lo:hi].mean()),
        ))
    return profiles


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def derive_class_flows(profiles: list[WindowProfile], classes=DEFAULT_CLASSES,
                       split: float = 1.0) -> list[WindowProfile]:
    """Fill per-class flow targets for every window profile, in place.

    Active-UE counts follow the window's average UE count split in proportion
    to class populations (rounded half up, clamped to the population). Fixed-
    policy classes send their configured rate; share-policy classes divide the
    remaining aggregate load equally among their active UEs. With two or more
    share classes, ``split`` is the first class's fraction of that remainder.
    """
    if not classes:
        raise ValueError("need at least one service class")
    if not 0.0 <= split <= 1.0:
        raise ValueError("split must be in [0, 1]")
    total_pop = sum(c.population for c in classes)
    share_classes = [c for c in classes if c.rate_policy == SHARE_OF_AGGREGATE]
    fractions = {}
    if len(share_classes) == 1:
        fractions[share_classes[0].name] = 1.0
    elif len(share_classes) == 2:
        fractions[share_classes[0].name] = split
        fractions[share_classes[1].name] = 1.0 - split
    elif share_classes:
        raise ValueError("at most two share-of-aggregate classes are supported")

    for prof in profiles:
        agg_bps = prof.agg_rate_mbps * 1e6
        fixed_bps = 0.0
        prof.per_class = {}
        for cls in classes:
            share = cls.population / total_pop if total_pop else 0.0
            n_active = min(max(_round_half_up(prof.avg_ues * share), 0), cls.population)
            if cls.rate_policy == FIXED:
                # a window with no observed traffic twins to silence, fixed
                # rate or not
                rate = cls.fixed_rate_msgs_s if n_active > 0 and agg_bps > 0 else 0.0
                flow = ClassFlow(n_active, rate, cls.payload_bytes)
                fixed_bps += flow.load_bps
            else:
                flow = ClassFlow(n_active, 0.0, cls.payload_bytes)  # rate set below
            prof.per_class[cls.name] = flow

        residual_bps = max(agg_bps - fixed_bps, 0.0)
        prof.unassigned_mbps = 0.0
        for cls in share_classes:
            flow = prof.per_class[cls.name]
            class_bps = residual_bps * fractions[cls.name]
            if class_bps <= 0.0:
                continue
            if flow.n_active == 0:
                prof.unassigned_mbps += class_bps / 1e6
                log.warning("window %d: %.3f Mbps of %s load has no active UE; flow omitted",
                            prof.window_index, class_bps / 1e6, cls.name)
                continue
            flow.per_ue_rate_msgs_s = class_bps / (flow.n_active * cls.payload_bytes * 8.0)
    return profiles


PROFILE_COLUMNS = "window,start,cluster,agg_mbps,avg_ues,class,n_active,rate_msgs_s,payload_B"


def write_profiles(path, profiles: list[WindowProfile], config_hash: str | None = None) -> None:
    """One row per (window, class), delimited text."""
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write(PROFILE_COLUMNS + "\n")
        for p in profiles:
            for name, flow in p.per_class.items():
                fh.write(f"{p.window_index},{p.start},{p.cluster},{p.agg_rate_mbps:.12g},"
                         f"{p.avg_ues:.12g},{name},{flow.n_active},"
                         f"{flow.per_ue_rate_msgs_s:.12g},{flow.payload_bytes}\n")


def read_profiles(path, width_s: int | None = None) -> list[WindowProfile]:
    by_window: dict[int, WindowProfile] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("window,"):
                continue
            win, start, cluster, agg, ues, name, n_act, rate, payload = line.split(",")
            idx = int(win)
            prof = by_window.get(idx)
            if prof is None:
                prof = WindowProfile(idx, int(start), width_s or 0, int(cluster),
                                     float(agg), float(ues))
                by_window[idx] = prof
            prof.per_class[name] = ClassFlow(int(n_act), float(rate), int(payload))
    profiles = [by_window[k] for k in sorted(by_window)]
    if width_s is None and len(profiles) > 1:
        inferred = profiles[1].start - profiles[0].start
        for p in profiles:
            p.width_s = inferred
    elif width_s is not None:
        for p in profiles:
            p.width_s = width_s
    return profiles
