"""Traffic script replay over UDP and App-layer packet logging.

The sender executes a TrafficScript: one timed emitter per active flow span,
pacing datagrams on absolute deadlines (next = on_time + k/rate, sleep then
spin) so rate error does not accumulate. The receiver parses the fixed
24-byte header from each datagram and appends rows to a packet log that is
also flushed incrementally to CSV.

Wire header (big-endian, 24 bytes, then zero padding to the payload size)::

    magic u16 | version u8 | flags u8 | flow_id u32 | seq u32 |
    tx_time_us u64 | payload_size u16 | reserved u16

This is this tool's own canonical format; it carries the same information as
an MGEN payload but is not binary-compatible with NRL MGEN.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .flowmap import Periodic, TrafficScript, active_spans

log = logging.getLogger(__name__)

MAGIC = 0x544D
VERSION = 1
HEADER = struct.Struct(">HBBIIQHH")
HEADER_SIZE = HEADER.size  # 24

_SPIN_S = 0.0015  # busy-wait this close to a deadline
_SOCK_BUF = 1 << 22

assert HEADER_SIZE == 24


@dataclass(frozen=True)
class PacketHeader:
    flow_id: int
    seq: int
    tx_time_us: int
    payload_size: int


class MalformedPacket(ValueError):
    pass


def pack_packet(flow_id: int, seq: int, tx_time_us: int, payload_size: int) -> bytes:
    if payload_size < HEADER_SIZE:
        raise ValueError(f"payload size must be >= {HEADER_SIZE} bytes")
    if payload_size > 65507:
        raise ValueError("payload size exceeds a UDP datagram")
    head = HEADER.pack(MAGIC, VERSION, 0, flow_id, seq, tx_time_us, payload_size, 0)
    return head + b"\x00" * (payload_size - HEADER_SIZE)


def parse_packet(data: bytes) -> PacketHeader:
    if len(data) < HEADER_SIZE:
        raise MalformedPacket(f"datagram of {len(data)} bytes is shorter than the header")
    magic, version, _flags, flow_id, seq, tx_us, size, _res = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedPacket(f"bad magic 0x{magic:04x}")
    if version != VERSION:
        raise MalformedPacket(f"unsupported version {version}")
    if size != len(data):
        raise MalformedPacket(f"declared size {size} != datagram size {len(data)}")
    return PacketHeader(flow_id, seq, tx_us, size)


@dataclass
class PacketRow:
    rx_time: float
    tx_time: float
    flow: int
    seq: int
    size: int
    src: str
    dst: str


PACKET_LOG_COLUMNS = "rx_time,tx_time,flow,seq,size,src,dst"


@dataclass
class PacketLog:
    rows: list[PacketRow] = field(default_factory=list)
    malformed: int = 0

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(PACKET_LOG_COLUMNS + "\n")
            for r in self.rows:
                fh.write(_row_text(r))


def _row_text(r: PacketRow) -> str:
    return (f"{r.rx_time:.6f},{r.tx_time:.6f},{r.flow},{r.seq},"
            f"{r.size},{r.src},{r.dst}\n")


@dataclass
class FlowStats:
    flow_id: int
    sent: int = 0
    active_s: float = 0.0
    target_rate: float = 0.0
    interval_deviations_s: list[float] = field(default_factory=list)
    errors: int = 0

    @property
    def achieved_rate(self) -> float:
        return self.sent / self.active_s if self.active_s > 0 else 0.0

    @property
    def p99_interval_deviation_s(self) -> float:
        if not self.interval_deviations_s:
            return 0.0
        return float(np.percentile(self.interval_deviations_s, 99))


@dataclass
class SendReport:
    flows: dict[int, FlowStats]
    t0_wall: float
    duration_s: float
    skipped_patterns: int = 0

    @property
    def total_sent(self) -> int:
        return sum(f.sent for f in self.flows.values())


class _SeqCounter:
    """Per-flow sequence numbers; spans of one flow never overlap but their
    emitter threads may race at a boundary."""

    def __init__(self):
        self._next = 0
        self._lock = threading.Lock()

    def take(self) -> int:
        with self._lock:
            seq = self._next
            self._next += 1
            return seq


class _FlowEmitter(threading.Thread):
    def __init__(self, span, t0_mono, bind_ip, seq_counter, stats, abort):
        super().__init__(daemon=True)
        self.span = span
        self.t0_mono = t0_mono
        self.bind_ip = bind_ip
        self.seq = seq_counter
        self.stats = stats
        self.abort = abort

    def run(self):
        span = self.span
        rate = span.pattern.rate_msgs_s
        if rate <= 0 or span.end_s <= span.start_s:
            return
        interval = 1.0 / rate
        start = self.t0_mono + span.start_s
        end = self.t0_mono + span.end_s
        try:
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, _SOCK_BUF)
            if self.bind_ip:
                sock.bind((self.bind_ip, 0))
        except OSError as exc:
            log.error("flow %d: socket setup failed: %s", span.flow_id, exc)
            self.stats.errors += 1
            return
        dst = (span.dst_ip, span.dst_port)
        last_send = None
        k = 0
        with sock:
            while not self.abort.is_set():
                deadline = start + k * interval
                if deadline >= end - 1e-9:
                    break
                delta = deadline - time.monotonic()
                if delta > _SPIN_S:
                    time.sleep(delta - _SPIN_S)
                while time.monotonic() < deadline:
                    pass
                try:
                    tx_us = int(time.time() * 1e6)
                    sock.sendto(pack_packet(span.flow_id, self.seq.take(), tx_us,
                                            span.pattern.payload_bytes), dst)
                except OSError as exc:
                    self.stats.errors += 1
                    if self.stats.errors == 1:
                        log.error("flow %d: send failed: %s", span.flow_id, exc)
                else:
                    now = time.monotonic()
                    self.stats.sent += 1
                    if last_send is not None:
                        self.stats.interval_deviations_s.append(
                            abs((now - last_send) - interval))
                    last_send = now
                k += 1


def send(script: TrafficScript, bind: str = "", duration_s: float | None = None,
         lead_s: float = 0.05) -> SendReport:
    """Replay all periodic flows of the script; blocks until the last span ends.

    ``duration_s`` closes flows that the script never switches off (defaults
    to the last event time). Returns per-flow sent counts, achieved rates, and
    the pacing-deviation profile. Socket errors disable the affected flow only.
    """
    script.validate()
    spans = active_spans(script, duration_s)
    bind_ip = bind.split(":")[0] if bind else ""
    abort = threading.Event()
    counters: dict[int, _SeqCounter] = {}
    stats: dict[int, FlowStats] = {}
    emitters = []
    skipped = 0
    for span in spans:
        if not isinstance(span.pattern, Periodic):
            log.warning("flow %d: %s pattern not implemented by the sender; skipped",
                        span.flow_id, span.pattern.keyword)
            skipped += 1
            continue
        st = stats.setdefault(span.flow_id, FlowStats(span.flow_id))
        st.active_s += span.end_s - span.start_s
        st.target_rate = span.pattern.rate_msgs_s
        emitters.append(_FlowEmitter(
            span, 0.0, bind_ip, counters.setdefault(span.flow_id, _SeqCounter()),
            st, abort))

    t0_mono = time.monotonic() + lead_s
    t0_wall = time.time() + lead_s
    for em in emitters:
        em.t0_mono = t0_mono
        em.start()
    try:
        for em in emitters:
            em.join()
    except KeyboardInterrupt:
        abort.set()
        for em in emitters:
            em.join()
        raise
    total = max((s.end_s for s in spans), default=0.0)
    return SendReport(flows=stats, t0_wall=t0_wall, duration_s=total,
                      skipped_patterns=skipped)


def receive(bind: str, duration_s: float | None = None,
            stop: threading.Event | None = None, out_path=None,
            ready: threading.Event | None = None) -> PacketLog:
    """Log datagrams arriving at ``bind`` ("ip:port") until duration or stop.

    Malformed datagrams are counted and dropped. When ``out_path`` is given
    the log is flushed to CSV incrementally, row by row.
    """
    ip, port = bind.rsplit(":", 1)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, _SOCK_BUF)
    sock.bind((ip, int(port)))
    sock.settimeout(0.05)
    if ready is not None:
        ready.set()
    dst = f"{ip}:{port}"
    logbook = PacketLog()
    out = open(out_path, "w") if out_path else None
    if out:
        out.write(PACKET_LOG_COLUMNS + "\n")
    end = time.monotonic() + duration_s if duration_s is not None else None
    try:
        while True:
            if stop is not None and stop.is_set():
                break
            if end is not None and time.monotonic() >= end:
                break
            try:
                data, addr = sock.recvfrom(65535)
            except socket.timeout:
                continue
            rx = time.time()
            try:
                head = parse_packet(data)
            except MalformedPacket:
                logbook.malformed += 1
                continue
            row = PacketRow(rx, head.tx_time_us / 1e6, head.flow_id, head.seq,
                            head.payload_size, f"{addr[0]}:{addr[1]}", dst)
            logbook.rows.append(row)
            if out:
                out.write(_row_text(row))
                out.flush()
    finally:
        sock.close()
        if out:
            out.close()
    return logbook


def loss_by_flow(report: SendReport, logbook: PacketLog) -> dict[int, int]:
    """Per-flow sent minus received."""
    received: dict[int, int] = {}
    for row in logbook.rows:
        received[row.flow] = received.get(row.flow, 0) + 1
    return {fid: st.sent - received.get(fid, 0) for fid, st in report.flows.items()}
