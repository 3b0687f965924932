"""Traffic script synthesis and parsing (MGEN-compatible dialect).

Turns window profiles into an ordered ON/OFF flow-event script and parses
such scripts back. The grammar subset is::

    <time_s> ON <flow_id> UDP DST <ipv4>/<port> PERIODIC [<rate> <size>]
    <time_s> OFF <flow_id>

plus POISSON/BURST patterns (parsed and representable; replay implements
PERIODIC). ``#`` starts a comment; blank lines are ignored. Emission is
canonical (single spaces, two-decimal fractional numbers, LF endings) so
emit -> parse -> emit is byte-identical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .profile import EMBB, URLLC, WindowProfile

ON = "ON"
OFF = "OFF"


class ScriptError(ValueError):
    """Malformed script line; carries the 1-based line number."""

    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnsupportedDirective(ScriptError):
    def __init__(self, line_no, directive):
        super().__init__(line_no, f"unsupported directive {directive!r}")
        self.directive = directive


@dataclass(frozen=True)
class Periodic:
    rate_msgs_s: float
    payload_bytes: int

    keyword = "PERIODIC"

    def args_text(self) -> str:
        return f"{fmt_num(self.rate_msgs_s)} {fmt_num(self.payload_bytes)}"


@dataclass(frozen=True)
class Poisson:
    rate_msgs_s: float
    payload_bytes: int

    keyword = "POISSON"

    def args_text(self) -> str:
        return f"{fmt_num(self.rate_msgs_s)} {fmt_num(self.payload_bytes)}"


@dataclass(frozen=True)
class Burst:
    raw_args: str

    keyword = "BURST"

    def args_text(self) -> str:
        return self.raw_args


@dataclass(frozen=True)
class FlowEvent:
    time_s: float
    kind: str  # ON or OFF
    flow_id: int
    protocol: str = "UDP"
    dst_ip: str = ""
    dst_port: int = 0
    pattern: Periodic | Poisson | Burst | None = None


@dataclass
class TrafficScript:
    events: list[FlowEvent] = field(default_factory=list)

    def duration(self) -> float:
        return max((e.time_s for e in self.events), default=0.0)

    def to_text(self) -> str:
        lines = []
        last_time = None
        for ev in self.events:
            if last_time is not None and ev.time_s != last_time:
                lines.append("")
            last_time = ev.time_s
            lines.append(format_event(ev))
        return "\n".join(lines) + ("\n" if lines else "")

    def validate(self) -> None:
        """Times non-decreasing; never ON an active flow or OFF an idle one."""
        active: set[int] = set()
        prev = 0.0
        for i, ev in enumerate(self.events):
            if ev.time_s < 0:
                raise ValueError(f"event {i}: negative time {ev.time_s}")
            if ev.time_s < prev:
                raise ValueError(f"event {i}: time {ev.time_s} decreases below {prev}")
            prev = ev.time_s
            if ev.kind == ON:
                if ev.flow_id in active:
                    raise ValueError(f"event {i}: flow {ev.flow_id} switched on twice")
                if ev.pattern is None:
                    raise ValueError(f"event {i}: ON event without a pattern")
                active.add(ev.flow_id)
            else:
                if ev.flow_id not in active:
                    raise ValueError(f"event {i}: flow {ev.flow_id} switched off while idle")
                active.discard(ev.flow_id)


@dataclass(frozen=True)
class Endpoint:
    imsi: str
    dst_ip: str
    dst_port: int
    service_class: str


class EndpointMap:
    """UE id -> destination endpoint and service class."""

    def __init__(self, entries: dict[int, Endpoint], require_unique_ips: bool = True):
        self.entries = dict(sorted(entries.items()))
        if require_unique_ips:
            ips = [e.dst_ip for e in self.entries.values()]
            if len(set(ips)) != len(ips):
                raise ValueError("endpoint IPs must be unique per UE")

    def __getitem__(self, ue_id: int) -> Endpoint:
        try:
            return self.entries[ue_id]
        except KeyError:
            raise KeyError(f"no endpoint configured for UE {ue_id}") from None

    def ids_for_class(self, service_class: str) -> list[int]:
        return [u for u, e in self.entries.items() if e.service_class == service_class]

    @classmethod
    def default(cls, n_embb: int = 4, n_urllc: int = 4, port: int = 5000) -> "EndpointMap":
        """Testbed-style map: UE i -> 172.16.0.(i+2), IMSIs 1010123456002...."""
        entries = {}
        for i in range(1, n_embb + n_urllc + 1):
            entries[i] = Endpoint(
                imsi=f"10101234560{i + 1:02d}",
                dst_ip=f"172.16.0.{i + 2}",
                dst_port=port,
                service_class=EMBB if i <= n_embb else URLLC,
            )
        return cls(entries)

    @classmethod
    def loopback(cls, n_embb: int = 4, n_urllc: int = 4, port: int = 5000) -> "EndpointMap":
        """All UEs behind one local address; flows stay separable by flow id."""
        entries = {}
        for i in range(1, n_embb + n_urllc + 1):
            entries[i] = Endpoint(
                imsi=f"10101234560{i + 1:02d}",
                dst_ip="127.0.0.1",
                dst_port=port,
                service_class=EMBB if i <= n_embb else URLLC,
            )
        return cls(entries, require_unique_ips=False)


def fmt_num(x) -> str:
    """Canonical number formatting: integers plain, fractions at two decimals."""
    if float(x) == int(x):
        return str(int(x))
    return f"{float(x):.2f}"


def format_event(ev: FlowEvent) -> str:
    if ev.kind == OFF:
        return f"{fmt_num(ev.time_s)} OFF {ev.flow_id}"
    return (f"{fmt_num(ev.time_s)} ON {ev.flow_id} {ev.protocol} "
            f"DST {ev.dst_ip}/{ev.dst_port} {ev.pattern.keyword} [{ev.pattern.args_text()}]")


def emit_script(profiles: list[WindowProfile], endpoints: EndpointMap,
                warmup_s: float = 70.0, window_s: float | None = None) -> TrafficScript:
    """Build the ON/OFF event script realizing the window profiles.

    The first window starts at ``warmup_s``; each subsequent one follows after
    ``window_s`` seconds (or the profile's own width when not overridden). At
    each boundary, flows whose rate changed are stopped and restarted with the
    new pattern at that same event time; unchanged flows are left running.
    Within a class the lowest UE ids fill the active slots first. Rates are
    canonicalized to two decimals; a rate that rounds to zero keeps the flow
    off.
    """
    if warmup_s < 0:
        raise ValueError("warmup must be >= 0")
    events: list[FlowEvent] = []
    running: dict[int, FlowEvent] = {}
    t = warmup_s
    for prof in profiles:
        desired: dict[int, Periodic] = {}
        for class_name, flow in prof.per_class.items():
            rate = round(flow.per_ue_rate_msgs_s, 2)
            if rate <= 0.0:
                continue
            ue_ids = endpoints.ids_for_class(class_name)
            if len(ue_ids) < flow.n_active:
                raise KeyError(f"window {prof.window_index}: {flow.n_active} active "
                               f"{class_name} UEs but only {len(ue_ids)} endpoints mapped")
            for ue_id in ue_ids[:flow.n_active]:
                desired[ue_id] = Periodic(rate, flow.payload_bytes)

        offs = sorted(f for f, ev in running.items()
                      if f not in desired or desired[f] != ev.pattern)
        for f in offs:
            events.append(FlowEvent(t, OFF, f))
            del running[f]
        for f in sorted(set(desired) - set(running)):
            ep = endpoints[f]
            ev = FlowEvent(t, ON, f, "UDP", ep.dst_ip, ep.dst_port, desired[f])
            events.append(ev)
            running[f] = ev
        t += window_s if window_s is not None else prof.width_s
    script = TrafficScript(events)
    script.validate()
    return script


_ON_RE = re.compile(
    r"^(?P<time>\S+)\s+ON\s+(?P<flow>\S+)\s+(?P<proto>\S+)\s+DST\s+"
    r"(?P<ip>[0-9.]+)/(?P<port>\d+)\s+(?P<pat>[A-Z]+)\s+\[(?P<args>[^\]]*)\]\s*$")
_OFF_RE = re.compile(r"^(?P<time>\S+)\s+OFF\s+(?P<flow>\S+)\s*$")

_KNOWN_VERBS = {"ON", "OFF"}
_OTHER_MGEN_VERBS = {"MOD", "LISTEN", "IGNORE", "JOIN", "LEAVE", "INPUT", "TXBUFFER"}


def _parse_number(tok, line_no, what) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise ScriptError(line_no, f"{what} {tok!r} is not a number") from None
    return val


def _parse_ipv4(tok, line_no) -> str:
    parts = tok.split(".")
    if len(parts) != 4 or not all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
        raise ScriptError(line_no, f"invalid IPv4 address {tok!r}")
    return tok


def parse_script(text: str) -> TrafficScript:
    """Parse script text; raises ScriptError with the offending line number."""
    events: list[FlowEvent] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise ScriptError(line_no, "expected '<time> <verb> ...'")
        verb = tokens[1].upper()
        if verb not in _KNOWN_VERBS:
            if verb in _OTHER_MGEN_VERBS or verb.isalpha():
                raise UnsupportedDirective(line_no, verb)
            raise ScriptError(line_no, f"unrecognized verb {tokens[1]!r}")

        if verb == OFF:
            m = _OFF_RE.match(line)
            if not m:
                raise ScriptError(line_no, "OFF takes exactly '<time> OFF <flow_id>'")
            time_s = _parse_number(m["time"], line_no, "event time")
            if time_s < 0:
                raise ScriptError(line_no, "event time must be >= 0")
            if not m["flow"].isdigit() or int(m["flow"]) < 1:
                raise ScriptError(line_no, f"invalid flow id {m['flow']!r}")
            events.append(FlowEvent(time_s, OFF, int(m["flow"])))
            continue

        m = _ON_RE.match(line)
        if not m:
            raise ScriptError(line_no, "malformed ON event")
        time_s = _parse_number(m["time"], line_no, "event time")
        if time_s < 0:
            raise ScriptError(line_no, "event time must be >= 0")
        if not m["flow"].isdigit() or int(m["flow"]) < 1:
            raise ScriptError(line_no, f"invalid flow id {m['flow']!r}")
        if m["proto"].upper() != "UDP":
            raise UnsupportedDirective(line_no, m["proto"])
        ip = _parse_ipv4(m["ip"], line_no)
        port = int(m["port"])
        if not 1 <= port <= 65535:
            raise ScriptError(line_no, f"port {port} out of range")

        pat_name, args = m["pat"], m["args"].strip()
        if pat_name in ("PERIODIC", "POISSON"):
            parts = args.split()
            if len(parts) != 2:
                raise ScriptError(line_no, f"{pat_name} takes [<rate> <size>]")
            rate = _parse_number(parts[0], line_no, "rate")
            size = _parse_number(parts[1], line_no, "payload size")
            if rate < 0 or size <= 0 or size != int(size):
                raise ScriptError(line_no, "rate must be >= 0 and size a positive integer")
            cls = Periodic if pat_name == "PERIODIC" else Poisson
            pattern = cls(rate, int(size))
        elif pat_name == "BURST":
            pattern = Burst(args)
        else:
            raise UnsupportedDirective(line_no, pat_name)
        events.append(FlowEvent(time_s, ON, int(m["flow"]), "UDP", ip, port, pattern))

    times = [e.time_s for e in events]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ScriptError(0, "event times must be non-decreasing")
    return TrafficScript(events)


@dataclass(frozen=True)
class FlowSpan:
    """One continuous transmission interval of a flow."""

    flow_id: int
    start_s: float
    end_s: float
    dst_ip: str
    dst_port: int
    pattern: Periodic | Poisson | Burst


def active_spans(script: TrafficScript, end_time_s: float | None = None) -> list[FlowSpan]:
    """Resolve ON/OFF pairs into [start, end) spans; open flows end at end_time_s."""
    if end_time_s is None:
        end_time_s = script.duration()
    spans = []
    open_events: dict[int, FlowEvent] = {}
    for ev in script.events:
        if ev.kind == ON:
            if ev.flow_id in open_events:
                raise ValueError(f"flow {ev.flow_id} switched on twice")
            open_events[ev.flow_id] = ev
        else:
            on = open_events.pop(ev.flow_id, None)
            if on is None:
                raise ValueError(f"flow {ev.flow_id} switched off while idle")
            spans.append(FlowSpan(ev.flow_id, on.time_s, ev.time_s,
                                  on.dst_ip, on.dst_port, on.pattern))
    for on in open_events.values():
        spans.append(FlowSpan(on.flow_id, on.time_s, max(end_time_s, on.time_s),
                              on.dst_ip, on.dst_port, on.pattern))
    spans.sort(key=lambda s: (s.start_s, s.flow_id))
    return spans


def offered_bits(script: TrafficScript, t0: float, t1: float,
                 end_time_s: float | None = None) -> float:
    """Scheduled bits of all periodic flows within [t0, t1)."""
    total = 0.0
    for span in active_spans(script, end_time_s):
        if not isinstance(span.pattern, Periodic):
            continue
        overlap = min(span.end_s, t1) - max(span.start_s, t0)
        if overlap > 0:
            total += overlap * span.pattern.rate_msgs_s * span.pattern.payload_bytes * 8.0
    return total


def scaled(script: TrafficScript, factor: float,
           flow_ids: set[int] | None = None) -> TrafficScript:
    """Copy of the script with selected periodic rates scaled and re-canonicalized."""
    events = []
    for ev in script.events:
        if (ev.kind == ON and isinstance(ev.pattern, Periodic)
                and (flow_ids is None or ev.flow_id in flow_ids)):
            new_rate = round(ev.pattern.rate_msgs_s * factor, 2)
            events.append(replace(ev, pattern=Periodic(new_rate, ev.pattern.payload_bytes)))
        else:
            events.append(ev)
    return TrafficScript(events)
