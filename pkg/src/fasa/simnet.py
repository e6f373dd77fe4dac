"""Deterministic discrete-event SDN fabric.

Switches hold priority-ordered flow tables with OpenFlow-style idle/hard
timeouts (0 disables a clock). A packet that matches no entry is escalated to
the controller as a packet-in. Links have a fixed latency and unbounded
queues; byte accounting is observational only.

Port layout of the linear topology: host ports are ``1..hosts_per_switch``;
port ``hosts_per_switch + 1`` faces the previous switch and
``hosts_per_switch + 2`` the next one. Each switch carries two priority-1
entries that hand traffic arriving on its trunk ports to ``Normal`` (plain L2
forwarding), so only traffic entering from a host port is escalated.
"""

from __future__ import annotations

import bisect
import heapq
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Union

# TCP flag bits
FIN, SYN, RST, PSH, ACK, URG = 0x01, 0x02, 0x04, 0x08, 0x10, 0x20
TCP = 6

HOST_LINK_LATENCY = 0.001
TRUNK_LINK_LATENCY = 0.001
CONTROL_LATENCY = 0.0005
SWEEP_INTERVAL = 1.0


class SimulationError(RuntimeError):
    """Configuration bug or impossible event ordering."""


def mac_of(k: int) -> str:
    return ":".join(f"{(k >> s) & 0xFF:02x}" for s in range(40, -8, -8))


def ip_of(k: int) -> str:
    return f"10.0.{k // 256}.{k % 256}"


@dataclass(slots=True)
class Packet:
    time: float
    src_mac: str
    dst_mac: str
    src_ip: str
    dst_ip: str
    ip_protocol: int = TCP
    tcp_flags: int = 0
    src_port: int = 0
    dst_port: int = 0
    size: int = 60
    pid: int = -1

    def __post_init__(self):
        if self.time < 0:
            raise SimulationError("packet timestamp must be >= 0")
        if self.size <= 0:
            raise SimulationError("packet size must be > 0")

    def fields(self) -> dict:
        return {
            "src_mac": self.src_mac,
            "dst_mac": self.dst_mac,
            "src_ip": self.src_ip,
            "dst_ip": self.dst_ip,
            "ip_protocol": self.ip_protocol,
            "tcp_flags": self.tcp_flags,
            "src_port": self.src_port,
            "dst_port": self.dst_port,
            "size": self.size,
        }


# --------------------------------------------------------------------------
# Flow tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowMatch:
    """Unset fields are wildcards. ``tcp_flags`` matches when all its bits are set."""

    in_port: Optional[int] = None
    src_mac: Optional[str] = None
    dst_mac: Optional[str] = None
    src_ip: Optional[str] = None
    dst_ip: Optional[str] = None
    ip_protocol: Optional[int] = None
    tcp_flags: Optional[int] = None
    wildcard: bool = False

    @classmethod
    def any(cls) -> "FlowMatch":
        return cls(wildcard=True)

    def set_fields(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "wildcard" and v is not None}

    def is_valid(self) -> bool:
        return self.wildcard or bool(self.set_fields())

    def matches(self, pkt: Packet, in_port: int) -> bool:
        if self.in_port is not None and self.in_port != in_port:
            return False
        if self.src_mac is not None and self.src_mac != pkt.src_mac:
            return False
        if self.dst_mac is not None and self.dst_mac != pkt.dst_mac:
            return False
        if self.src_ip is not None and self.src_ip != pkt.src_ip:
            return False
        if self.dst_ip is not None and self.dst_ip != pkt.dst_ip:
            return False
        if self.ip_protocol is not None and self.ip_protocol != pkt.ip_protocol:
            return False
        if self.tcp_flags is not None and (pkt.tcp_flags & self.tcp_flags) != self.tcp_flags:
            return False
        return True


@dataclass(frozen=True)
class Forward:
    port: int


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class ToController:
    pass


@dataclass(frozen=True)
class Normal:
    """Forward toward ``dst_mac`` using the topology's host-location table."""


Action = Union[Forward, Drop, ToController, Normal]


def action_name(action: Action) -> str:
    if isinstance(action, Forward):
        return f"forward:{action.port}"
    return type(action).__name__.lower()


@dataclass
class FlowEntry:
    match: FlowMatch
    priority: int
    action: Action
    idle_timeout: float = 0.0
    hard_timeout: float = 0.0
    install_time: float = 0.0
    last_match_time: float = 0.0
    packet_count: int = 0
    byte_count: int = 0
    seq: int = -1

    def deadline(self) -> float:
        """Earliest time at which the entry expires (inf if it never does)."""
        t = float("inf")
        if self.hard_timeout > 0:
            t = min(t, self.install_time + self.hard_timeout)
        if self.idle_timeout > 0:
            t = min(t, self.last_match_time + self.idle_timeout)
        return t

    def expired(self, now: float) -> bool:
        return now >= self.deadline()

    def describe(self) -> dict:
        return {
            "seq": self.seq,
            "priority": self.priority,
            "match": self.match.set_fields() or {"wildcard": True},
            "action": action_name(self.action),
            "idle_timeout": self.idle_timeout,
            "hard_timeout": self.hard_timeout,
        }


class FlowTable:
    """Entries kept sorted by (-priority, seq): the first match is the winner."""

    def __init__(self):
        self._entries: list[FlowEntry] = []
        self._keys: list[tuple[int, int]] = []
        self._seq = 0
        self._next_deadline = float("inf")

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(list(self._entries))

    def install(self, entry: FlowEntry, now: float) -> tuple[FlowEntry, Optional[FlowEntry]]:
        """Insert ``entry`` with fresh timers; returns (entry, replaced entry or None)."""
        if not entry.match.is_valid():
            raise SimulationError("flow match must set a field or be an explicit wildcard")
        replaced = None
        for i, old in enumerate(self._entries):
            if old.priority == entry.priority and old.match == entry.match:
                replaced = old
                del self._entries[i]
                del self._keys[i]
                break
        entry.install_time = now
        entry.last_match_time = now
        entry.packet_count = 0
        entry.byte_count = 0
        entry.seq = self._seq
        self._seq += 1
        key = (-entry.priority, entry.seq)
        i = bisect.bisect(self._keys, key)
        self._keys.insert(i, key)
        self._entries.insert(i, entry)
        self._next_deadline = min(self._next_deadline, entry.deadline())
        return entry, replaced

    def remove(self, entry: FlowEntry) -> None:
        i = self._entries.index(entry)
        del self._entries[i]
        del self._keys[i]

    def expire(self, now: float) -> list[FlowEntry]:
        if now < self._next_deadline:
            return []
        gone = [e for e in self._entries if e.expired(now)]
        if gone:
            keep = [(k, e) for k, e in zip(self._keys, self._entries) if not e.expired(now)]
            self._keys = [k for k, _ in keep]
            self._entries = [e for _, e in keep]
        self._next_deadline = min((e.deadline() for e in self._entries), default=float("inf"))
        return gone

    def lookup(self, pkt: Packet, in_port: int, now: float) -> Optional[FlowEntry]:
        """Highest-priority live match (first installed on ties); updates its counters.

        Callers must run :meth:`expire` at ``now`` first.
        """
        for e in self._entries:
            if e.match.matches(pkt, in_port):
                e.packet_count += 1
                e.byte_count += pkt.size
                e.last_match_time = now
                return e
        return None


def match_packet(table: FlowTable, pkt: Packet, in_port: int, now: float = 0.0) -> Optional[FlowEntry]:
    table.expire(now)
    return table.lookup(pkt, in_port, now)


# --------------------------------------------------------------------------
# Topology
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HostInfo:
    hid: int
    mac: str
    ip: str
    switch: int
    port: int


@dataclass
class Topology:
    switches: list[int]
    hosts: list[HostInfo]
    links: list[tuple]
    hosts_per_switch: int
    controller: str = "c0"
    host_location: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        self._by_ip = {h.ip: h for h in self.hosts}
        self._by_mac = {h.mac: h for h in self.hosts}
        self._by_id = {h.hid: h for h in self.hosts}
        if not self.host_location:
            self.host_location = {h.mac: (h.switch, h.port) for h in self.hosts}

    def host(self, hid: int) -> HostInfo:
        try:
            return self._by_id[hid]
        except KeyError:
            raise SimulationError(f"host {hid} not in topology") from None

    def host_by_ip(self, ip: str) -> Optional[HostInfo]:
        return self._by_ip.get(ip)

    def host_by_mac(self, mac: str) -> Optional[HostInfo]:
        return self._by_mac.get(mac)

    @property
    def prev_port(self) -> int:
        return self.hosts_per_switch + 1

    @property
    def next_port(self) -> int:
        return self.hosts_per_switch + 2

    def ports(self, sid: int) -> set[int]:
        ports = {h.port for h in self.hosts if h.switch == sid}
        idx = self.switches.index(sid)
        if idx > 0:
            ports.add(self.prev_port)
        if idx < len(self.switches) - 1:
            ports.add(self.next_port)
        return ports

    def out_port(self, sid: int, dst_mac: str) -> Optional[int]:
        loc = self.host_location.get(dst_mac)
        if loc is None:
            return None
        dst_switch, dst_port = loc
        if dst_switch == sid:
            return dst_port
        return self.next_port if self.switches.index(dst_switch) > self.switches.index(sid) else self.prev_port

    def neighbor(self, sid: int, port: int) -> tuple[str, int, int]:
        """(kind, id, port) at the far end of ``port`` on switch ``sid``."""
        if port == self.prev_port and self.switches.index(sid) > 0:
            return ("switch", self.switches[self.switches.index(sid) - 1], self.next_port)
        if port == self.next_port and self.switches.index(sid) < len(self.switches) - 1:
            return ("switch", self.switches[self.switches.index(sid) + 1], self.prev_port)
        for h in self.hosts:
            if h.switch == sid and h.port == port:
                return ("host", h.hid, 0)
        raise SimulationError(f"switch {sid} has no port {port}")

    def path_latency(self) -> float:
        """Worst-case host-to-host latency across the fabric."""
        return 2 * HOST_LINK_LATENCY + (len(self.switches) - 1) * TRUNK_LINK_LATENCY


def build_linear_topology(n_switches: int = 8, hosts_per_switch: int = 8) -> Topology:
    """Chain of switches s1..sN, each with ``hosts_per_switch`` hosts numbered globally from 1."""
    if n_switches < 1 or hosts_per_switch < 1:
        raise SimulationError("need at least one switch and one host per switch")
    switches = list(range(1, n_switches + 1))
    hosts, links = [], []
    k = 1
    for sid in switches:
        for port in range(1, hosts_per_switch + 1):
            hosts.append(HostInfo(k, mac_of(k), ip_of(k), sid, port))
            links.append(("host", k, 0, "switch", sid, port))
            k += 1
    for a, b in zip(switches, switches[1:]):
        links.append(("switch", a, hosts_per_switch + 2, "switch", b, hosts_per_switch + 1))
    return Topology(switches, hosts, links, hosts_per_switch)


# --------------------------------------------------------------------------
# Event loop
# --------------------------------------------------------------------------


class EventQueue:
    """Min-heap on (time, insertion sequence)."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self.now = 0.0

    def __len__(self):
        return len(self._heap)

    def push(self, t: float, fn: Callable, *args) -> None:
        if t < self.now:
            raise SimulationError(f"event scheduled in the past: {t} < {self.now}")
        heapq.heappush(self._heap, (t, self._seq, fn, args))
        self._seq += 1

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else float("inf")

    def pop(self):
        t, _, fn, args = heapq.heappop(self._heap)
        self.now = t
        return fn, args


class Switch:
    def __init__(self, sid: int, net: "Network"):
        self.sid = sid
        self.net = net
        self.table = FlowTable()
        self.ports = net.topology.ports(sid)

    def expire(self, now: float):
        for e in self.table.expire(now):
            self.net.record(now, "expire", switch=self.sid, seq=e.seq, packets=e.packet_count)

    def process_packet(self, pkt: Packet, in_port: int) -> Action:
        now = self.net.now
        self.expire(now)
        entry = self.table.lookup(pkt, in_port, now)
        if self.net.trace_matches:
            self.net.record(now, "match", switch=self.sid, pid=pkt.pid, in_port=in_port,
                            seq=None if entry is None else entry.seq)
        if entry is None or isinstance(entry.action, ToController):
            self.net.packet_in(self.sid, in_port, pkt)
            return ToController()
        self.apply(entry.action, pkt, in_port)
        return entry.action

    def apply(self, action: Action, pkt: Packet, in_port: int) -> None:
        if isinstance(action, Drop):
            self.net.drop(pkt, "flow_drop", switch=self.sid)
        elif isinstance(action, Forward):
            self.output(pkt, action.port)
        elif isinstance(action, Normal):
            port = self.net.topology.out_port(self.sid, pkt.dst_mac)
            if port is None:
                self.net.drop(pkt, "no_route", switch=self.sid)
            else:
                self.output(pkt, port)
        elif isinstance(action, ToController):
            self.net.packet_in(self.sid, in_port, pkt)

    def output(self, pkt: Packet, port: int) -> None:
        if port not in self.ports:
            raise SimulationError(f"switch {self.sid} has no port {port}")
        kind, ident, far_port = self.net.topology.neighbor(self.sid, port)
        if kind == "switch":
            self.net.queue.push(self.net.now + TRUNK_LINK_LATENCY, self.net._arrive_switch, ident, far_port, pkt)
        else:
            self.net.queue.push(self.net.now + HOST_LINK_LATENCY, self.net._arrive_host, ident, pkt)


class Network:
    """Runtime for one simulation: switches, host handlers, controller hook and trace.

    ``host_handlers[hid](net, pkt)`` is called on delivery. ``controller(net,
    switch, in_port, pkt)`` receives packet-ins; without one they are dropped.
    """

    def __init__(self, topology: Topology, *, trace_matches: bool = False, transit_rules: bool = True):
        self.topology = topology
        self.queue = EventQueue()
        self.trace: list[dict] = []
        self.trace_matches = trace_matches
        self.switches = {sid: Switch(sid, self) for sid in topology.switches}
        self.host_handlers: dict[int, Callable] = {}
        self.controller: Optional[Callable] = None
        self._pid = 0
        self._sweeping = False
        if transit_rules:
            for sid, sw in self.switches.items():
                for port in (topology.prev_port, topology.next_port):
                    if port in sw.ports:
                        self.install_rule(sid, FlowEntry(FlowMatch(in_port=port), 1, Normal()))

    @property
    def now(self) -> float:
        return self.queue.now

    def record(self, t: float, kind: str, **fields) -> None:
        self.trace.append({"t": t, "kind": kind, **fields})

    def schedule(self, t: float, fn: Callable, *args) -> None:
        self.queue.push(t, fn, *args)

    # packet lifecycle ------------------------------------------------------

    def send(self, hid: int, pkt: Packet) -> Packet:
        """Inject ``pkt`` from host ``hid`` at ``pkt.time`` (must not be in the past)."""
        host = self.topology.host(hid)
        pkt.pid = self._pid
        self._pid += 1
        self.queue.push(pkt.time, self._inject, host, pkt)
        return pkt

    def send_unroutable(self, hid: int, pkt: Packet, reason: str = "no_route") -> Packet:
        """Record a packet the host stack generated but could not put on the wire."""
        pkt.pid = self._pid
        self._pid += 1
        self.record(pkt.time, "inject", host=hid, pid=pkt.pid, **pkt.fields())
        self.record(pkt.time, "drop", pid=pkt.pid, reason=reason, host=hid)
        return pkt

    def _inject(self, host: HostInfo, pkt: Packet) -> None:
        self.record(self.now, "inject", host=host.hid, pid=pkt.pid, **pkt.fields())
        self.queue.push(self.now + HOST_LINK_LATENCY, self._arrive_switch, host.switch, host.port, pkt)

    def _arrive_switch(self, sid: int, in_port: int, pkt: Packet) -> None:
        self.switches[sid].process_packet(pkt, in_port)

    def _arrive_host(self, hid: int, pkt: Packet) -> None:
        self.record(self.now, "deliver", host=hid, pid=pkt.pid, size=pkt.size, src_mac=pkt.src_mac)
        handler = self.host_handlers.get(hid)
        if handler is not None:
            handler(self, pkt)

    def drop(self, pkt: Packet, reason: str, **where) -> None:
        self.record(self.now, "drop", pid=pkt.pid, reason=reason, **where)

    # control plane ---------------------------------------------------------

    def packet_in(self, sid: int, in_port: int, pkt: Packet) -> None:
        self.record(self.now, "packet_in", switch=sid, in_port=in_port, pid=pkt.pid, **pkt.fields())
        if self.controller is None:
            self.drop(pkt, "no_controller", switch=sid)
            return
        self.queue.push(self.now + CONTROL_LATENCY, self.controller, self, sid, in_port, pkt)

    def packet_out(self, sid: int, pkt: Packet, port: int) -> None:
        self.queue.push(self.now + CONTROL_LATENCY, self.switches[sid].output, pkt, port)

    def install_rule(self, sid: int, entry: FlowEntry) -> FlowEntry:
        sw = self.switches[sid]
        sw.expire(self.now)
        entry, replaced = sw.table.install(entry, self.now)
        if replaced is not None:
            self.record(self.now, "remove", switch=sid, seq=replaced.seq, reason="replaced")
        self.record(self.now, "install", switch=sid, **entry.describe())
        return entry

    # running -----------------------------------------------------------------

    def _sweep(self) -> None:
        for sw in self.switches.values():
            sw.expire(self.now)
        self.queue.push(self.now + SWEEP_INTERVAL, self._sweep)

    def run(self, until: float) -> list[dict]:
        """Process events with time <= ``until``; returns the trace so far."""
        if until < self.now:
            raise SimulationError("horizon lies in the past")
        if not self._sweeping:
            self._sweeping = True
            self.queue.push(self.now + SWEEP_INTERVAL, self._sweep)
        while self.queue.peek_time() <= until:
            fn, args = self.queue.pop()
            fn(*args)
        self.queue.now = until
        return self.trace


def run(net: Network, events: Iterable[tuple[int, Packet]] = (), until: float = 0.0) -> list[dict]:
    """Inject ``(host id, packet)`` pairs and run to ``until``."""
    for hid, pkt in events:
        net.send(hid, pkt)
    return net.run(until)


def packet_fates(trace: Iterable[dict]) -> dict[int, str]:
    """pid -> 'delivered' | 'dropped' | 'in_flight'; raises if a packet ends twice."""
    fate: dict[int, str] = {}
    for rec in trace:
        kind = rec["kind"]
        if kind == "inject":
            if rec["pid"] in fate:
                raise SimulationError(f"packet {rec['pid']} injected twice")
            fate[rec["pid"]] = "in_flight"
        elif kind in ("deliver", "drop"):
            pid = rec["pid"]
            if fate.get(pid) != "in_flight":
                raise SimulationError(f"packet {pid} has a second terminal event or was never injected")
            fate[pid] = "delivered" if kind == "deliver" else "dropped"
    return fate


def write_trace(trace: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def dump_trace(trace: Iterable[dict]) -> bytes:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in trace).encode()


def trace_by_kind(trace: Iterable[dict], kind: str) -> list[dict]:
    return [r for r in trace if r["kind"] == kind]


__all__ = [
    "Packet", "FlowMatch", "FlowEntry", "FlowTable", "Forward", "Drop", "ToController", "Normal",
    "Topology", "HostInfo", "build_linear_topology", "Network", "EventQueue", "Switch",
    "match_packet", "packet_fates", "SimulationError", "run", "write_trace",
]
