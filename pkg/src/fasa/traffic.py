"""Scenario workload: benign TCP clients, a SYN flood with spoofed sources, and the server host.

Benign clients open repeated connections to the server, each with a full
three-way handshake, then stream Poisson-timed data segments for an
exponentially distributed lifetime before closing with FIN. Segments are
large (offload-sized) so the configured bandwidth is reached at a modest
packet rate. A SYN that goes unanswered is retransmitted with doubling
backoff, which is how a full half-open table shows up as a goodput dip.

The attacker sends SYN-only packets from its real MAC with a source IP drawn
from a spoofed pool. The server answers them, but the SYN/ACKs cannot be
delivered (there is no such host), so those half-open entries only leave the
table by timing out.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .simnet import ACK, FIN, PSH, SYN, Network, Packet, SimulationError, Topology, build_linear_topology


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    duration: float = 140.0
    collection_interval: float = 5.0
    bandwidth_mbps: float = 100.0
    server_host: int = 1
    server_port: int = 80
    benign_flows: int = 20
    segment_size: int = 62500
    mean_connection: float = 10.0
    syn_retry: float = 1.0
    attack_enabled: bool = True
    attack_start: float = 60.0
    attack_rate: float = 700.0
    attack_jitter: float = 0.1
    attacker_host: int = 21
    spoof_pool: int = 10000
    half_open_limit: int = 1024
    half_open_timeout: float = 10.0
    n_switches: int = 8
    hosts_per_switch: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0 or self.collection_interval <= 0:
            raise ScenarioError("duration and collection_interval must be > 0")
        if self.attack_enabled and not 0 <= self.attack_start <= self.duration:
            raise ScenarioError("attack_start must lie in [0, duration]")
        if self.bandwidth_mbps <= 0 or self.attack_rate <= 0 or self.benign_flows < 0:
            raise ScenarioError("rates must be > 0")
        if not 0 <= self.attack_jitter < 1:
            raise ScenarioError("attack_jitter must be in [0, 1)")
        if self.spoof_pool < 1 or self.half_open_limit < 1 or self.segment_size < 1:
            raise ScenarioError("spoof_pool, half_open_limit and segment_size must be >= 1")

    @property
    def benign_pps(self) -> float:
        """Aggregate benign data rate implied by the bandwidth reference."""
        return self.bandwidth_mbps * 1e6 / (8 * self.segment_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"scenario config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ScenarioError("scenario config must be a JSON object")
        return cls.from_dict(doc)


class GroundTruth:
    """pid -> label (0 benign, 1 attack), fixed when the packet is generated."""

    def __init__(self):
        self.labels: dict[int, int] = {}
        self.times: dict[int, float] = {}

    def __len__(self):
        return len(self.labels)

    def record(self, pkt: Packet, label: int) -> None:
        if pkt.pid in self.labels:
            raise ScenarioError(f"packet {pkt.pid} labelled twice")
        self.labels[pkt.pid] = label
        self.times[pkt.pid] = pkt.time

    def label(self, pid: int) -> int:
        return self.labels[pid]

    def window_counts(self, start: float, end: float) -> tuple[int, int]:
        """(benign, attack) packets generated in [start, end)."""
        counts = [0, 0]
        for pid, t in self.times.items():
            if start <= t < end:
                counts[self.labels[pid]] += 1
        return counts[0], counts[1]


def _emit(net: Network, truth: GroundTruth, hid: int, pkt: Packet, label: int) -> Packet:
    net.send(hid, pkt)
    truth.record(pkt, label)
    return pkt


class Server:
    """Listening host with a bounded half-open table keyed by (src_ip, src_port)."""

    def __init__(self, net: Network, truth: GroundTruth, cfg: ScenarioConfig):
        self.net, self.truth, self.cfg = net, truth, cfg
        self.info = net.topology.host(cfg.server_host)
        self.half_open: dict[tuple[str, int], float] = {}
        self.established: set[tuple[str, int]] = set()
        self.syn_dropped = 0
        self.handshakes = 0
        self.data_bytes = 0

    def _purge(self, now: float) -> None:
        if self.half_open:
            dead = [k for k, t in self.half_open.items() if now - t >= self.cfg.half_open_timeout]
            for k in dead:
                del self.half_open[k]

    def _synack(self, pkt: Packet) -> None:
        now = self.net.now
        peer = self.net.topology.host_by_ip(pkt.src_ip)
        reply = Packet(now, self.info.mac, peer.mac if peer else "ff:ff:ff:ff:ff:ff", self.info.ip,
                       pkt.src_ip, tcp_flags=SYN | ACK, src_port=pkt.dst_port, dst_port=pkt.src_port, size=74)
        if peer is None:
            # no neighbour answers for a spoofed address, so the reply never leaves the host
            self.net.send_unroutable(self.info.hid, reply)
            self.truth.record(reply, 0)
        else:
            _emit(self.net, self.truth, self.info.hid, reply, 0)

    def on_packet(self, net: Network, pkt: Packet) -> None:
        if pkt.dst_port != self.cfg.server_port:
            return
        key = (pkt.src_ip, pkt.src_port)
        flags = pkt.tcp_flags
        if flags == SYN:
            self._purge(net.now)
            if key in self.established:
                return
            if key not in self.half_open and len(self.half_open) >= self.cfg.half_open_limit:
                self.syn_dropped += 1
                return
            self.half_open[key] = net.now
            self._synack(pkt)
        elif flags & FIN:
            self.established.discard(key)
        elif flags & ACK:
            if key in self.half_open:
                del self.half_open[key]
                self.established.add(key)
                self.handshakes += 1
            if key in self.established and flags & PSH:
                self.data_bytes += pkt.size


class Client:
    """Repeatedly connects to the server and streams data at ``rate`` packets/s."""

    def __init__(self, net: Network, truth: GroundTruth, cfg: ScenarioConfig, hid: int, rate: float,
                 rng: np.random.Generator):
        self.net, self.truth, self.cfg, self.rng = net, truth, cfg, rng
        self.info = net.topology.host(hid)
        self.server = net.topology.host(cfg.server_host)
        self.rate = rate
        self.state = "idle"
        self.port = 0
        self.conn = 0
        self.rto = cfg.syn_retry
        self.end = 0.0
        self.connections = 0

    def _packet(self, flags: int, size: int) -> Packet:
        return Packet(self.net.now, self.info.mac, self.server.mac, self.info.ip, self.server.ip,
                      tcp_flags=flags, src_port=self.port, dst_port=self.cfg.server_port, size=size)

    def _send(self, flags: int, size: int) -> None:
        _emit(self.net, self.truth, self.info.hid, self._packet(flags, size), 0)

    def start(self, t: float) -> None:
        self.net.schedule(t, self.connect)

    def connect(self) -> None:
        self.conn += 1
        self.port = 40000 + (self.conn % 20000)
        self.state = "syn_sent"
        self.rto = self.cfg.syn_retry
        self._send(SYN, 74)
        self.net.schedule(self.net.now + self.rto, self._retry, self.conn)

    def _retry(self, conn: int) -> None:
        if self.state != "syn_sent" or conn != self.conn:
            return
        self.rto = min(2 * self.rto, 8.0)
        self._send(SYN, 74)
        self.net.schedule(self.net.now + self.rto, self._retry, conn)

    def on_packet(self, net: Network, pkt: Packet) -> None:
        if pkt.tcp_flags == SYN | ACK and pkt.dst_port == self.port and self.state == "syn_sent":
            self._send(ACK, 66)
            self.state = "established"
            self.connections += 1
            self.end = net.now + self.rng.exponential(self.cfg.mean_connection)
            net.schedule(net.now + self.rng.exponential(1.0 / self.rate), self._data, self.conn)

    def _data(self, conn: int) -> None:
        if self.state != "established" or conn != self.conn:
            return
        now = self.net.now
        if now >= self.end:
            self._send(FIN | ACK, 66)
            self.state = "idle"
            self.net.schedule(now + self.rng.exponential(0.05), self.connect)
            return
        self._send(PSH | ACK, self.cfg.segment_size)
        self.net.schedule(now + self.rng.exponential(1.0 / self.rate), self._data, conn)


class Attacker:
    """Constant-rate SYN source with jittered spacing and spoofed source IPs."""

    def __init__(self, net: Network, truth: GroundTruth, cfg: ScenarioConfig, rng: np.random.Generator):
        self.net, self.truth, self.cfg, self.rng = net, truth, cfg, rng
        self.info = net.topology.host(cfg.attacker_host)
        self.server = net.topology.host(cfg.server_host)
        # spoofed addresses come from 172.16.0.0/12, which no topology host uses
        offsets = rng.choice(1 << 20, size=min(cfg.spoof_pool, 1 << 20), replace=False)
        self.pool = [f"172.{16 + (o >> 16)}.{(o >> 8) & 0xFF}.{o & 0xFF}" for o in np.sort(offsets)]
        self.sent = 0

    def start(self) -> None:
        self.net.schedule(self.cfg.attack_start, self._tick)

    def _tick(self) -> None:
        now = self.net.now
        if now >= self.cfg.duration:
            return
        src_ip = self.pool[int(self.rng.integers(len(self.pool)))]
        pkt = Packet(now, self.info.mac, self.server.mac, src_ip, self.server.ip, tcp_flags=SYN,
                     src_port=int(self.rng.integers(1024, 65536)), dst_port=self.cfg.server_port, size=54)
        _emit(self.net, self.truth, self.info.hid, pkt, 1)
        self.sent += 1
        j = self.cfg.attack_jitter
        gap = (1.0 + self.rng.uniform(-j, j)) / self.cfg.attack_rate
        self.net.schedule(now + gap, self._tick)


def client_hosts(cfg: ScenarioConfig, topology: Topology) -> list[int]:
    """Benign client hosts: every third host, skipping the server and attacker."""
    reserved = {cfg.server_host, cfg.attacker_host}
    candidates = [h.hid for h in topology.hosts if h.hid not in reserved][1::3]
    if len(candidates) < cfg.benign_flows:
        candidates += [h.hid for h in topology.hosts if h.hid not in reserved and h.hid not in candidates]
    return candidates[: cfg.benign_flows]


@dataclass
class Workload:
    server: Server
    clients: list[Client]
    attacker: Optional[Attacker]


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def gen_benign(net: Network, truth: GroundTruth, cfg: ScenarioConfig) -> tuple[Server, list[Client]]:
    """Attach the server and benign clients to ``net``; traffic starts near t=0."""
    try:
        server = Server(net, truth, cfg)
    except SimulationError:
        raise ScenarioError(f"server host {cfg.server_host} not in topology") from None
    net.host_handlers[server.info.hid] = server.on_packet
    hosts = client_hosts(cfg, net.topology)
    per_flow = cfg.benign_pps / max(len(hosts), 1)
    rngs = _streams(cfg.seed, len(hosts) + 1)
    clients = []
    for hid, rng in zip(hosts, rngs[1:]):
        c = Client(net, truth, cfg, hid, per_flow, rng)
        net.host_handlers[hid] = c.on_packet
        c.start(float(rng.uniform(0.0, 0.5)))
        clients.append(c)
    return server, clients


def gen_synflood(net: Network, truth: GroundTruth, cfg: ScenarioConfig) -> Attacker:
    try:
        attacker = Attacker(net, truth, cfg, np.random.default_rng([cfg.seed, 1]))
    except SimulationError:
        raise ScenarioError(f"attacker host {cfg.attacker_host} not in topology") from None
    attacker.start()
    return attacker


class ForwardingController:
    """Reactive L2 controller with no security logic: every packet-in is packet-out."""

    def __init__(self):
        self.decisions: list[dict] = []
        self.actions: list = []
        self.windows: list = []

    def attach(self, net: Network, cfg: ScenarioConfig) -> None:
        net.controller = self.on_packet_in

    def on_packet_in(self, net: Network, sid: int, in_port: int, pkt: Packet) -> None:
        port = net.topology.out_port(sid, pkt.dst_mac)
        if port is None:
            net.drop(pkt, "no_route", switch=sid)
        else:
            net.packet_out(sid, pkt, port)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    topology: Topology
    trace: list[dict]
    truth: GroundTruth
    timeline: list[dict]
    workload: Workload
    detector: object

    @property
    def decisions(self) -> list[dict]:
        return self.detector.decisions

    @property
    def actions(self) -> list:
        return self.detector.actions


TIMELINE_COLUMNS = [
    "t_start", "t_end", "server_pps", "server_mbps", "benign_pps", "attack_pps",
    "generated_benign", "generated_attack", "packet_in_pps", "suspicious",
    "malicious_rows", "mitigations",
]


def build_timeline(cfg: ScenarioConfig, trace: list[dict], truth: GroundTruth, detector) -> list[dict]:
    interval = cfg.collection_interval
    n = int(np.ceil(cfg.duration / interval - 1e-9))
    rows = [dict.fromkeys(TIMELINE_COLUMNS, 0) for _ in range(n)]
    for k, row in enumerate(rows):
        row["t_start"] = k * interval
        row["t_end"] = min((k + 1) * interval, cfg.duration)
    server = cfg.server_host
    delivered = [[0, 0, 0] for _ in range(n)]  # benign, attack, bytes
    packet_ins = [0] * n
    generated = [[0, 0] for _ in range(n)]
    for rec in trace:
        k = min(int(rec["t"] // interval), n - 1)
        kind = rec["kind"]
        if kind == "deliver" and rec["host"] == server:
            d = delivered[k]
            d[truth.label(rec["pid"])] += 1
            d[2] += rec["size"]
        elif kind == "packet_in":
            packet_ins[k] += 1
        elif kind == "inject" and rec["pid"] in truth.labels:
            generated[k][truth.label(rec["pid"])] += 1
    for k, row in enumerate(rows):
        span = row["t_end"] - row["t_start"]
        b, a, nbytes = delivered[k]
        row["server_pps"] = (b + a) / span
        row["server_mbps"] = nbytes * 8 / 1e6 / span
        row["benign_pps"] = b / span
        row["attack_pps"] = a / span
        row["generated_benign"], row["generated_attack"] = generated[k]
        row["packet_in_pps"] = packet_ins[k] / span
    for w in getattr(detector, "windows", []):
        k = int(round(w["start"] / interval))
        if 0 <= k < n:
            rows[k]["suspicious"] = int(w["suspicious"])
            rows[k]["malicious_rows"] = w["malicious_rows"]
            rows[k]["mitigations"] = w["mitigations"]
    return rows


def run_scenario(cfg: Optional[ScenarioConfig] = None, topology: Optional[Topology] = None,
                 detector=None, *, trace_matches: bool = False) -> ScenarioResult:
    """Compose workload, fabric and detector, run to ``cfg.duration``.

    ``detector`` needs an ``attach(net, cfg)`` method; the default is a plain
    :class:`ForwardingController`.
    """
    cfg = cfg or ScenarioConfig()
    topology = topology or build_linear_topology(cfg.n_switches, cfg.hosts_per_switch)
    detector = detector if detector is not None else ForwardingController()
    net = Network(topology, trace_matches=trace_matches)
    truth = GroundTruth()
    server, clients = gen_benign(net, truth, cfg)
    attacker = gen_synflood(net, truth, cfg) if cfg.attack_enabled else None
    detector.attach(net, cfg)
    trace = net.run(cfg.duration)
    timeline = build_timeline(cfg, trace, truth, detector)
    return ScenarioResult(cfg, topology, trace, truth, timeline, Workload(server, clients, attacker), detector)


def write_timeline_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TIMELINE_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in TIMELINE_COLUMNS])
