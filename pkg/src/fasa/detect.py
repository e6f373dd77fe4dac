"""Controller-side detection and mitigation loop.

Every collection interval the controller aggregates the packet-ins it saw
into per-flow rows, flags the window when its packet rate exceeds the
serving-capacity threshold, classifies each row with the ANFIS model, and
then:

* blocks the MAC that shows up with the most distinct source IPs among the
  malicious rows, by installing a MAC drop and a port drop on its edge switch;
* installs a forward rule for every benign row so that flow stops reaching
  the controller.

The flag does not short-circuit anything. Every row is classified either way.

The model sees window aggregates, not the offline flow features. A default
model for these features ships with the package (``data/sim_model.json``);
:func:`train_default_model` regenerates it from simulator runs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import anfis, metrics
from .preprocess import Scaler
from .simnet import ACK, SYN, Drop, FlowEntry, FlowMatch, Forward, Network, Packet, Topology
from .traffic import GroundTruth, ScenarioConfig, run_scenario

log = logging.getLogger(__name__)


class DetectError(ValueError):
    pass


# --------------------------------------------------------------------------
# Window aggregation
# --------------------------------------------------------------------------


@dataclass
class FlowRow:
    src_mac: str
    src_ip: str
    dst_ip: str
    switch: int = 0
    in_port: int = 0
    packets: int = 0
    syn: int = 0
    ack: int = 0
    bytes: int = 0
    fanout: int = 0
    pids: list[int] = field(default_factory=list, repr=False, compare=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src_mac, self.src_ip, self.dst_ip)


@dataclass
class WindowStats:
    start: float
    end: float
    rows: list[FlowRow]
    total_packets: int = 0

    @property
    def pps(self) -> float:
        return self.total_packets / (self.end - self.start)


def collect_window(records: Iterable[dict], start: float, interval: float) -> WindowStats:
    """Aggregate packet-in records with ``start <= t < start + interval``.

    Rows appear in order of their first packet. ``fanout`` is the number of
    distinct source IPs seen for the row's MAC over the whole window.
    """
    if interval <= 0:
        raise DetectError("interval must be > 0")
    end = start + interval
    rows: dict[tuple, FlowRow] = {}
    ips_per_mac: dict[str, set] = {}
    total = 0
    for rec in records:
        if rec.get("kind", "packet_in") != "packet_in" or not start <= rec["t"] < end:
            continue
        key = (rec["src_mac"], rec["src_ip"], rec["dst_ip"])
        row = rows.get(key)
        if row is None:
            row = rows[key] = FlowRow(*key, switch=rec["switch"], in_port=rec["in_port"])
        flags = rec["tcp_flags"]
        row.packets += 1
        row.syn += bool(flags & SYN)
        row.ack += bool(flags & ACK)
        row.bytes += rec["size"]
        row.pids.append(rec["pid"])
        ips_per_mac.setdefault(key[0], set()).add(key[1])
        total += 1
    for row in rows.values():
        row.fanout = len(ips_per_mac[row.src_mac])
    return WindowStats(start, end, list(rows.values()), total)


@dataclass
class DetectorConfig:
    pps_threshold: float = 700.0
    collection_interval: float = 5.0
    block_priority: int = 1000
    block_idle: float = 0.0
    block_hard: float = 300.0
    allow_priority: int = 10
    allow_idle: float = 200.0
    allow_hard: float = 400.0

    def __post_init__(self):
        if self.pps_threshold <= 0 or self.collection_interval <= 0:
            raise DetectError("pps_threshold and collection_interval must be > 0")
        if self.block_priority == self.allow_priority:
            raise DetectError("block and allow priorities must differ")
        if min(self.block_idle, self.block_hard, self.allow_idle, self.allow_hard) < 0:
            raise DetectError("timeouts must be >= 0")


def precheck(stats: WindowStats, config: DetectorConfig) -> bool:
    """True (suspicious) iff the window rate exceeds the serving-capacity threshold."""
    return stats.pps > config.pps_threshold


# --------------------------------------------------------------------------
# Features
# --------------------------------------------------------------------------


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


# raw (unscaled) value of each window feature; counts are log-compressed
FEATURES: dict[str, Callable[[FlowRow], float]] = {
    "packet_count": lambda r: float(np.log1p(r.packets)),
    "syn_ratio": lambda r: _ratio(r.syn, r.packets),
    "ack_ratio": lambda r: _ratio(r.ack, r.packets),
    "mean_packet_size": lambda r: float(np.log1p(_ratio(r.bytes, r.packets))),
    "ip_fanout": lambda r: float(np.log1p(r.fanout)),
}
SIM_FEATURES = tuple(FEATURES)


def raw_features(rows: Sequence[FlowRow], names: Sequence[str] = SIM_FEATURES) -> np.ndarray:
    missing = [n for n in names if n not in FEATURES]
    if missing:
        raise DetectError(f"model features not computable from window stats: {', '.join(missing)}")
    return np.array([[FEATURES[n](r) for n in names] for r in rows], dtype=float).reshape(len(rows), len(names))


def featurize(rows, model: anfis.AnfisModel) -> np.ndarray:
    """Scaled feature matrix (one row per FlowRow) in the model's feature order."""
    single = isinstance(rows, FlowRow)
    rows = [rows] if single else list(rows)
    names = model.feature_names
    if not names or model.scaler is None:
        raise DetectError("model has no feature names/scaler; cannot featurize window stats")
    scaler = Scaler.from_dict(model.scaler)
    if list(scaler.names) != list(names):
        raise DetectError("model scaler and feature names disagree")
    Z = scaler.transform(raw_features(rows, names))
    if Z.shape[1] != model.n_inputs:
        raise DetectError("feature vector length does not match model inputs")
    return Z[0] if single else Z


def classify_flow(model: anfis.AnfisModel, features) -> tuple:
    """(label, probability) per row; label 1 is malicious."""
    return anfis.classify(model, features)


def identify_attacker(stats: WindowStats, malicious) -> str:
    """MAC maximizing (distinct src IPs, packets) over malicious rows; lowest MAC breaks ties."""
    per_mac: dict[str, list] = {}
    for row, bad in zip(stats.rows, malicious):
        if bad:
            ips, pkts = per_mac.setdefault(row.src_mac, [set(), 0])
            ips.add(row.src_ip)
            per_mac[row.src_mac][1] = pkts + row.packets
    if not per_mac:
        raise DetectError("nothing to mitigate: no malicious rows")
    return min(per_mac, key=lambda m: (-len(per_mac[m][0]), -per_mac[m][1], m))


# --------------------------------------------------------------------------
# Rule installation
# --------------------------------------------------------------------------


@dataclass
class MitigationAction:
    kind: str  # DropFromMac | BlockPort | AllowFlow
    switch: int
    port: Optional[int]
    mac: str
    entry: FlowEntry
    time: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "switch": self.switch,
            "port": self.port,
            "mac": self.mac,
            "time": self.time,
            "entry": self.entry.describe(),
        }


def mitigate(mac: str, topology: Topology, net: Network, config: DetectorConfig) -> list[MitigationAction]:
    """Install a MAC drop and a port drop on the attacker's edge switch."""
    loc = topology.host_location.get(mac)
    if loc is None:
        raise DetectError(f"unknown mac {mac}: not in host-location table")
    sid, port = loc
    timers = dict(priority=config.block_priority, idle_timeout=config.block_idle, hard_timeout=config.block_hard)
    by_mac = net.install_rule(sid, FlowEntry(FlowMatch(src_mac=mac), action=Drop(), **timers))
    by_port = net.install_rule(sid, FlowEntry(FlowMatch(in_port=port), action=Drop(), **timers))
    return [
        MitigationAction("DropFromMac", sid, None, mac, by_mac, net.now),
        MitigationAction("BlockPort", sid, port, mac, by_port, net.now),
    ]


def allow(key: tuple[str, str, str], switch: int, topology: Topology, net: Network,
          config: DetectorConfig) -> MitigationAction:
    """Install a forward rule for the flow ``(src_mac, src_ip, dst_ip)`` on ``switch``."""
    src_mac, src_ip, dst_ip = key
    dst = topology.host_by_ip(dst_ip)
    port = None if dst is None else topology.out_port(switch, dst.mac)
    if port is None:
        raise DetectError(f"unroutable destination {dst_ip}")
    entry = FlowEntry(
        FlowMatch(src_mac=src_mac, src_ip=src_ip, dst_ip=dst_ip),
        priority=config.allow_priority,
        action=Forward(port),
        idle_timeout=config.allow_idle,
        hard_timeout=config.allow_hard,
    )
    entry = net.install_rule(switch, entry)
    return MitigationAction("AllowFlow", switch, port, src_mac, entry, net.now)


# --------------------------------------------------------------------------
# Controller
# --------------------------------------------------------------------------


class Controller:
    """Windowed FASA controller. With ``model=None`` it only observes (no rules).

    Packet-ins are forwarded immediately by packet-out, so classification
    never delays delivery; packet-ins from a currently blocked MAC are dropped.
    """

    def __init__(self, model: Optional[anfis.AnfisModel], config: Optional[DetectorConfig] = None):
        self.model = model
        self.config = config or DetectorConfig()
        self.decisions: list[dict] = []
        self.decision_pids: list[list[int]] = []
        self.actions: list[MitigationAction] = []
        self.windows: list[dict] = []
        self.stats: list[WindowStats] = []
        self.blocked: dict[str, float] = {}
        self._buffer: list[dict] = []
        self.net: Optional[Network] = None

    def attach(self, net: Network, cfg: ScenarioConfig) -> None:
        if cfg.collection_interval != self.config.collection_interval:
            raise DetectError("scenario and detector collection intervals differ")
        self.net = net
        net.controller = self.on_packet_in
        interval = self.config.collection_interval
        n = int(np.ceil(cfg.duration / interval - 1e-9))
        for k in range(1, n + 1):
            net.schedule(min(k * interval, cfg.duration), self.close_window, k - 1)

    def on_packet_in(self, net: Network, sid: int, in_port: int, pkt: Packet) -> None:
        until = self.blocked.get(pkt.src_mac)
        if until is not None and net.now < until:
            net.drop(pkt, "blocked_at_controller", switch=sid)
            return
        self._buffer.append({"t": net.now, "switch": sid, "in_port": in_port, "pid": pkt.pid,
                             "src_mac": pkt.src_mac, "src_ip": pkt.src_ip, "dst_ip": pkt.dst_ip,
                             "tcp_flags": pkt.tcp_flags, "size": pkt.size})
        port = net.topology.out_port(sid, pkt.dst_mac)
        if port is None:
            net.drop(pkt, "no_route", switch=sid)
        else:
            net.packet_out(sid, pkt, port)

    def close_window(self, index: int) -> None:
        net, cfg = self.net, self.config
        start = index * cfg.collection_interval
        stats = collect_window(self._buffer, start, cfg.collection_interval)
        self._buffer = [r for r in self._buffer if r["t"] >= stats.end]
        stats.end = start + cfg.collection_interval
        self.stats.append(stats)
        suspicious = precheck(stats, cfg)
        summary = {"index": index, "start": start, "end": stats.end, "pps": stats.pps,
                   "suspicious": suspicious, "rows": len(stats.rows), "malicious_rows": 0, "mitigations": 0}
        self.windows.append(summary)
        if suspicious:
            log.info("window %d: %.0f pps exceeds threshold %.0f", index, stats.pps, cfg.pps_threshold)
        if self.model is None or not stats.rows:
            return

        labels, probs = classify_flow(self.model, featurize(stats.rows, self.model))
        summary["malicious_rows"] = int(labels.sum())
        actions = ["none"] * len(stats.rows)
        if labels.any():
            mac = identify_attacker(stats, labels)
            try:
                if net.now >= self.blocked.get(mac, -1.0):
                    done = mitigate(mac, net.topology, net, cfg)
                    self.actions.extend(done)
                    self.blocked[mac] = net.now + cfg.block_hard if cfg.block_hard > 0 else float("inf")
                    summary["mitigations"] = len(done)
                    log.warning("window %d: blocked %s on switch %d port %d", index, mac,
                                done[1].switch, done[1].port)
                for i, row in enumerate(stats.rows):
                    if labels[i] and row.src_mac == mac:
                        actions[i] = "block"
            except DetectError as exc:
                log.error("window %d: %s", index, exc)
        for i, row in enumerate(stats.rows):
            if labels[i]:
                continue
            try:
                self.actions.append(allow(row.key, row.switch, net.topology, net, cfg))
                actions[i] = "allow"
            except DetectError as exc:
                log.error("window %d: %s", index, exc)
        for i, row in enumerate(stats.rows):
            self.decisions.append({
                "window": index,
                "t": net.now,
                "src_mac": row.src_mac,
                "src_ip": row.src_ip,
                "dst_ip": row.dst_ip,
                "switch": row.switch,
                "in_port": row.in_port,
                "packets": row.packets,
                "probability": float(probs[i]),
                "label": "malicious" if labels[i] else "benign",
                "action": actions[i],
            })
            self.decision_pids.append(row.pids)


def decision_truth(controller: Controller, truth: GroundTruth) -> np.ndarray:
    """Ground-truth label per decision row: 1 if any of its packets was attack traffic."""
    return np.array([int(any(truth.label(p) for p in pids)) for pids in controller.decision_pids], dtype=np.int64)


def evaluate_decisions(controller: Controller, truth: GroundTruth) -> metrics.EvalReport:
    if not controller.decisions:
        raise DetectError("decision log is empty")
    y = decision_truth(controller, truth)
    pred = np.array([d["label"] == "malicious" for d in controller.decisions], dtype=np.int64)
    prob = np.array([d["probability"] for d in controller.decisions])
    threshold = controller.model.threshold if controller.model is not None else None
    return metrics.evaluate(pred, y, prob, threshold)


def write_decision_log(decisions: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(json.dumps(d, sort_keys=True))
            fh.write("\n")


def first_event_times(controller: Controller) -> tuple[Optional[float], Optional[float]]:
    """(time of first malicious decision, time of first block install)."""
    first_bad = next((d["t"] for d in controller.decisions if d["label"] == "malicious"), None)
    first_block = next((a.time for a in controller.actions if a.kind == "DropFromMac"), None)
    return first_bad, first_block


# --------------------------------------------------------------------------
# Default simulator-feature model
# --------------------------------------------------------------------------

# scenarios the default model is trained on: (attack_rate, spoof_pool, seed)
TRAINING_SCENARIOS = (
    (700.0, 10000, 101),
    (200.0, 10000, 102),
    (1500.0, 500, 103),
    (700.0, 1, 104),
    (100.0, 50, 105),
)


def training_rows(scenarios=TRAINING_SCENARIOS, *, duration: float = 40.0, attack_start: float = 15.0,
                  max_attack_rows: int = 400) -> tuple[np.ndarray, np.ndarray]:
    """Raw window features and labels from observe-only simulator runs.

    Attack rows are subsampled per scenario so the classes stay comparable.
    """
    Xs, ys = [], []
    for rate, pool, seed in scenarios:
        cfg = ScenarioConfig(duration=duration, attack_start=attack_start, attack_rate=rate,
                             spoof_pool=pool, seed=seed)
        observer = Controller(None, DetectorConfig(collection_interval=cfg.collection_interval))
        result = run_scenario(cfg, detector=observer)
        rows = [r for s in observer.stats for r in s.rows]
        y = np.array([int(any(result.truth.label(p) for p in r.pids)) for r in rows], dtype=np.int64)
        X = raw_features(rows)
        rng = np.random.default_rng(seed)
        bad = np.flatnonzero(y == 1)
        if bad.size > max_attack_rows:
            bad = np.sort(rng.choice(bad, max_attack_rows, replace=False))
        keep = np.sort(np.r_[np.flatnonzero(y == 0), bad])
        Xs.append(X[keep])
        ys.append(y[keep])
    return np.vstack(Xs), np.concatenate(ys)


def fit_window_model(X: np.ndarray, y: np.ndarray, config: Optional[anfis.TrainConfig] = None,
                     names: Sequence[str] = SIM_FEATURES) -> tuple[anfis.AnfisModel, anfis.TrainReport]:
    # the floor is 0 for every feature (they are counts and ratios), so a zero row scales to zeros
    scaler = Scaler(list(names), np.zeros(len(names)), X.max(axis=0))
    model = anfis.init_grid(len(names), 2, feature_names=names)
    model.scaler = scaler.to_dict()
    report = anfis.fit(model, scaler.transform(X), y, config)
    return model, report


def train_default_model(path=None, **kwargs) -> anfis.AnfisModel:
    X, y = training_rows(**kwargs)
    model, _ = fit_window_model(X, y)
    if path is not None:
        anfis.save(model, path)
    return model


def load_default_model() -> anfis.AnfisModel:
    text = resources.files("fasa").joinpath("data/sim_model.json").read_bytes()
    return anfis.deserialize(text)
