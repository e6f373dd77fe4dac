import json
from collections import Counter, defaultdict

import numpy as np
import pytest

from fasa import anfis, detect, simnet
from fasa.detect import DetectError, DetectorConfig, FlowRow, WindowStats
from fasa.simnet import ACK, PSH, SYN, CONTROL_LATENCY
from fasa.traffic import ScenarioConfig, run_scenario

ATTACKER = "00:00:00:00:00:15"
SERVER_IP = "10.0.0.1"


def rec(t, mac="m1", ip="1.1.1.1", dst=SERVER_IP, flags=SYN, size=54, pid=0, switch=1, port=1):
    return {"kind": "packet_in", "t": t, "src_mac": mac, "src_ip": ip, "dst_ip": dst,
            "tcp_flags": flags, "size": size, "pid": pid, "switch": switch, "in_port": port}


# --------------------------------------------------------------------------
# windows


def test_window_rate_at_threshold():
    records = [rec(i * 5 / 3500, pid=i) for i in range(3500)]
    stats = detect.collect_window(records, 0.0, 5.0)
    assert stats.pps == 700.0
    assert len(stats.rows) == 1 and stats.rows[0].packets == 3500


def test_empty_window():
    stats = detect.collect_window([], 10.0, 5.0)
    assert (stats.pps, stats.rows, stats.start, stats.end) == (0.0, [], 10.0, 15.0)


def test_window_bounds_half_open():
    stats = detect.collect_window([rec(4.999), rec(5.0), rec(10.0)], 5.0, 5.0)
    assert stats.total_packets == 1


def test_window_rows_match_recount(rng):
    macs = ["a", "b", "c"]
    ips = ["1.1.1.1", "2.2.2.2", "3.3.3.3", "4.4.4.4"]
    records = []
    for pid in range(2000):
        records.append(rec(float(rng.uniform(0, 12)), mac=macs[rng.integers(3)], ip=ips[rng.integers(4)],
                           flags=int((SYN, ACK, SYN | ACK, PSH | ACK)[rng.integers(4)]),
                           size=int(rng.integers(40, 1500)), pid=pid))
    stats = detect.collect_window(records, 3.0, 5.0)
    inside = [r for r in records if 3.0 <= r["t"] < 8.0]
    want = defaultdict(lambda: [0, 0, 0, 0])
    fan = defaultdict(set)
    for r in inside:
        w = want[(r["src_mac"], r["src_ip"], r["dst_ip"])]
        w[0] += 1
        w[1] += bool(r["tcp_flags"] & SYN)
        w[2] += bool(r["tcp_flags"] & ACK)
        w[3] += r["size"]
        fan[r["src_mac"]].add(r["src_ip"])
    assert {row.key: [row.packets, row.syn, row.ack, row.bytes] for row in stats.rows} == dict(want)
    assert all(row.fanout == len(fan[row.src_mac]) for row in stats.rows)
    assert stats.total_packets == len(inside)
    assert sorted(p for row in stats.rows for p in row.pids) == sorted(r["pid"] for r in inside)


def test_two_flows_two_rows():
    stats = detect.collect_window([rec(0.1, ip="1.1.1.1"), rec(0.2, ip="2.2.2.2"), rec(0.3, ip="1.1.1.1")], 0, 5)
    assert [(r.src_ip, r.packets, r.fanout) for r in stats.rows] == [("1.1.1.1", 2, 2), ("2.2.2.2", 1, 2)]


def test_precheck_boundary():
    def stats(n):
        return WindowStats(0.0, 1.0, [], n)

    cfg = DetectorConfig()
    assert not detect.precheck(stats(699), cfg)
    assert not detect.precheck(stats(700), cfg)
    assert detect.precheck(stats(701), cfg)
    assert detect.precheck(stats(600), DetectorConfig(pps_threshold=500))


def test_detector_config_validation():
    with pytest.raises(DetectError):
        DetectorConfig(block_priority=10, allow_priority=10)
    with pytest.raises(DetectError):
        DetectorConfig(pps_threshold=0)
    with pytest.raises(DetectError):
        DetectorConfig(allow_idle=-1)


# --------------------------------------------------------------------------
# features and classification


def test_featurize_zero_row(default_model):
    z = detect.featurize(FlowRow("m", "i", "d"), default_model)
    assert z.shape == (default_model.n_inputs,)
    assert np.all(z == 0.0)


def test_featurize_is_deterministic(default_model):
    row = FlowRow("m", "i", "d", packets=7, syn=3, ack=4, bytes=900, fanout=2)
    a = detect.featurize(row, default_model)
    b = detect.featurize([row, row], default_model)
    assert np.array_equal(a, b[0]) and np.array_equal(b[0], b[1])


def test_featurize_raw_values():
    row = FlowRow("m", "i", "d", packets=4, syn=1, ack=3, bytes=400, fanout=9)
    raw = detect.raw_features([row])[0]
    np.testing.assert_allclose(raw, [np.log(5), 0.25, 0.75, np.log(101), np.log(10)])


def test_featurize_rejects_unknown_features():
    model = anfis.init_grid(2, 2, feature_names=["packet_count", "Flow IAT Mean"])
    model.scaler = {"names": ["packet_count", "Flow IAT Mean"], "min": [0, 0], "max": [1, 1]}
    with pytest.raises(DetectError, match="Flow IAT Mean"):
        detect.featurize([FlowRow("m", "i", "d")], model)
    bare = anfis.init_grid(5, 2)
    with pytest.raises(DetectError, match="scaler"):
        detect.featurize([FlowRow("m", "i", "d")], bare)


def test_default_model_separates_flood_from_handshake(default_model):
    assert default_model.feature_names == list(detect.SIM_FEATURES)
    flood = FlowRow(ATTACKER, "172.16.0.9", SERVER_IP, packets=1, syn=1, bytes=54, fanout=3500)
    handshake = FlowRow("00:00:00:00:00:03", "10.0.0.3", SERVER_IP, packets=1, syn=1, bytes=74, fanout=1)
    labels, probs = detect.classify_flow(default_model, detect.featurize([flood, handshake], default_model))
    assert labels.tolist() == [1, 0]
    assert probs[0] > 0.99 and probs[1] < 0.01


def test_identify_attacker():
    rows = [FlowRow("00:00:00:00:00:03", "10.0.0.3", SERVER_IP, packets=50)]
    rows += [FlowRow(ATTACKER, f"172.16.0.{i}", SERVER_IP, packets=1) for i in range(200)]
    stats = WindowStats(0, 5, rows)
    assert detect.identify_attacker(stats, [1] * len(rows)) == ATTACKER
    assert detect.identify_attacker(stats, [1] + [0] * 200) == "00:00:00:00:00:03"


def test_identify_attacker_tie_breaks():
    rows = [FlowRow("bb", "1.1.1.1", "d", packets=5), FlowRow("aa", "2.2.2.2", "d", packets=9)]
    assert detect.identify_attacker(WindowStats(0, 5, rows), [1, 1]) == "aa"
    rows[1].packets = 5
    assert detect.identify_attacker(WindowStats(0, 5, rows), [1, 1]) == "aa"
    with pytest.raises(DetectError, match="nothing to mitigate"):
        detect.identify_attacker(WindowStats(0, 5, rows), [0, 0])


# --------------------------------------------------------------------------
# rule installation


@pytest.fixture
def fabric():
    topo = simnet.build_linear_topology()
    return topo, simnet.Network(topo)


def test_mitigate_installs_pair_on_edge_switch(fabric):
    topo, net = fabric
    actions = detect.mitigate(ATTACKER, topo, net, DetectorConfig())
    assert [a.kind for a in actions] == ["DropFromMac", "BlockPort"]
    assert {a.switch for a in actions} == {3}
    assert actions[1].port == 5
    for a in actions:
        e = a.entry
        assert (e.priority, e.idle_timeout, e.hard_timeout) == (1000, 0.0, 300.0)
        assert isinstance(e.action, simnet.Drop)
        assert e in list(net.switches[3].table)
    assert actions[0].entry.match == simnet.FlowMatch(src_mac=ATTACKER)
    assert actions[1].entry.match == simnet.FlowMatch(in_port=5)
    json.dumps([a.to_dict() for a in actions])


def test_mitigate_unknown_mac(fabric):
    topo, net = fabric
    with pytest.raises(DetectError, match="unknown mac"):
        detect.mitigate("de:ad:be:ef:00:00", topo, net, DetectorConfig())


def test_block_spares_other_ports(fabric):
    topo, net = fabric
    detect.mitigate(ATTACKER, topo, net, DetectorConfig())
    detect.allow((topo.host(20).mac, topo.host(20).ip, SERVER_IP), 3, topo, net, DetectorConfig())
    p = simnet.Packet(0.0, topo.host(20).mac, topo.host(1).mac, topo.host(20).ip, SERVER_IP, tcp_flags=SYN)
    trace = simnet.run(net, [(20, p)], until=1.0)
    assert simnet.packet_fates(trace) == {0: "delivered"}


def test_block_expires_at_hard_timeout(fabric):
    topo, net = fabric
    detect.mitigate(ATTACKER, topo, net, DetectorConfig())
    trace = net.run(310.0)
    expired = simnet.trace_by_kind(trace, "expire")
    assert len(expired) == 2
    assert all(300.0 <= r["t"] <= 301.0 for r in expired)


def test_allow_rule(fabric):
    topo, net = fabric
    key = (topo.host(3).mac, topo.host(3).ip, SERVER_IP)
    action = detect.allow(key, 1, topo, net, DetectorConfig())
    e = action.entry
    assert action.kind == "AllowFlow" and action.port == 1
    assert (e.priority, e.idle_timeout, e.hard_timeout) == (10, 200.0, 400.0)
    assert e.action == simnet.Forward(1)
    with pytest.raises(DetectError, match="unroutable"):
        detect.allow(("m", "1.1.1.1", "192.0.2.1"), 1, topo, net, DetectorConfig())


def test_allow_rule_idle_expiry(fabric):
    topo, net = fabric
    detect.allow((topo.host(3).mac, topo.host(3).ip, SERVER_IP), 1, topo, net, DetectorConfig())
    trace = net.run(205.0)
    [exp] = simnet.trace_by_kind(trace, "expire")
    assert 200.0 <= exp["t"] <= 201.0


def test_allow_rule_hard_expiry_despite_traffic(fabric):
    topo, net = fabric
    src = topo.host(3)
    detect.allow((src.mac, src.ip, SERVER_IP), 1, topo, net, DetectorConfig())
    for t in np.arange(0.0, 420.0, 50.0):
        net.send(3, simnet.Packet(float(t), src.mac, topo.host(1).mac, src.ip, SERVER_IP, tcp_flags=ACK))
    trace = net.run(420.0)
    [exp] = simnet.trace_by_kind(trace, "expire")
    assert 400.0 <= exp["t"] <= 401.0
    assert exp["packets"] == 8


def test_allowed_flow_bypasses_controller(fabric):
    topo, net = fabric
    src = topo.host(3)
    detect.allow((src.mac, src.ip, SERVER_IP), 1, topo, net, DetectorConfig())
    seen = []
    net.controller = lambda *a: seen.append(a)
    p = simnet.Packet(0.0, src.mac, topo.host(1).mac, src.ip, SERVER_IP, tcp_flags=ACK)
    trace = simnet.run(net, [(3, p)], until=1.0)
    assert seen == [] and simnet.packet_fates(trace) == {0: "delivered"}


# --------------------------------------------------------------------------
# controller in the loop (default 140 s scenario)


def attack_start_of(result):
    return result.config.attack_start


def test_detection_latency(scenario):
    controller = scenario.detector
    first_bad, first_block = detect.first_event_times(controller)
    start = attack_start_of(scenario)
    assert start < first_bad <= start + controller.config.collection_interval
    assert first_block - first_bad <= controller.config.collection_interval


def test_block_rules_in_scenario(scenario):
    blocks = [a for a in scenario.actions if a.kind != "AllowFlow"]
    assert [a.kind for a in blocks] == ["DropFromMac", "BlockPort"]
    for a in blocks:
        assert (a.switch, a.mac) == (3, ATTACKER)
        assert (a.entry.priority, a.entry.idle_timeout, a.entry.hard_timeout) == (1000, 0.0, 300.0)
    installs = [r for r in simnet.trace_by_kind(scenario.trace, "install") if r["priority"] == 1000]
    assert len(installs) == 2 and {r["switch"] for r in installs} == {3}


def test_no_attacker_delivery_after_block(scenario):
    _, block = detect.first_event_times(scenario.detector)
    drain = 2 * CONTROL_LATENCY + scenario.topology.path_latency()
    injected = {r["pid"]: r for r in simnet.trace_by_kind(scenario.trace, "inject")}
    for r in simnet.trace_by_kind(scenario.trace, "deliver"):
        if r["src_mac"] == ATTACKER and r["host"] == 1:
            assert injected[r["pid"]]["t"] < block
            assert r["t"] <= block + drain


def test_benign_goodput_recovers(scenario):
    rows = scenario.timeline
    first = np.mean([r["server_mbps"] for r in rows if r["t_end"] <= 40])
    last = np.mean([r["server_mbps"] for r in rows if r["t_start"] >= 100])
    assert last == pytest.approx(first, rel=0.05)


def test_decision_log_complete(scenario, tmp_path):
    controller = scenario.detector
    assert len(controller.decisions) == len(controller.decision_pids)
    assert {d["label"] for d in controller.decisions} == {"benign", "malicious"}
    per_window = Counter(d["window"] for d in controller.decisions)
    for stats, w in zip(controller.stats, controller.windows):
        assert per_window.get(w["index"], 0) == len(stats.rows)
    path = tmp_path / "d.jsonl"
    detect.write_decision_log(controller.decisions, path)
    lines = path.read_text().splitlines()
    assert [json.loads(x) for x in lines] == controller.decisions
    report = detect.evaluate_decisions(controller, scenario.truth)
    cm = report.to_dict()
    assert cm["tp"] + cm["tn"] + cm["fp"] + cm["fn"] == len(controller.decisions)
    assert report.auc == 1.0
    assert cm["fp"] == 0 and cm["fn"] == 0


def test_every_packet_in_lands_in_one_row(scenario):
    packet_ins = [r["pid"] for r in simnet.trace_by_kind(scenario.trace, "packet_in")]
    blocked = {r["pid"] for r in simnet.trace_by_kind(scenario.trace, "drop") if r["reason"] == "blocked_at_controller"}
    in_rows = [p for pids in scenario.detector.decision_pids for p in pids]
    assert len(in_rows) == len(set(in_rows))
    assert set(in_rows) == set(packet_ins) - blocked


def test_observer_installs_nothing():
    cfg = ScenarioConfig(duration=20, attack_start=5, benign_flows=4)
    observer = detect.Controller(None)
    result = run_scenario(cfg, detector=observer)
    assert observer.actions == [] and observer.decisions == []
    assert len(observer.windows) == 4
    # nothing is ever allowed, so benign packets keep reaching the controller on top of the flood
    assert [w["suspicious"] for w in observer.windows] == [False, True, True, True]
    assert all(w["pps"] > 700 for w in observer.windows[1:])
    assert not [r for r in simnet.trace_by_kind(result.trace, "install") if r["priority"] > 1]


def test_redetection_after_block_expiry(default_model):
    cfg = ScenarioConfig(duration=40, attack_start=10, benign_flows=4)
    controller = detect.Controller(default_model, DetectorConfig(block_hard=10))
    run_scenario(cfg, detector=controller)
    blocks = [a.time for a in controller.actions if a.kind == "DropFromMac"]
    assert blocks == [15.0, 30.0]


def test_interval_mismatch_rejected(default_model):
    with pytest.raises(DetectError, match="intervals"):
        run_scenario(ScenarioConfig(duration=10, attack_start=5),
                     detector=detect.Controller(default_model, DetectorConfig(collection_interval=2)))
