"""
A SYN flood against the server, with and without the detector
=============================================================

Eight switches in a line, twenty benign clients talking to host 1 and one
attacker on host 21 sending spoofed SYNs from 60 s on.
"""

from fasa import detect
from fasa.traffic import ScenarioConfig, run_scenario

cfg = ScenarioConfig(duration=100)

plain = run_scenario(cfg)
model = detect.load_default_model()
controller = detect.Controller(model)
defended = run_scenario(cfg, detector=controller)

print("  window     no defence            defended")
print("  (s)      attack pps  Mbit/s   attack pps  Mbit/s")
for a, b in zip(plain.timeline, defended.timeline):
    print("  %3d-%3d   %9.1f  %6.1f   %9.1f  %6.1f" % (
        a["t_start"], a["t_end"], a["attack_pps"], a["server_mbps"], b["attack_pps"], b["server_mbps"]))

first_bad, first_block = detect.first_event_times(controller)
print("\nfirst malicious decision %.1f s, block installed %.3f s" % (first_bad, first_block))
for action in controller.actions:
    if action.kind != "AllowFlow":
        print(" ", action.to_dict())

server = plain.workload.server
print("\nundefended server: %d SYNs refused, half-open table %d/%d" % (
    server.syn_dropped, len(server.half_open), cfg.half_open_limit))
print("defended server:   %d SYNs refused" % defended.workload.server.syn_dropped)

report = detect.evaluate_decisions(controller, defended.truth)
print("per-flow decisions:", report.to_dict())
