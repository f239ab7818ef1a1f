"""
Crossbar throughput and the price of pipelining
===============================================

Four masters stream into four memories through one crossbar. With a
permutation (master k talks only to memory k+1) no two streams share a
port, so every port should move one beat per cycle. Then the same
crossbar is rebuilt with registers cut into its internal connections to
see what that costs in latency.
"""

from pathlib import Path

import yaml

from burstnoc.harness import config
from burstnoc.harness.run import run

doc = yaml.safe_load((Path(__file__).parent.parent / "configs" / "xbar4x4.yaml").read_text())
regions = [[k * 0x1000, 0x1000] for k in range(4)]

# swap the random generators for a read permutation
for k in range(4):
    g = doc["components"][f"g{k}"]
    g["traffic"] = {"kind": "permutation", "regions": regions, "index": k, "beats": 16, "dir": "read"}
    g["max_outstanding"] = 16

topo = config.build(doc, stop_at=5000)
res = run(topo, 5000)
print("permutation, beats/cycle on each memory port:")
for k in range(4):
    print(f"  xbar.m{k}: {res.metrics.stat(f'xbar.m{k}->m{k}.s', 'r').util:.3f}")

# Latency of sparse single-beat reads as registers are added. Flags are per
# channel in the order [aw, w, b, ar, r]; reads only see the ar and r ones.
for stages in ([0, 0, 0, 0, 0], [0, 0, 0, 1, 0], [0, 0, 0, 1, 1], [1, 1, 1, 1, 1]):
    doc["components"]["xbar"]["pipeline"] = stages
    for k in range(4):
        doc["components"][f"g{k}"]["traffic"] = {"kind": "random", "regions": [[0, 0x4000]], "rate": 0.01,
                                                 "max_beats": 1, "read_ratio": 1.0}
    res = run(config.build(doc, seed=3, stop_at=4000), 4000)
    lat = res.metrics.latency
    print(f"pipeline {stages}: latency {min(lat)}..{max(lat)} cycles over {sum(lat.values())} reads")
