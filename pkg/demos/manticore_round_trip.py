"""
Round trip across a Manticore-style tree
========================================

The shipped topology has two top-level quadrants, each with four
second-level quadrants of four clusters, and separate 64-bit core and
512-bit DMA networks. Here the network is idle and one core reads a word
from a cluster in the other top-level quadrant. Every register on the
way out and back is configured, so the round trip can be predicted
exactly before it is measured.
"""

from pathlib import Path

import yaml

from burstnoc.harness import config, presets
from burstnoc.harness.traffic import Op, ScriptTraffic
from burstnoc.protocol import Dir

doc = yaml.safe_load((Path(__file__).parent.parent / "configs" / "manticore_mini.yaml").read_text())
doc["params"].update(core_traffic="none", dma_traffic="none")
topo = config.build(doc)
net = topo.net
print(f"{len(topo.components)} components, {len(net.links)} links")

# out and back: cluster cut, L1 crossbar, level cut, L2 crossbar, level cut,
# top crossbar, level cut, L2 crossbar, level cut, L1 crossbar, cluster cut
one_way = 2 * 1 + 4 * 1 + 5 * 1
predicted = 2 * one_way + 1 + 1  # plus the memory's command register and 1-cycle access
print(f"predicted round trip: {predicted} cycles")

net.enable_traces()
core = topo.components["csrc_0_0_0"]
target = presets.CORE_BASE + 16 * presets.CORE_SPAN  # first cluster of the other quadrant
net.run(5)
core.gen = ScriptTraffic([Op(Dir.READ, target, 0, 8)])
core.wake()  # the master went idle on its empty generator
net.run(60)
ch = net.traces["csrc_0_0_0.m->ccu_0_0_0.s"].channels
sent = next(s.cycle for s in ch["ar"] if s.ready)
back = next(s.cycle for s in ch["r"] if s.ready)
print(f"measured: command accepted at cycle {sent}, data back at cycle {back}: {back - sent} cycles")
