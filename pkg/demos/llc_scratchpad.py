"""
Cache ways as scratchpad
========================

A last-level cache in front of a slow memory. Reading the same line
twice shows the hit path; then a dirty cached line is claimed as
scratchpad, which forces a write-back before the way changes role.
"""

from burstnoc.harness.traffic import Op, ScriptTraffic, TrafficMaster
from burstnoc.kernel import Netlist
from burstnoc.llc import CacheGeometry, Llc
from burstnoc.memory import DuplexMemory
from burstnoc.protocol import Dir

geo = CacheGeometry(ways=4, lines=8, blocks_per_line=8, block_bytes=8)  # 64 B lines, 2 KiB
SPM = 0x100000

net = Netlist()
cpu = net.add(TrafficMaster("cpu", 8, 3, ScriptTraffic([])))
llc = net.add(Llc("llc", geo, 3, spm_base=SPM))
mem = net.add(DuplexMemory("mem", 8, 4, size=0x10000, latency=20))
net.connect(cpu.port, llc.slave)
net.connect(llc.master, mem.slave)
mem.load(0x200, bytes(range(64)))


def issue(*ops):
    cpu.gen = ScriptTraffic(list(ops))
    cpu.latencies.clear()
    cpu.wake()
    net.run(5)
    net.drain(5000)
    return sorted(cpu.latencies.elements())


print("first read of a line (miss):", issue(Op(Dir.READ, 0x200, 7, 8)), "cycles")
print("same line again (hit):      ", issue(Op(Dir.READ, 0x200, 7, 8)), "cycles")
print(f"hits {llc.core.hits}, misses {llc.core.misses}")

# dirty a line, then turn its way into scratchpad
issue(Op(Dir.WRITE, 0x0, 7, 8, data=b"scratch!" * 8))
way = llc.core.tags.find(0, 0, range(geo.ways))
print(f"line 0 is dirty in way {way}; memory holds {mem.peek(0, 8)!r}")
llc.configure_spm(1 << way)
issue(Op(Dir.WRITE, SPM, 0, 8, data=b"spm data"), Op(Dir.READ, SPM, 0, 8))
print(f"after reconfiguration memory holds {mem.peek(0, 8)!r} (written back)")
print(f"scratchpad window {SPM:#x}..{llc.core.spm_end:#x} reads back {bytes(llc.core.peek(SPM, 8))!r}")
