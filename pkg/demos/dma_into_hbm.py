"""
How many DMA engines does it take to fill the HBM port?
=======================================================

A Manticore-style tree with four top-level quadrants, each DMA engine
copying from HBM into its own cluster memory. One engine keeps 8 bursts
in flight, which is not enough to cover the round trip to a 48-cycle
HBM, so the port idles. Engines in different quadrants do not share any
link below the top crossbar, and their bursts add up at the port.
"""

from burstnoc.harness import config, presets

WARM, WINDOW = 500, 3000


def port_rate(engines):
    doc = presets.manticore_mini(l2=4, l1=2, clusters=2, core_traffic="none", dma_traffic="hbm",
                                 dma_engines=engines, dma_count=10**6)
    topo = config.build(doc)
    net = topo.net
    hbm = next(l for l in net.links if l.name == "hbm_join.m0->hbm.s")
    net.run(WARM)
    before = hbm.r.beats
    net.run(WINDOW)
    return (hbm.r.beats - before) * hbm.data_bytes / WINDOW


# cluster indices 0, 4, 8 and 12 sit in four different top-level quadrants
for engines in ([0], [0, 4], [0, 4, 8], [0, 4, 8, 12]):
    rate = port_rate(engines)
    print(f"{len(engines)} engine(s): {rate:5.1f} B/cycle = {rate / 64:6.1%} of the 512-bit port")

# two engines in the same quadrant share its uplink instead
rate = port_rate([0, 1])
print(f"2 engines, same quadrant: {rate:5.1f} B/cycle")
