"""Python builders for topology documents too regular to write out by hand."""

from __future__ import annotations

from ..errors import ConfigError

CORE_BASE = 0x0000_0000
CORE_SPAN = 0x1000  # core-network memory per cluster
DMA_BASE = 0x1000_0000
DMA_SPAN = 0x1_0000  # DMA-network memory per cluster
HBM_BASE = 0x8000_0000
HBM_BYTES = 0x1000_0000
HBM_DMA_SRC = (HBM_BASE, 0x4_0000)  # preloaded, read by DMA engines
HBM_CORE = (HBM_BASE + 0x100_0000, 0x1_0000)  # touched by cores


def _cut(stages):
    """Registers on every channel of a link (both directions)."""
    return [stages] * 5


def manticore_mini(
    l2=2,
    l1=4,
    clusters=4,
    dma_bits=512,
    core_bits=64,
    id_bits=5,
    xbar_stages=1,
    level_stages=1,
    cluster_stages=1,
    cluster_latency=1,
    hbm_latency=48,
    core_traffic="random",
    core_rate=0.02,
    core_max_beats=1,
    dma_traffic="none",
    dma_engines=None,
    dma_count=64,
    dma_len=416,
    dma_outstanding=8,
    l1_dma_budget=(4, 8, 32),
    l2_dma_budget=(16, 8, 24),
    core_budget=(32, 1, 32),
):
    """A scaled-down Manticore network: ``l2`` L2 quadrants of ``l1`` L1 quadrants of ``clusters`` clusters.

    Two physically separate trees share the HBM port: a ``dma_bits`` wide DMA
    network and a ``core_bits`` wide core network whose HBM accesses pass an
    upsizer. Every level is a crosspoint (IDs stay ``id_bits`` wide) with
    ``xbar_stages`` registers per crossbar connection; links between levels
    and to clusters are cut by ``level_stages``/``cluster_stages`` registers.

    Budgets are ``(unique IDs, per ID, total)`` of the remappers at each
    crosspoint master port. Traffic:

    * ``core_traffic``: ``random`` (word accesses to all cluster memories and
      an HBM window), ``none``.
    * ``dma_traffic``: ``hbm`` (copies from HBM into the engine's own cluster
      memory), ``local`` (copies between clusters), ``none``. ``dma_engines``
      lists the active cluster indices (default all).
    """
    if l2 < 1 or l1 < 1 or clusters < 1:
        raise ConfigError("quadrant counts must be >= 1", "params")
    if max(l1, clusters, l2) + 1 > 1 << id_bits:
        raise ConfigError("id_bits too small for the crossbar radix", "params.id_bits")
    n_clusters = l2 * l1 * clusters
    active = set(range(n_clusters) if dma_engines is None else dma_engines)
    if any(not 0 <= c < n_clusters for c in active):
        raise ConfigError(f"dma_engines must index clusters 0..{n_clusters - 1}", "params.dma_engines")
    Wd, Wc = dma_bits // 8, core_bits // 8
    comps, links = {}, []

    def idx(a, b, k):
        return (a * l1 + b) * clusters + k

    def xp(S, M, bits, rules, budget, no_turn):
        conn = [[0 if (i == S - 1 and j in no_turn) else 1 for j in range(M)] for i in range(S)]
        u, t, total = budget
        return {
            "type": "xp", "slaves": S, "masters": M, "width_bits": bits, "id_bits": id_bits,
            "addr_rules": rules, "fallback": M - 1 if no_turn else None,
            "pipeline": xbar_stages, "connectivity": conn,
            "remap_budget": u, "remap_max_per_id": t, "remap_max_total": total,
        }

    def pipe(name, bits, src, dst, stages):
        if stages:
            comps[name] = {"type": "pipe", "width_bits": bits, "id_bits": id_bits, "stages": _cut(stages)}
            links.append(f"{src} -> {name}.s")
            links.append(f"{name}.m -> {dst}")
        else:
            links.append(f"{src} -> {dst}")

    for net, bits, base, span in (("c", core_bits, CORE_BASE, CORE_SPAN), ("d", dma_bits, DMA_BASE, DMA_SPAN)):
        dma = net == "d"
        l1_budget = l1_dma_budget if dma else core_budget
        l2_budget = l2_dma_budget if dma else core_budget
        top_rules = [[base + a * l1 * clusters * span, base + (a + 1) * l1 * clusters * span, a] for a in range(l2)]
        top_rules.append([HBM_BASE, HBM_BASE + HBM_BYTES, l2])
        comps[f"{net}top"] = xp(l2, l2 + 1, bits, top_rules, l2_budget, no_turn=())
        for a in range(l2):
            l2n = f"{net}l2_{a}"
            rules = [[base + idx(a, b, 0) * span, base + idx(a, b + 1, 0) * span, b] for b in range(l1)]
            comps[l2n] = xp(l1 + 1, l1 + 1, bits, rules, l2_budget, no_turn=(l1,))
            pipe(f"{net}up2_{a}", bits, f"{l2n}.m{l1}", f"{net}top.s{a}", level_stages)
            pipe(f"{net}dn2_{a}", bits, f"{net}top.m{a}", f"{l2n}.s{l1}", level_stages)
            for b in range(l1):
                l1n = f"{net}l1_{a}_{b}"
                rules = [[base + idx(a, b, k) * span, base + idx(a, b, k + 1) * span, k] for k in range(clusters)]
                comps[l1n] = xp(clusters + 1, clusters + 1, bits, rules, l1_budget, no_turn=(clusters,))
                pipe(f"{net}up1_{a}_{b}", bits, f"{l1n}.m{clusters}", f"{l2n}.s{b}", level_stages)
                pipe(f"{net}dn1_{a}_{b}", bits, f"{l2n}.m{b}", f"{l1n}.s{clusters}", level_stages)
                for k in range(clusters):
                    n = idx(a, b, k)
                    tag = f"{a}_{b}_{k}"
                    mem = f"{net}mem_{tag}"
                    comps[mem] = {
                        "type": "mem_duplex" if dma else "mem_simplex", "width_bits": bits, "id_bits": id_bits,
                        "base": base + n * span, "bytes": span, "latency": cluster_latency,
                    }
                    if dma:
                        comps[mem]["banks"] = 2
                    src = f"{net}src_{tag}"
                    comps[src] = _dma_node(n, bits, dma_traffic if n in active else "none", dma_count, dma_len,
                                           dma_outstanding, n_clusters) if dma else \
                        _core_node(n, bits, core_traffic, core_rate, core_max_beats, n_clusters)
                    pipe(f"{net}cu_{tag}", bits, f"{src}.m", f"{l1n}.s{k}", cluster_stages)
                    pipe(f"{net}cd_{tag}", bits, f"{l1n}.m{k}", f"{mem}.s", cluster_stages)

    # shared HBM port: DMA tree directly, core tree through an upsizer
    comps["hbm_up"] = {"type": "upsize", "narrow_bits": core_bits, "wide_bits": dma_bits, "id_bits": id_bits,
                       "read_slots": 2}
    comps["hbm_join"] = {"type": "xbar", "slaves": 2, "masters": 1, "width_bits": dma_bits, "id_bits": id_bits,
                         "fallback": 0}
    comps["hbm"] = {"type": "mem_duplex", "width_bits": dma_bits, "id_bits": id_bits + 1, "base": HBM_BASE,
                    "bytes": HBM_BYTES, "banks": 4, "latency": hbm_latency, "max_reads": 32, "max_writes": 32}
    links.append(f"dtop.m{l2} -> hbm_join.s0")
    links.append(f"ctop.m{l2} -> hbm_up.s")
    links.append("hbm_up.m -> hbm_join.s1")
    links.append("hbm_join.m0 -> hbm.s")
    return {
        "name": "manticore_mini",
        "clock_mhz": 1000,
        "components": comps,
        "links": links,
    }


def _core_node(n, bits, kind, rate, max_beats, n_clusters):
    W = bits // 8
    node = {"type": "master", "width_bits": bits, "id_bits": 5, "max_outstanding": 8, "max_per_id": 1}
    if kind == "none":
        node["traffic"] = {"kind": "random", "regions": [[CORE_BASE + n * CORE_SPAN, CORE_SPAN]], "count": 0}
    elif kind == "random":
        node["traffic"] = {
            "kind": "random", "rate": rate, "ids": 8, "max_beats": max_beats, "read_ratio": 0.6,
            "regions": [[CORE_BASE, n_clusters * CORE_SPAN], list(HBM_CORE)],
            "sizes": [W],
        }
    else:
        raise ConfigError(f"unknown core_traffic {kind!r}", "params.core_traffic")
    return node


def _dma_node(n, bits, kind, count, length, outstanding, n_clusters):
    node = {"type": "dma", "width_bits": bits, "id_bits": 5, "max_outstanding": outstanding, "buffer_beats": 16}
    own = [DMA_BASE + n * DMA_SPAN, DMA_SPAN]
    if kind == "none":
        node["traffic"] = {"kind": "dma_transfers", "src": list(HBM_DMA_SRC), "dst": own, "count": 0,
                           "max_len": 1}
    elif kind == "hbm":
        node["traffic"] = {"kind": "dma_transfers", "src": list(HBM_DMA_SRC), "dst": own, "count": count,
                           "min_len": length, "max_len": length}
    elif kind == "local":
        peer = (n + n_clusters // 2) % n_clusters
        # read the upper half of a peer's memory, write the lower half of our own
        node["traffic"] = {"kind": "dma_transfers", "src": [DMA_BASE + peer * DMA_SPAN + DMA_SPAN // 2, DMA_SPAN // 2],
                           "dst": [own[0], DMA_SPAN // 2], "count": count, "min_len": 1, "max_len": length}
    else:
        raise ConfigError(f"unknown dma_traffic {kind!r}", "params.dma_traffic")
    return node


PRESETS = {"manticore_mini": manticore_mini}
