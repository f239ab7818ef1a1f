"""Running a topology: injection, drain, metrics and the golden-memory check."""

from __future__ import annotations

import csv
import random
from collections import Counter
from dataclasses import dataclass, field

from ..errors import WatchdogTimeout
from ..llc import Llc
from ..protocol import Violation, format_violations
from .config import Topology

EXIT_OK, EXIT_VIOLATIONS, EXIT_CONFIG, EXIT_WATCHDOG = 0, 1, 2, 3


@dataclass
class LinkStat:
    link: str
    channel: str
    beats: int
    stall_cycles: int
    util: float


@dataclass
class Metrics:
    """Per-link channel activity, latency histogram and concurrency maxima of one run."""

    cycles: int
    clock_mhz: float
    links: list[LinkStat]
    latency: Counter
    widths: dict[str, int]
    concurrency: dict[str, dict[str, int]]

    def stat(self, link, channel):
        for s in self.links:
            if s.link == link and s.channel == channel:
                return s
        raise KeyError((link, channel))

    def bandwidth(self, link, channels=("r", "w")):
        """Bytes per second on ``link`` counting full data beats."""
        beats = sum(self.stat(link, ch).beats for ch in channels)
        return beats * self.widths[link] * self.clock_mhz * 1e6 / max(self.cycles, 1)

    def bytes_per_cycle(self, link, channels=("r", "w")):
        beats = sum(self.stat(link, ch).beats for ch in channels)
        return beats * self.widths[link] / max(self.cycles, 1)

    def rows(self):
        return [(s.link, s.channel, s.beats, s.stall_cycles, f"{s.util:.6f}") for s in self.links]

    def latency_rows(self, bucket=1):
        hist = Counter()
        for lat, n in self.latency.items():
            hist[lat // bucket * bucket] += n
        return sorted(hist.items())


def collect_metrics(topo: Topology, cycles=None) -> Metrics:
    net = topo.net
    cycles = net.cycle if cycles is None else cycles
    rows, widths, conc = [], {}, {}
    for link in net.links:
        widths[link.name] = link.data_bytes
        for ch in link.channels():
            rows.append(LinkStat(link.name, ch.kind, ch.beats, ch.stalls, ch.beats / cycles if cycles else 0.0))
        chk = link.checker
        if chk is not None:
            conc[link.name] = {
                "max_unique_read": chk.max_unique[0], "max_unique_write": chk.max_unique[1],
                "max_per_id_read": chk.max_per_id[0], "max_per_id_write": chk.max_per_id[1],
                "max_total_read": chk.max_total[0], "max_total_write": chk.max_total[1],
            }
    lat = Counter()
    for m in topo.masters:
        lat.update(m.latencies)
    return Metrics(cycles, topo.clock_mhz, rows, lat, widths, conc)


@dataclass
class RunResult:
    metrics: Metrics
    violations: list[Violation]
    mismatches: list = field(default_factory=list)
    drain_cycles: int = 0
    timeout: WatchdogTimeout | None = None
    checked: bool = False

    @property
    def exit_code(self):
        if self.timeout is not None:
            return EXIT_WATCHDOG
        if self.violations or self.mismatches:
            return EXIT_VIOLATIONS
        return EXIT_OK


def _memory_for(topo, addr):
    hit = [m for m in topo.memories if m.limit is not None and m.base <= addr < m.limit]
    if hit:
        return hit[0]
    open_ended = [m for m in topo.memories if m.limit is None and m.base <= addr]
    return open_ended[0] if open_ended else None


def backdoor_read(topo, addr, n):
    """Current bytes at ``addr`` as the fabric would return them (cache contents win)."""
    llcs = [c for c in topo.components.values() if isinstance(c, Llc)]
    out = bytearray()
    a, end = addr, addr + n
    while a < end:
        mem = _memory_for(topo, a)
        stop = end if mem is None or mem.limit is None else min(end, mem.limit)
        out += mem.peek(a, stop - a) if mem is not None else bytes(stop - a)
        a = stop
    for llc in llcs:
        for i, v in enumerate(llc.core.peek(addr, n)):
            if v is not None:
                out[i] = v
    return bytes(out)


def _runs(addrs):
    """Group sorted addresses into ``(start, length)`` runs."""
    start = prev = None
    for a in addrs:
        if start is None:
            start = prev = a
        elif a == prev + 1:
            prev = a
        else:
            yield start, prev - start + 1
            start = prev = a
    if start is not None:
        yield start, prev - start + 1


def preload(topo, seed):
    """Fill DMA source regions with seeded bytes (also recorded in the golden image)."""
    rng = random.Random(seed ^ 0x5EED)
    for base, size in dict.fromkeys(topo.preloads):
        data = rng.randbytes(size)
        for a in range(base, base + size, 4096):
            chunk = data[a - base:a - base + 4096]
            mem = _memory_for(topo, a)
            if mem is not None:
                mem.load(a, chunk)
        topo.golden.write(base, data)


def golden_memory_check(topo, result=None):
    """Compare every read and the final image against the flat-memory oracle.

    Returns a list of ``(address, expected, got, where)``; empty means pass.
    """
    out = []
    for m in topo.masters:
        for mm in m.mismatches:
            out.append((mm.addr, mm.expected, mm.got, f"read by {mm.master}"))
    golden = topo.golden
    for eng in topo.dmas:
        for src, dst, n in eng.copies:
            want = golden.read(src, n)
            got = backdoor_read(topo, dst, n)
            if got != want:
                i = next(k for k in range(n) if got[k] != want[k])
                out.append((dst + i, want[i], got[i], f"copy by {eng.name}"))
    if topo.masters:
        for start, n in _runs(sorted(golden.bytes)):
            want = golden.read(start, n)
            got = backdoor_read(topo, start, n)
            if got != want:
                i = next(k for k in range(n) if got[k] != want[k])
                out.append((start + i, want[i], got[i], "final image"))
                break
    out.sort()
    return out


def run(topo: Topology, cycles, seed=0, watchdog=10_000, check=False, trace=False):
    """Inject for ``cycles`` cycles, then drain within ``watchdog`` more."""
    net = topo.net
    if trace:
        net.enable_traces()
    if net.cycle == 0:
        preload(topo, seed)
    net.run(cycles)
    timeout = None
    drain = 0
    try:
        drain = net.drain(watchdog)
    except WatchdogTimeout as e:
        timeout = e
    metrics = collect_metrics(topo)
    res = RunResult(metrics, net.violations, drain_cycles=drain, timeout=timeout, checked=check)
    if check and timeout is None:
        res.mismatches = golden_memory_check(topo)
    return res


def write_metrics(metrics: Metrics, path, bucket=1):
    """Write the per-link CSV and, next to it, the latency histogram (``<stem>.latency.csv``)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["link", "channel", "beats", "stall_cycles", "util"])
        w.writerows(metrics.rows())
    lat_path = latency_path(path)
    with open(lat_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["lat_bucket", "count"])
        w.writerows(metrics.latency_rows(bucket))
    return lat_path


def latency_path(path):
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".latency.csv"


def write_trace(topo, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cycle", "link", "channel", "ready", "payload"])
        rows = []
        for name, tr in (topo.net.traces or {}).items():
            for ch, samples in tr.channels.items():
                for s in samples:
                    rows.append((s.cycle, name, ch, int(s.ready), repr(s.payload)))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        w.writerows(rows)


def write_violations(violations, path):
    with open(path, "w") as f:
        f.write(format_violations(violations))
