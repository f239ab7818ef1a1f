"""Shared builders for small test netlists."""

from __future__ import annotations

import random
import sys
from collections import deque

import pytest

from burstnoc.harness.traffic import GoldenMemory, RandomTraffic, TrafficMaster
from burstnoc.kernel import Component, Netlist, Process
from burstnoc.memory import DuplexMemory, SimplexMemory
from burstnoc.protocol import BBeat, RBeat, Resp, beats_of


def random_master(name, data_bytes, id_bits, regions, golden, seed, stop_at, **kw):
    """A traffic master issuing random bursts into ``regions``."""
    gen_kw = {k: kw.pop(k) for k in list(kw) if k in RandomTraffic.__dataclass_fields__}
    gen = RandomTraffic(regions, data_bytes, **gen_kw)
    return TrafficMaster(name, data_bytes, id_bits, gen, golden, seed=seed, stop_at=stop_at, **kw)


def run_and_drain(net, cycles, horizon=10_000):
    net.run(cycles)
    return net.drain(horizon)


def assert_clean(net, masters=()):
    assert net.violations == []
    for m in masters:
        assert m.mismatches == []
        assert m.pending == {}


@pytest.fixture
def point_to_point():
    """Factory: one random master straight into a memory, returns ``(net, master, mem)``."""

    def make(seed=0, cycles=2000, width=8, id_bits=3, duplex=False, strict=True, **kw):
        net = Netlist("p2p", strict=strict)
        golden = GoldenMemory()
        m = random_master("m", width, id_bits, [(0, 0x2000)], golden, seed, cycles, **kw)
        mem_cls = DuplexMemory if duplex else SimplexMemory
        mem = mem_cls("mem", width, id_bits, base=0, size=0x2000)
        net.add(m)
        net.add(mem)
        net.connect(m.port, mem.slave)
        return net, m, mem

    return make


class ReorderSlave(Component):
    """Byte memory that answers outstanding transactions of different IDs in random order.

    Same-ID transactions are answered in command order; read beats of one
    burst are never interleaved with another burst's. Used as an
    out-of-order endpoint so ordering logic upstream gets exercised.
    """

    def __init__(self, name, data_bytes, id_bits, seed=0, delay=(1, 6), depth=16):
        super().__init__(name)
        self.slave = self.slave_port("s", data_bytes, id_bits)
        self.W = data_bytes
        self.mem = {}
        self.rng = random.Random(seed)
        self.delay = delay
        self.depth = depth
        self.reads = {}  # id -> deque of (ready_cycle, cmd)
        self.writes = deque()  # commands awaiting data
        self.b_ready = {}  # id -> deque of (ready_cycle, cmd)
        self.cur = None  # [cmd, beat index, id] of the read burst being returned
        self.b_cur = None

    def processes(self):
        s = self.slave.link
        self._s = s
        return [
            Process(self, "in", ready=self._in_ready, ins=[s.aw, s.w, s.ar]),
            Process(self, "out", self._out_valid, outs=[s.b, s.r]),
        ]

    def _count(self, table):
        return sum(len(q) for q in table.values())

    def _in_ready(self):
        s = self._s
        s.ar.ready = self._count(self.reads) < self.depth
        s.aw.ready = len(self.writes) + self._count(self.b_ready) < self.depth
        s.w.ready = bool(self.writes)

    def _pick(self, table):
        cyc = self.net.cycle
        heads = [rid for rid, q in table.items() if q and q[0][0] <= cyc]
        return self.rng.choice(sorted(heads)) if heads else None

    def _out_valid(self):
        s = self._s
        if self.cur is None:
            rid = self._pick(self.reads)
            if rid is not None:
                self.cur = [self.reads[rid][0][1], 0, rid]
        if self.cur is not None:
            cmd, k, _ = self.cur
            addr, (lo, hi) = beats_of(cmd, self.W)[k]
            data = bytearray(self.W)
            for i in range(lo, hi):
                data[i] = self.mem.get(addr - lo + i, 0)
            s.r.send(RBeat(cmd.id, bytes(data), Resp.OKAY, k == cmd.len, cmd.tag))
        if self.b_cur is None:
            rid = self._pick(self.b_ready)
            if rid is not None:
                self.b_cur = rid
        if self.b_cur is not None:
            cmd = self.b_ready[self.b_cur][0][1]
            s.b.send(BBeat(cmd.id, Resp.OKAY, cmd.tag))

    def tick(self):
        s = self._s
        cyc = self.net.cycle
        if s.r.valid and s.r.ready:
            cmd, k, rid = self.cur
            if k == cmd.len:
                self.reads[rid].popleft()
                self.cur = None
            else:
                self.cur[1] += 1
        if s.b.valid and s.b.ready:
            self.b_ready[self.b_cur].popleft()
            self.b_cur = None
        if s.w.valid and s.w.ready:
            cmd = self.writes[0][0]
            k = self.writes[0][1]
            addr, (lo, hi) = beats_of(cmd, self.W)[k]
            beat = s.w.payload
            for i in range(lo, hi):
                if beat.strb >> i & 1:
                    self.mem[addr - lo + i] = beat.data[i]
            if beat.last:
                self.writes.popleft()
                self.b_ready.setdefault(cmd.id, deque()).append((cyc + self.rng.randint(*self.delay), cmd))
            else:
                self.writes[0][1] += 1
        if s.ar.valid and s.ar.ready:
            cmd = s.ar.payload
            self.reads.setdefault(cmd.id, deque()).append((cyc + self.rng.randint(*self.delay), cmd))
        if s.aw.valid and s.aw.ready:
            self.writes.append([s.aw.payload, 0])

    def busy(self):
        return bool(self._count(self.reads) or self._count(self.b_ready) or self.cur or self.b_cur is not None)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acc.summary_lines():
            terminalreporter.write_line(line)
