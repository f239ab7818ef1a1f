import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstnoc.errors import ConfigError
from burstnoc.kernel import (
    Component, FifoStage, LinkPipe, Netlist, Process, RegisterStage, RrArbiter, SpillStage, StreamArbiter,
    StreamDemux, StreamFifo, StreamFork, StreamSink, StreamSource, rr_grant,
)
from burstnoc.memory import SimplexMemory

from conftest import assert_clean, random_master, run_and_drain
from burstnoc.harness.traffic import GoldenMemory


def chain(net, stage_cls, n_stages, items, pattern=None, **kw):
    chans = [net.channel(f"c{i}") for i in range(n_stages + 1)]
    src = net.add(StreamSource("src", chans[0], items))
    stages = [net.add(stage_cls(f"s{i}", chans[i], chans[i + 1], **kw)) for i in range(n_stages)]
    sink = net.add(StreamSink("sink", chans[-1], pattern))
    return src, stages, sink


class TestArbiter:
    def test_next_cyclic(self):
        arb = RrArbiter(4)
        arb.pointer = 1
        assert rr_grant(arb, 0b0101) == 2

    def test_wraps(self):
        arb = RrArbiter(4)
        arb.pointer = 2
        assert rr_grant(arb, 0b0101) == 0

    def test_none_without_requests(self):
        assert rr_grant(RrArbiter(3), 0) is None

    def test_lock_holds_grant(self):
        arb = RrArbiter(4)
        g = arb.grant(0b1111)
        arb.update(g, fired=False)
        assert arb.grant(0b0001) == g
        arb.update(g, fired=True)
        assert arb.pointer == g and arb.lock is None

    @pytest.mark.parametrize("n", range(1, 9))
    def test_fairness_all_asserting(self, n):
        arb = RrArbiter(n)
        counts = [0] * n
        for t in range(1, 5 * n + 3):
            g = arb.grant((1 << n) - 1)
            counts[g] += 1
            arb.update(g, True)
            assert max(counts) - min(counts) <= 1

    @settings(max_examples=100)
    @given(n=st.integers(1, 8), reqs=st.lists(st.integers(0, 255), max_size=40))
    def test_grant_only_among_requesters(self, n, reqs):
        arb = RrArbiter(n)
        for r in reqs:
            r &= (1 << n) - 1
            g = arb.grant(r)
            if arb.lock is None:
                assert (g is None) == (r == 0)
                if g is not None:
                    assert r >> g & 1
                    # first requester strictly after the pointer
                    order = [(arb.pointer + 1 + k) % n for k in range(n)]
                    assert g == next(i for i in order if r >> i & 1)
            arb.update(g, True)

    def test_four_inputs_four_steps(self):
        net = Netlist()
        ins = [net.channel(f"i{k}") for k in range(4)]
        out = net.channel("o")
        for k, ch in enumerate(ins):
            net.add(StreamSource(f"src{k}", ch, [k] * 10))
        arb = net.add(StreamArbiter("arb", ins, out))
        sink = net.add(StreamSink("sink", out))
        net.run(4)
        assert arb.grants == [1, 1, 1, 1]
        assert sorted(sink.received) == [0, 1, 2, 3]


class TestFifo:
    def test_order_and_capacity(self):
        f = StreamFifo(2)
        f.push(1)
        f.push(2)
        assert f.full
        with pytest.raises(AssertionError):
            f.push(3)
        assert f.pop() == 1 and f.head() == 2

    def test_zero_capacity(self):
        with pytest.raises(ConfigError):
            StreamFifo(0)

    def test_full_fifo_stalled_consumer(self):
        net = Netlist()
        src, (fifo,), sink = chain(net, FifoStage, 1, range(10), pattern=lambda c: False, capacity=3)
        net.run(10)
        before = list(fifo.fifo.entries)
        net.step()
        assert list(fifo.fifo.entries) == before == [0, 1, 2]
        assert src.out.ready is False

    @settings(max_examples=50, deadline=None)
    @given(items=st.lists(st.integers(), max_size=30), seed=st.integers(0, 1000), cap=st.integers(1, 4))
    def test_prefix_preserving(self, items, seed, cap):
        rng = random.Random(seed)
        pattern = [rng.random() < 0.6 for _ in range(200)]
        net = Netlist()
        _, _, sink = chain(net, FifoStage, 2, items, pattern=lambda c: pattern[c % 200], capacity=cap)
        for _ in range(100):
            net.step()
            assert sink.received == items[:len(sink.received)]
        net.run(200)
        assert sink.received == items


class TestRegisters:
    def test_register_advances_one_per_step(self):
        net = Netlist()
        _, (r0, r1), sink = chain(net, RegisterStage, 2, ["x"])
        net.step()
        assert r0.full and not r1.full
        net.step()
        assert not r0.full and r1.full
        net.step()
        assert sink.received == ["x"] and sink.cycles == [2]

    @pytest.mark.parametrize("stage", [RegisterStage, SpillStage])
    def test_full_throughput(self, stage):
        net = Netlist()
        _, stages, sink = chain(net, stage, 3, range(100))
        net.run(103)
        assert sink.received == list(range(100))
        assert sink.cycles == list(range(3, 103))

    def test_register_occupancy(self):
        net = Netlist()
        rng = random.Random(1)
        pattern = [rng.random() < 0.5 for _ in range(300)]
        _, (reg,), sink = chain(net, RegisterStage, 1, range(50), pattern=lambda c: pattern[c])
        for _ in range(300):
            net.step()
            assert reg.full in (True, False) and (reg.slot is None) != reg.full
        assert sink.received == list(range(50))

    def test_spill_cuts_ready(self):
        # a spill register's input ready only depends on its own fill
        net = Netlist()
        _, (sp,), sink = chain(net, SpillStage, 1, range(5), pattern=lambda c: False)
        net.run(3)
        assert len(sp.slots) == 2 and sink.received == []


class TestForkDemux:
    def test_fork_delivers_to_all(self):
        net = Netlist()
        a, b, c = net.channel("a"), net.channel("b"), net.channel("c")
        net.add(StreamSource("src", a, range(20)))
        net.add(StreamFork("fork", a, [b, c]))
        s1 = net.add(StreamSink("s1", b, lambda t: t % 2 == 0))
        s2 = net.add(StreamSink("s2", c, lambda t: t % 3 == 0))
        net.run(100)
        assert s1.received == s2.received == list(range(20))

    def test_demux_routes(self):
        net = Netlist()
        a, b, c = net.channel("a"), net.channel("b"), net.channel("c")
        net.add(StreamSource("src", a, range(10)))
        net.add(StreamDemux("dmx", a, [b, c], lambda p: p % 2))
        s0, s1 = net.add(StreamSink("s0", b)), net.add(StreamSink("s1", c))
        net.run(20)
        assert s0.received == [0, 2, 4, 6, 8] and s1.received == [1, 3, 5, 7, 9]


class _Loop(Component):
    """Two processes whose valids feed each other."""

    def __init__(self, net):
        super().__init__("loop")
        self.a, self.b = net.channel("a"), net.channel("b")

    def processes(self):
        return [Process(self, "p", ins=[self.a], outs=[self.b]), Process(self, "q", ins=[self.b], outs=[self.a])]


class _ReadsReady(Component):
    def __init__(self, ch):
        super().__init__("bad")
        self.ch = ch

    def processes(self):
        return [Process(self, "p", self._valid, outs=[self.ch])]

    def _valid(self):
        if self.ch.ready:
            self.ch.send(1)

    def busy(self):
        return True


class TestNetlist:
    def test_combinational_loop_rejected(self):
        net = Netlist()
        net.add(_Loop(net))
        with pytest.raises(ConfigError, match="loop"):
            net.elaborate()

    def test_valid_depending_on_ready_rejected(self):
        net = Netlist(strict=True)
        ch = net.channel("c")
        net.add(_ReadsReady(ch))
        net.add(StreamSink("sink", ch))
        with pytest.raises(ConfigError, match="F2"):
            net.step()

    def test_unconnected_port(self):
        net = Netlist()
        net.add(SimplexMemory("mem", 8, 2))
        with pytest.raises(ConfigError, match="not connected"):
            net.elaborate()

    def test_width_mismatch(self):
        net = Netlist()
        a = net.add(LinkPipe("a", 8, 2))
        b = net.add(LinkPipe("b", 16, 2))
        with pytest.raises(ConfigError, match="width"):
            net.connect(a.m, b.s)

    def test_id_width_mismatch(self):
        net = Netlist()
        a = net.add(LinkPipe("a", 8, 2))
        b = net.add(LinkPipe("b", 8, 3))
        with pytest.raises(ConfigError, match="ID width"):
            net.connect(a.m, b.s)

    def test_port_connected_twice(self):
        net = Netlist()
        a = net.add(LinkPipe("a", 8, 2))
        b = net.add(LinkPipe("b", 8, 2))
        c = net.add(LinkPipe("c", 8, 2))
        net.connect(a.m, b.s)
        with pytest.raises(ConfigError, match="twice"):
            net.connect(a.m, c.s)

    def test_no_adds_after_elaboration(self):
        net = Netlist()
        net.elaborate()
        with pytest.raises(ConfigError):
            net.add(LinkPipe("a", 8, 2))


def _pipe_system(seed, stages, cycles=1500):
    net = Netlist(strict=True)
    golden = GoldenMemory()
    m = net.add(random_master("m", 8, 3, [(0, 0x1000)], golden, seed, cycles, max_beats=8))
    p = net.add(LinkPipe("p", 8, 3, stages))
    mem = net.add(SimplexMemory("mem", 8, 3, size=0x1000, latency=2))
    net.connect(m.port, p.s)
    net.connect(p.m, mem.slave)
    return net, m


class TestLinkPipe:
    @pytest.mark.parametrize("stages", [0, 1, 3, (1, 0, 2, 0, 1)])
    def test_transparent(self, stages):
        net, m = _pipe_system(3, stages)
        run_and_drain(net, 1500)
        assert_clean(net, [m])
        assert sum(m.completed) > 100

    def test_bad_stages(self):
        with pytest.raises(ConfigError):
            LinkPipe("p", 8, 2, (1, 2))

    @pytest.mark.parametrize("seed", range(3))
    def test_determinism(self, seed):
        runs = []
        for _ in range(2):
            net, m = _pipe_system(seed, 2)
            net.enable_traces()
            run_and_drain(net, 800)
            runs.append(({k: t.channels for k, t in net.traces.items()}, dict(m.latencies)))
        assert runs[0] == runs[1]
