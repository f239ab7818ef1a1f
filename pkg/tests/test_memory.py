import pytest

from burstnoc.errors import ConfigError
from burstnoc.harness.traffic import GoldenMemory, Op, ScriptTraffic, SequentialTraffic, TrafficMaster
from burstnoc.junctions import Mux
from burstnoc.kernel import Netlist
from burstnoc.memory import (
    Access, DuplexMemory, MemoryController, SimplexMemory, SramBank, route_bank, simplex_arbitrate,
)
from burstnoc.protocol import Dir, Resp

from conftest import assert_clean, random_master, run_and_drain


class TestArbitrate:
    def test_only_read(self):
        assert simplex_arbitrate(True, False, False) is Access.READ

    def test_open_write_burst_wins(self):
        assert simplex_arbitrate(True, True, True, last=Access.WRITE) is Access.WRITE

    def test_idle(self):
        assert simplex_arbitrate(False, False, False) is Access.IDLE

    def test_round_robin_on_tie(self):
        assert simplex_arbitrate(True, True, False, last=Access.WRITE) is Access.READ
        assert simplex_arbitrate(True, True, False, last=Access.READ) is Access.WRITE

    def test_qos_hint(self):
        assert simplex_arbitrate(True, True, False, qos=(0, 3), last=Access.WRITE) is Access.WRITE

    def test_prioritize_writes(self):
        assert simplex_arbitrate(True, True, False, last=Access.WRITE, prioritize_writes=True) is Access.WRITE


class TestBanks:
    def test_route(self):
        assert route_bank(0x40, 64, 2) == (1, 0)
        assert route_bank(0x80, 64, 2) == (0, 1)

    def test_route_covers_every_word_once(self):
        seen = {route_bank(w * 8, 8, 4) for w in range(64)}
        assert len(seen) == 64 and {b for b, _ in seen} == {0, 1, 2, 3}

    def test_sram_one_access_per_cycle(self):
        bank = SramBank(4)
        bank.write(0, b"\x01\x02\x03\x04", 0xF, cycle=5)
        with pytest.raises(AssertionError):
            bank.read(0, cycle=5)
        # read-after-write in the next cycle sees the new data
        assert bank.read(0, cycle=6) == b"\x01\x02\x03\x04"

    def test_strobed_write(self):
        bank = SramBank(4)
        bank.write(0, b"\xAA" * 4, 0b0101)
        assert bank.read(0) == b"\xAA\x00\xAA\x00"

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            DuplexMemory("m", 8, 2, banks=1)
        with pytest.raises(ConfigError):
            SimplexMemory("m", 8, 2, banks=3)
        with pytest.raises(ConfigError):
            SimplexMemory("m", 8, 2, latency=0)


class TestGolden:
    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("duplex", [False, True])
    def test_random_traffic(self, point_to_point, seed, duplex):
        net, m, mem = point_to_point(seed=seed, duplex=duplex, max_beats=16)
        run_and_drain(net, 2000)
        assert_clean(net, [m])
        assert sum(m.completed) > 100
        lo, hi = 0, 0x2000
        assert mem.peek(lo, hi) == m.golden.image(lo, hi)

    def test_read_after_write(self):
        ops = [Op(Dir.WRITE, 0x100, 3, 8, 1, data=bytes(range(32))), Op(Dir.READ, 0x100, 3, 8, 1)]
        net = Netlist(strict=True)
        m = net.add(TrafficMaster("m", 8, 2, ScriptTraffic(ops)))
        mem = net.add(DuplexMemory("mem", 8, 2, size=0x1000))
        net.connect(m.port, mem.slave)
        run_and_drain(net, 5, 500)
        assert_clean(net, [m])
        assert mem.peek(0x100, 32) == bytes(range(32))

    def test_out_of_range_is_slave_error(self):
        net = Netlist(strict=True)
        m = net.add(TrafficMaster("m", 8, 2, ScriptTraffic([Op(Dir.READ, 0x2000, 1, 8)]), expect_errors=True))
        mem = net.add(SimplexMemory("mem", 8, 2, size=0x1000))
        net.connect(m.port, mem.slave)
        net.enable_traces()
        run_and_drain(net, 5, 500)
        r = [s.payload.resp for s in net.traces["m.m->mem.s"].channels["r"] if s.ready]
        assert r == [Resp.SLAVE_ERROR] * 2

    def test_backdoor_load(self):
        mem = MemoryController("mem", 8, 2, banks=4, duplex=True)
        mem.load(0x13, b"hello, banks")
        assert mem.peek(0x13, 12) == b"hello, banks"


def streams(mem, cycles=2000, read_base=0, write_base=0x8008, beats=16):
    """A reading and a writing master muxed onto ``mem``; returns per-channel beats/cycle."""
    gens = [SequentialTraffic(read_base, 0x4000, 8, Dir.READ, beats),
            SequentialTraffic(write_base, 0x4000, 8, Dir.WRITE, beats)]
    net = Netlist(strict=True)
    mux = net.add(Mux("mux", 2, 8, 2))
    for i, gen in enumerate(gens):
        m = net.add(TrafficMaster(f"m{i}", 8, 2, gen, max_outstanding=16, stop_at=cycles))
        net.connect(m.port, mux.slaves[i])
    net.add(mem)
    net.connect(mux.master, mem.slave)
    net.enable_traces()
    net.run(cycles)
    ch = net.traces["mux.m->mem.s"].channels
    warm = 200
    rate = {k: sum(1 for s in ch[k] if s.ready and s.cycle >= warm) / (cycles - warm) for k in ("r", "w")}
    return rate, mem


class TestThroughput:
    def test_duplex_saturates_both_channels(self):
        rate, mem = streams(DuplexMemory("mem", 8, 3, size=0x10000, max_reads=16, max_writes=16))
        assert rate["r"] >= 0.95 and rate["w"] >= 0.95
        # read and write streams offset by one word stay on opposite banks
        assert mem.conflicts == 0

    def test_duplex_beats_simplex(self):
        d, _ = streams(DuplexMemory("mem", 8, 3, size=0x10000, max_reads=16, max_writes=16))
        s, _ = streams(SimplexMemory("mem", 8, 3, size=0x10000, max_reads=16, max_writes=16))
        assert sum(s.values()) <= 1.0
        assert sum(d.values()) >= 1.9 * sum(s.values())

    def test_same_bank_streams_share_the_port(self):
        # a reader and a writer, both striding two words over two banks, so every access hits bank 0
        net = Netlist(strict=True)
        rd = [Op(Dir.READ, 16 * k % 0x4000, 0, 8) for k in range(3000)]
        wr = [Op(Dir.WRITE, 0x8000 + 16 * k % 0x4000, 0, 8) for k in range(3000)]
        ms = [net.add(TrafficMaster(f"m{i}", 8, 2, ScriptTraffic(ops), max_outstanding=16, stop_at=1500))
              for i, ops in enumerate((rd, wr))]
        mux = net.add(Mux("mux", 2, 8, 2))
        mem = net.add(DuplexMemory("mem", 8, 3, size=0x10000, max_reads=16, max_writes=16))
        for i, m in enumerate(ms):
            net.connect(m.port, mux.slaves[i])
        net.connect(mux.master, mem.slave)
        net.run(1500)
        assert 0.95 <= mem.bank_requests / 1500 <= 1.0
        assert mem.conflicts > 1000

    def test_more_banks_fewer_conflicts(self):
        rates = {}
        for banks in (2, 4):
            conflicts = requests = 0
            for seed in range(5):
                net = Netlist(strict=True)
                m = net.add(random_master("m", 8, 3, [(0, 0x4000)], GoldenMemory(), seed, 2000, max_beats=8,
                                          sizes=(1, 2, 4, 8), max_outstanding=16))
                mem = net.add(DuplexMemory("mem", 8, 3, banks=banks, size=0x4000))
                net.connect(m.port, mem.slave)
                run_and_drain(net, 2000)
                assert_clean(net, [m])
                conflicts += mem.conflicts
                requests += mem.bank_requests
            rates[banks] = conflicts / requests
        assert rates[4] < rates[2]
