import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstnoc.dma import AlignBuffer, DmaEngine, Transfer1D, realign, reshape
from burstnoc.errors import ConfigError
from burstnoc.harness.drivers import DmaNode
from burstnoc.harness.traffic import DmaTransfers
from burstnoc.kernel import Netlist
from burstnoc.memory import DuplexMemory, SimplexMemory
from burstnoc.protocol import beats_of, command_problems

from conftest import run_and_drain


def boundary_walk(src, dst, n, boundary):
    """Brute-force chunking: cut wherever either side crosses a boundary."""
    chunks, run = [], 0
    for k in range(n):
        if run and ((src + k) % boundary == 0 or (dst + k) % boundary == 0):
            chunks.append(run)
            run = 0
        run += 1
    return chunks + [run]


def strobed_bytes(cmd, beats, width):
    out = {}
    for (addr, (lo, hi)), beat in zip(beats_of(cmd, width), beats):
        for i in range(lo, hi):
            if beat.strb >> i & 1:
                out[addr - lo + i] = beat.data[i]
    return out


class TestReshape:
    def test_boundary_split(self):
        pairs = reshape(Transfer1D(0x0FF0, 0x2000, 0x40), 8)
        assert [p.nbytes for p in pairs] == [16, 48]
        assert pairs[1].src == 0x1000

    def test_single_wide_beat(self):
        (p,) = reshape(Transfer1D(0x40, 0x80, 64), 64)
        assert p.read.beats == p.write.beats == 1

    def test_one_byte(self):
        (p,) = reshape(Transfer1D(0x13, 0x27, 1), 8)
        assert p.read.beats == p.write.beats == 1 and p.nbytes == 1

    def test_zero_length(self):
        with pytest.raises(ConfigError):
            reshape(Transfer1D(0, 0, 0), 8)

    @settings(max_examples=300)
    @given(src=st.integers(0, 1 << 16), dst=st.integers(0, 1 << 16), n=st.integers(1, 9000),
           wlog=st.integers(0, 6), max_len=st.sampled_from([1, 8, 256]))
    def test_tiles_both_sides(self, src, dst, n, wlog, max_len):
        width = 1 << wlog
        pairs = reshape(Transfer1D(src, dst, n), width, max_len)
        assert sum(p.nbytes for p in pairs) == n
        s, d = src, dst
        for p in pairs:
            assert (p.src, p.dst) == (s, d)
            s, d = s + p.nbytes, d + p.nbytes
            for cmd, base in ((p.read, p.src), (p.write, p.dst)):
                assert command_problems(cmd, width) == []
                assert cmd.beats <= max_len
                assert base // 4096 == (base + p.nbytes - 1) // 4096
        if max_len * width >= 4096:
            # only boundaries cut bursts once bursts can span a whole page
            assert [p.nbytes for p in pairs] == boundary_walk(src, dst, n, 4096)


class TestRealign:
    def test_identity(self):
        data = [bytes(range(8)), bytes(range(8, 16))]
        out = realign(data, 0, 0x100, 16, 8)
        assert [b.data for b in out] == data and all(b.strb == 0xFF for b in out)
        assert out[-1].last

    def test_shift_packs_one_beat(self):
        data = [bytes(range(8)), bytes(range(8, 16))]
        (beat,) = realign(data, 4, 0, 8, 8)
        assert beat.data == bytes(range(4, 12)) and beat.strb == 0xFF

    @settings(max_examples=300)
    @given(src=st.integers(0, 4095), dst=st.integers(0, 4095), n=st.integers(1, 200), wlog=st.integers(0, 5),
           seed=st.integers(0, 1 << 16))
    def test_memcpy_oracle(self, src, dst, n, wlog, seed):
        width = 1 << wlog
        rng = random.Random(seed)
        mem = bytes(rng.randrange(256) for _ in range(8192))
        (p,) = reshape(Transfer1D(src, dst, n), width, max_len=1 << 16, boundary=1 << 20)
        reads = [mem[a - lo:a - lo + width] for a, (lo, _) in beats_of(p.read, width)]
        out = realign(reads, src, dst, n, width)
        got = strobed_bytes(p.write, out, width)
        assert got == {dst + k: mem[src + k] for k in range(n)}
        assert sum(bin(b.strb).count("1") for b in out) == n
        assert out[0].strb & -out[0].strb == 1 << dst % width


class TestAlignBuffer:
    def test_fifo(self):
        b = AlignBuffer(8)
        b.push(b"abc")
        b.push(b"de")
        assert b.peek(4) == b"abcd" and b.space() == 3
        b.pop(2)
        assert b.peek(3) == b"cde"

    def test_overflow_asserts(self):
        b = AlignBuffer(2)
        with pytest.raises(AssertionError):
            b.push(b"abc")


def dma_on_duplex(seed, count, width=8, min_len=1, max_len=700, **kw):
    net = Netlist(strict=True)
    size = 1 << 18
    src = DmaTransfers((0, 0x8000), (0x10000, size - 0x10000), count, min_len, max_len)
    node = net.add(DmaNode("dma", width, 2, src, seed=seed, **kw))
    mem = net.add(DuplexMemory("mem", width, 2, size=size, latency=3))
    rng = random.Random(seed)
    image = bytes(rng.randrange(256) for _ in range(0x8000))
    mem.load(0, image)
    net.connect(node.master, mem.slave)
    return net, node.engine, mem, image


class TestMemcpy:
    def test_thousand_random_transfers(self):
        net, eng, mem, image = dma_on_duplex(1, 1000, max_len=300)
        net.run(20)
        net.drain(500_000)
        assert net.violations == [] and eng.errors == 0
        assert len(eng.copies) == 1000
        touched = bytearray(mem.peek(0x10000, (1 << 18) - 0x10000))
        for s, d, n in eng.copies:
            assert mem.peek(d, n) == image[s:s + n]
            touched[d - 0x10000:d - 0x10000 + n] = bytes(n)
        # nothing outside the destinations was written
        assert touched == bytes(len(touched))
        # byte conservation: strobed bytes written equals bytes requested
        assert eng.bytes_written == sum(n for *_, n in eng.copies)

    @pytest.mark.parametrize("width", [1, 4, 64])
    def test_widths(self, width):
        net, eng, mem, image = dma_on_duplex(width, 60, width=width, max_len=2000)
        run_and_drain(net, 10, 200_000)
        assert net.violations == [] and len(eng.copies) == 60
        for s, d, n in eng.copies:
            assert mem.peek(d, n) == image[s:s + n]

    def test_bad_engine(self):
        with pytest.raises(ConfigError):
            DmaEngine("d", 8, 2, max_outstanding=0)
        with pytest.raises(ConfigError):
            DmaEngine("d", 8, 2, id=4)


def engine_pair(read_latency, outstanding, blen, n, width=8):
    net = Netlist(strict=True)
    e = net.add(DmaEngine("dma", width, 2, max_outstanding=outstanding, buffer_beats=4 * blen, max_len=blen))
    a = net.add(SimplexMemory("a", width, 2, size=1 << 16, latency=read_latency, max_reads=16))
    b = net.add(SimplexMemory("b", width, 2, size=1 << 16, latency=1, max_writes=16))
    net.connect(e.rd, a.slave)
    net.connect(e.wr, b.slave)
    for k in range(n):
        e.submit(k * blen * width, k * blen * width, blen * width)
    return net, e


def steady_write_rate(read_latency, outstanding, blen=16, warm=200, window=1000):
    net, e = engine_pair(read_latency, outstanding, blen, 100)
    net.run(warm)
    w0 = e.w_beats
    net.run(window)
    return (e.w_beats - w0) / window


class TestThroughput:
    def test_unit_latency_full_rate(self):
        assert steady_write_rate(1, 8) == 1.0

    def test_latency_hidden(self):
        assert steady_write_rate(10, 8) >= 0.8

    @pytest.mark.parametrize("lat", [1, 5, 10, 20])
    @pytest.mark.parametrize("blen", [4, 16])
    def test_single_outstanding_model(self, lat, blen):
        # one pair at a time: a burst is read in full, then written, so reads and writes
        # do not overlap; the fixed 3 cycles are the two command registers and the B hop
        net, e = engine_pair(lat, 1, blen, 12)
        net.drain(5000)
        done = [c for *_, c in e.done]
        assert {b - a for a, b in zip(done, done[1:])} == {2 * blen + lat + 3}

    def test_more_outstanding_never_slower(self):
        rates = [steady_write_rate(10, k) for k in (1, 2, 4, 8)]
        assert rates == sorted(rates)
