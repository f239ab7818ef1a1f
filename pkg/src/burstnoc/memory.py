"""On-chip memory endpoints: SRAM banks, simplex and duplex controllers."""

from __future__ import annotations

from collections import deque
from enum import Enum

from .errors import ConfigError
from .kernel import Component, Process
from .protocol import BBeat, Dir, RBeat, Resp, is_pow2, merge_strobed


class Access(Enum):
    IDLE = 0
    READ = 1
    WRITE = 2


class SramBank:
    """Single-port word memory with sparse storage and one access per cycle."""

    def __init__(self, word_bytes):
        self.word_bytes = word_bytes
        self.zero = bytes(word_bytes)
        self.full = (1 << word_bytes) - 1
        self.words: dict[int, bytes] = {}
        self.accesses = 0
        self._last_cycle = -1

    def _claim(self, cycle):
        if cycle is not None:
            assert cycle != self._last_cycle, "two accesses to one SRAM bank in a cycle"
            self._last_cycle = cycle
        self.accesses += 1

    def read(self, index, cycle=None):
        self._claim(cycle)
        return self.words.get(index, self.zero)

    def write(self, index, data, strb, cycle=None):
        self._claim(cycle)
        self.words[index] = merge_strobed(self.words.get(index, self.zero), data, strb, self.full)


def route_bank(addr, word_bytes, banks):
    """Address-interleaved bank selection: ``(bank, word index within the bank)``."""
    w = addr // word_bytes
    return w % banks, w // banks


def simplex_arbitrate(read_req, write_req, write_burst_open, qos=(0, 0), last=Access.WRITE, prioritize_writes=False):
    """Choose the access of a single-ported controller this cycle.

    ``qos`` is ``(read_qos, write_qos)``; ``last`` is the previous winner,
    used for round-robin on ties.
    """
    if write_req and write_burst_open:
        return Access.WRITE
    if read_req and write_req:
        if prioritize_writes:
            return Access.WRITE
        rq, wq = qos
        if rq != wq:
            return Access.READ if rq > wq else Access.WRITE
        return Access.READ if last is Access.WRITE else Access.WRITE
    if read_req:
        return Access.READ
    if write_req:
        return Access.WRITE
    return Access.IDLE


class _Burst:
    """Walks the beat addresses of one command."""

    __slots__ = ("cmd", "beat", "addr", "resp")

    def __init__(self, cmd):
        self.cmd = cmd
        self.beat = 0
        self.addr = cmd.addr
        self.resp = Resp.OKAY

    def advance(self):
        self.beat += 1
        size = self.cmd.size
        self.addr = (self.cmd.addr & -size) + self.beat * size

    @property
    def last(self):
        return self.beat == self.cmd.len


class MemoryController(Component):
    """Memory endpoint behind one slave port.

    With ``duplex=False`` a single core serves reads and writes from one
    bank, one access per cycle. With ``duplex=True`` writes and reads go to
    separate cores that share ``banks`` address-interleaved banks; a bank
    conflict stalls one core (round-robin).
    """

    def __init__(self, name, data_bytes, id_bits, banks=1, duplex=False, base=0, size=None,
                 max_reads=8, max_writes=8, resp_depth=8, latency=1, prioritize_writes=False):
        super().__init__(name)
        if duplex and banks < 2:
            raise ConfigError(f"{name}: a duplex controller needs at least two banks")
        if not is_pow2(banks):
            raise ConfigError(f"{name}: bank count must be a power of two, got {banks}")
        if latency < 1:
            raise ConfigError(f"{name}: latency must be >= 1")
        self.slave = self.slave_port("s", data_bytes, id_bits)
        self.word = data_bytes
        self.duplex = duplex
        self.banks = [SramBank(data_bytes) for _ in range(banks)]
        self.base = base
        self.limit = None if size is None else base + size
        self.max_reads = max_reads
        self.max_writes = max_writes
        self.resp_depth = resp_depth
        self.latency = latency
        self.prioritize_writes = prioritize_writes
        self.reads: deque[_Burst] = deque()
        self.writes: deque[_Burst] = deque()
        self.r_out: deque[tuple[int, RBeat]] = deque()  # (cycle visible, beat)
        self.b_out: deque[BBeat] = deque()
        self.last = Access.WRITE
        self.conflict_rr = 0
        self.conflicts = 0
        self.bank_requests = 0
        self._do_read = self._do_write = False

    # backdoor -------------------------------------------------------------
    def _locate(self, addr):
        return route_bank(addr, self.word, len(self.banks))

    def load(self, addr, data):
        """Write bytes without simulating (preload)."""
        W = self.word
        for i, byte in enumerate(data):
            a = addr + i
            bank, idx = self._locate(a)
            b = self.banks[bank]
            word = bytearray(b.words.get(idx, b.zero))
            word[a % W] = byte
            b.words[idx] = bytes(word)

    def peek(self, addr, n):
        out = bytearray()
        W = self.word
        for i in range(n):
            a = addr + i
            bank, idx = self._locate(a)
            out.append(self.banks[bank].words.get(idx, self.banks[bank].zero)[a % W])
        return bytes(out)

    def _in_range(self, addr):
        return addr >= self.base and (self.limit is None or addr < self.limit)

    # processes ------------------------------------------------------------
    def processes(self):
        s = self.slave.link
        self._s = s
        return [
            Process(self, "in", ready=self._in_ready, ins=[s.aw, s.w, s.ar]),
            Process(self, "out", self._out_valid, outs=[s.b, s.r]),
        ]

    def _read_candidate(self):
        # beats in the latency pipeline do not count against the response FIFO
        if not self.reads or len(self.r_out) >= self.resp_depth + self.latency:
            return None
        return self.reads[0]

    def _write_candidate(self):
        s = self._s
        if not self.writes or not s.w.valid:
            return None
        return self.writes[0]

    def _in_ready(self):
        s = self._s
        s.ar.ready = len(self.reads) < self.max_reads
        s.aw.ready = len(self.writes) < self.max_writes
        rd = self._read_candidate()
        wr = self._write_candidate()
        if not self.duplex:
            burst_open = wr is not None and wr.beat > 0
            qos = (rd.cmd.qos if rd else 0, wr.cmd.qos if wr else 0)
            choice = simplex_arbitrate(rd is not None, wr is not None, burst_open, qos, self.last,
                                       self.prioritize_writes)
            self._do_read = choice is Access.READ
            self._do_write = choice is Access.WRITE
        else:
            self._do_read = rd is not None
            self._do_write = wr is not None
            if rd is not None and wr is not None:
                if self._locate(rd.addr)[0] == self._locate(wr.addr)[0]:
                    self.conflicts += 1
                    if self.conflict_rr == 0:
                        self._do_write = False
                    else:
                        self._do_read = False
        if s.w.valid:
            s.w.ready = self._do_write

    def _out_valid(self):
        s = self._s
        if self.r_out and self.r_out[0][0] <= self.net.cycle:
            s.r.send(self.r_out[0][1])
        if self.b_out:
            s.b.send(self.b_out[0])

    def tick(self):
        s = self._s
        cyc = self.net.cycle
        if s.r.valid and s.r.ready:
            self.r_out.popleft()
        if s.b.valid and s.b.ready:
            self.b_out.popleft()
        did_read = did_write = False
        if self._do_read:
            did_read = True
            rb = self.reads[0]
            if self._in_range(rb.addr):
                bank, idx = self._locate(rb.addr)
                data = self.banks[bank].read(idx, cyc)
                resp = Resp.OKAY
            else:
                data, resp = bytes(self.word), Resp.SLAVE_ERROR
            self.bank_requests += 1
            cmd = rb.cmd
            self.r_out.append((cyc + self.latency, RBeat(cmd.id, data, resp, rb.last, cmd.tag)))
            if rb.last:
                self.reads.popleft()
            else:
                rb.advance()
        if self._do_write and s.w.valid and s.w.ready:
            did_write = True
            wb = self.writes[0]
            beat = s.w.payload
            if self._in_range(wb.addr):
                bank, idx = self._locate(wb.addr)
                self.banks[bank].write(idx, beat.data, beat.strb, cyc)
            else:
                wb.resp = Resp.SLAVE_ERROR
            self.bank_requests += 1
            if wb.last:
                self.writes.popleft()
                self.b_out.append(BBeat(wb.cmd.id, wb.resp, wb.cmd.tag))
            else:
                wb.advance()
        if did_read and did_write:
            pass
        elif did_read:
            self.last = Access.READ
            self.conflict_rr = 1
        elif did_write:
            self.last = Access.WRITE
            self.conflict_rr = 0
        if s.ar.valid and s.ar.ready:
            self.reads.append(_Burst(s.ar.payload))
        if s.aw.valid and s.aw.ready:
            self.writes.append(_Burst(s.aw.payload))
        self._do_read = self._do_write = False

    def busy(self):
        return bool(self.reads or self.r_out or self.b_out)


def SimplexMemory(name, data_bytes, id_bits, **kw):
    """Single-ported controller: one read or one write beat per cycle."""
    return MemoryController(name, data_bytes, id_bits, duplex=False, **kw)


def DuplexMemory(name, data_bytes, id_bits, banks=2, **kw):
    """Parallel read and write cores over ``banks`` interleaved banks."""
    return MemoryController(name, data_bytes, id_bits, banks=banks, duplex=True, **kw)


def duplex_step(mem):
    """Advance the netlist owning ``mem`` by one cycle."""
    mem.net.step()
    return mem
