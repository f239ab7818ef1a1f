"""DMA engine backend: burst reshaper, data mover and realignment buffer."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigError
from .kernel import Component, Process
from .protocol import BOUNDARY_BYTES, MAX_BEATS, Command, Dir, Resp, WBeat, lane_mask


class Transfer1D(NamedTuple):
    src: int
    dst: int
    len: int


class BurstPair(NamedTuple):
    """A read and a write burst moving ``nbytes`` from ``src`` to ``dst``."""

    read: Command
    write: Command
    src: int
    dst: int
    nbytes: int


def _beats(addr, nbytes, width):
    return (addr % width + nbytes + width - 1) // width


def reshape(t, width, max_len=MAX_BEATS, boundary=BOUNDARY_BYTES, id=0):
    """Tile a transfer into burst pairs obeying the boundary and beat limit on both sides."""
    if t.len < 1:
        raise ConfigError("transfer length must be >= 1 byte")
    out = []
    src, dst, left = t.src, t.dst, t.len
    while left:
        n = min(
            left,
            boundary - src % boundary,
            boundary - dst % boundary,
            max_len * width - src % width,
            max_len * width - dst % width,
        )
        rd = Command(src, id, _beats(src, n, width) - 1, width, Dir.READ)
        wr = Command(dst, id, _beats(dst, n, width) - 1, width, Dir.WRITE)
        out.append(BurstPair(rd, wr, src, dst, n))
        src += n
        dst += n
        left -= n
    return out


def beat_span(addr, nbytes, width, k):
    """Byte range ``[start, end)`` carried by beat ``k`` of a job starting at ``addr``."""
    start = addr if k == 0 else (addr & -width) + k * width
    end = min((addr & -width) + (k + 1) * width, addr + nbytes)
    return start, end


class AlignBuffer:
    """Byte FIFO between the read and the write side.

    Bytes leave in arrival order; the shift between source and destination
    offsets falls out of taking them at source lanes and placing them at
    destination lanes.
    """

    def __init__(self, capacity):
        self.capacity = capacity
        self.data = bytearray()

    def __len__(self):
        return len(self.data)

    def space(self):
        return self.capacity - len(self.data)

    def push(self, chunk):
        assert len(self.data) + len(chunk) <= self.capacity, "align buffer overflow"
        self.data += chunk

    def peek(self, n):
        return bytes(self.data[:n])

    def pop(self, n):
        del self.data[:n]


def realign(read_beats, src, dst, nbytes, width):
    """Turn the data of a read job into the write beats of the matching write job.

    ``read_beats`` are full-width data words as returned by the read burst.
    Returns a list of ``WBeat``.
    """
    stream = bytearray()
    for k, data in enumerate(read_beats):
        s, e = beat_span(src, nbytes, width, k)
        stream += data[s % width:s % width + (e - s)]
    out = []
    nw = _beats(dst, nbytes, width)
    pos = 0
    for k in range(nw):
        s, e = beat_span(dst, nbytes, width, k)
        lo = s % width
        buf = bytearray(width)
        buf[lo:lo + (e - s)] = stream[pos:pos + (e - s)]
        pos += e - s
        out.append(WBeat(bytes(buf), lane_mask(lo, lo + (e - s)), k == nw - 1))
    return out


@dataclass
class _Job:
    pair: BurstPair
    transfer: int
    rk: int = 0  # next read beat
    wk: int = 0  # next write beat


class DmaEngine(Component):
    """Moves 1-D transfers with a read master port ``rd`` and a write master port ``wr``.

    All bursts use one ID, so both sides complete in order. Read data is
    accepted only while the align buffer has room. A write command goes out
    once all of its data sits in the buffer, so a write burst never waits
    on reads while it holds a shared write path; bursts are capped at half
    the buffer to keep reads and writes overlapped.
    """

    def __init__(self, name, data_bytes, id_bits, max_outstanding=8, buffer_beats=16, id=0,
                 max_len=MAX_BEATS, boundary=BOUNDARY_BYTES):
        super().__init__(name)
        if max_outstanding < 1 or buffer_beats < 2:
            raise ConfigError(f"{name}: need max_outstanding >= 1 and buffer_beats >= 2")
        if not 0 <= id < (1 << id_bits):
            raise ConfigError(f"{name}: id {id} does not fit in {id_bits} bits")
        self.W = data_bytes
        self.id = id
        self.max_outstanding = max_outstanding
        self.max_len = max(1, min(max_len, buffer_beats // 2))
        self.boundary = boundary
        self.rd = self.master_port("rd", data_bytes, id_bits)
        self.wr = self.master_port("wr", data_bytes, id_bits)
        self.buffer = AlignBuffer(buffer_beats * data_bytes)
        self.transfers: deque[tuple[int, Transfer1D]] = deque()
        self.pairs: deque[_Job] = deque()
        self.ar_slot: Command | None = None
        self.aw_wait: deque[_Job] = deque()
        self.aw_slot: Command | None = None
        self.r_jobs: deque[_Job] = deque()
        self.w_jobs: deque[_Job] = deque()
        self.b_jobs: deque[_Job] = deque()
        self.inflight = 0
        self.w_owed = 0  # buffered bytes already promised to issued write commands
        self.left: dict[int, int] = {}  # transfer -> pairs not yet written back
        self.submitted: dict[int, tuple[Transfer1D, int]] = {}
        self.done: list[tuple[Transfer1D, int, int]] = []  # (transfer, submit cycle, done cycle)
        self.errors = 0
        self.bytes_written = 0
        self.w_beats = 0
        self._serial = 0

    def submit(self, src, dst, nbytes):
        t = Transfer1D(src, dst, nbytes)
        self._serial += 1
        cyc = self.net.cycle if self.net is not None else 0
        self.transfers.append((self._serial, t))
        self.submitted[self._serial] = (t, cyc)
        self.wake()
        return self._serial

    def on_transfer_done(self, serial, t):
        """Hook called once all bursts of transfer ``serial`` are written back."""

    # processes ------------------------------------------------------------
    def processes(self):
        rd, wr = self.rd.link, self.wr.link
        self._rd, self._wr = rd, wr
        return [
            Process(self, "rd_req", self._rd_valid, outs=[rd.ar, rd.aw, rd.w]),
            Process(self, "rd_rsp", ready=self._rd_ready, ins=[rd.r, rd.b]),
            Process(self, "wr_req", self._wr_valid, outs=[wr.aw, wr.w, wr.ar]),
            Process(self, "wr_rsp", ready=self._wr_ready, ins=[wr.b, wr.r]),
        ]

    def _rd_valid(self):
        if self.ar_slot is not None:
            self._rd.ar.send(self.ar_slot)

    def _r_chunk(self, beat):
        job = self.r_jobs[0]
        p = job.pair
        s, e = beat_span(p.src, p.nbytes, self.W, job.rk)
        return beat.data[s % self.W:s % self.W + (e - s)]

    def _rd_ready(self):
        r = self._rd.r
        if r.valid:
            job = self.r_jobs[0]
            p = job.pair
            s, e = beat_span(p.src, p.nbytes, self.W, job.rk)
            r.ready = self.buffer.space() >= e - s
        if self._rd.b.valid:
            self._rd.b.ready = True

    def _w_beat(self):
        if not self.w_jobs:
            return None
        job = self.w_jobs[0]
        p = job.pair
        s, e = beat_span(p.dst, p.nbytes, self.W, job.wk)
        n = e - s
        if len(self.buffer) < n:  # cannot happen once the command is out
            return None
        lo = s % self.W
        buf = bytearray(self.W)
        buf[lo:lo + n] = self.buffer.peek(n)
        return WBeat(bytes(buf), lane_mask(lo, lo + n), job.wk == p.write.len, p.write.tag)

    def _wr_valid(self):
        wr = self._wr
        if self.aw_slot is not None:
            wr.aw.send(self.aw_slot)
        beat = self._w_beat()
        if beat is not None:
            wr.w.send(beat)

    def _wr_ready(self):
        wr = self._wr
        if wr.b.valid:
            wr.b.ready = True
        if wr.r.valid:
            wr.r.ready = True

    # state update ----------------------------------------------------------
    def tick(self):
        rd, wr = self._rd, self._wr
        W = self.W
        # write side: data, responses, commands
        if wr.w.valid and wr.w.ready:
            job = self.w_jobs[0]
            p = job.pair
            s, e = beat_span(p.dst, p.nbytes, W, job.wk)
            self.buffer.pop(e - s)
            self.w_owed -= e - s
            self.w_beats += 1
            job.wk += 1
            if job.wk > p.write.len:
                self.w_jobs.popleft()
        if wr.b.valid and wr.b.ready:
            job = self.b_jobs.popleft()
            if wr.b.payload.resp != Resp.OKAY:
                self.errors += 1
            self.inflight -= 1
            self.bytes_written += job.pair.nbytes
            self.left[job.transfer] -= 1
            if not self.left[job.transfer]:
                del self.left[job.transfer]
                t, start = self.submitted.pop(job.transfer)
                self.done.append((t, start, self.net.cycle))
                self.on_transfer_done(job.transfer, t)
        if wr.aw.valid and wr.aw.ready:
            job = self.aw_wait.popleft()
            self.w_jobs.append(job)
            self.b_jobs.append(job)
            self.aw_slot = None
            self.w_owed += job.pair.nbytes
        # read side
        if rd.r.valid and rd.r.ready:
            beat = rd.r.payload
            if beat.resp != Resp.OKAY:
                self.errors += 1
            self.buffer.push(self._r_chunk(beat))
            job = self.r_jobs[0]
            job.rk += 1
            if job.rk > job.pair.read.len:
                self.r_jobs.popleft()
        if rd.ar.valid and rd.ar.ready:
            job = self.pairs.popleft()
            self.r_jobs.append(job)
            self.aw_wait.append(job)
            self.ar_slot = None
        # refill command slots
        if self.aw_slot is None and self.aw_wait and len(self.buffer) - self.w_owed >= self.aw_wait[0].pair.nbytes:
            self.aw_slot = self.aw_wait[0].pair.write
        if not self.pairs and self.transfers:
            serial, t = self.transfers.popleft()
            pairs = reshape(t, W, self.max_len, self.boundary, self.id)
            self.left[serial] = len(pairs)
            net = self.net
            for p in pairs:
                p = p._replace(read=p.read._replace(tag=net.new_tag()), write=p.write._replace(tag=net.new_tag()))
                self.pairs.append(_Job(p, serial))
        if self.ar_slot is None and self.pairs and self.inflight < self.max_outstanding:
            self.ar_slot = self.pairs[0].pair.read
            self.inflight += 1

    def busy(self):
        return bool(self.ar_slot is not None or self.aw_slot is not None or self.pairs or self.transfers
                    or (self.w_jobs and len(self.buffer))
                    or (self.aw_wait and len(self.buffer) - self.w_owed >= self.aw_wait[0].pair.nbytes))

    def outstanding(self):
        return self.inflight + len(self.pairs) + len(self.transfers)

    @property
    def idle(self):
        return not self.outstanding()


class PortJoin(Component):
    """Joins a read-only and a write-only master port into one master port."""

    def __init__(self, name, data_bytes, id_bits):
        super().__init__(name)
        self.rd = self.slave_port("rd", data_bytes, id_bits)
        self.wr = self.slave_port("wr", data_bytes, id_bits)
        self.master = self.master_port("m", data_bytes, id_bits)

    def processes(self):
        rd, wr, m = self.rd.link, self.wr.link, self.master.link
        fwd = [(rd.ar, m.ar), (wr.aw, m.aw), (wr.w, m.w)]
        bwd = [(m.r, rd.r), (m.b, wr.b)]
        self._dead = [(rd.aw, rd.w, rd.b), (wr.ar, wr.r)]

        def wire(pairs):
            def valid():
                for i, o in pairs:
                    if i.valid:
                        o.send(i.payload)

            def ready():
                for i, o in pairs:
                    if i.valid:
                        i.ready = o.ready
            return valid, ready

        fv, fr = wire(fwd)
        bv, br = wire(bwd)

        def unused_ready():
            for ch in (rd.aw, rd.w, wr.ar):
                if ch.valid:
                    ch.ready = False

        return [
            Process(self, "fwd", fv, fr, ins=[i for i, _ in fwd], outs=[o for _, o in fwd]),
            Process(self, "bwd", bv, br, ins=[i for i, _ in bwd], outs=[o for _, o in bwd]),
            Process(self, "unused", ready=unused_ready, ins=[rd.aw, rd.w, wr.ar]),
            Process(self, "tie", outs=[rd.b, wr.r]),
        ]
