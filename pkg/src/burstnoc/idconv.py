"""ID width converters: remapper and serializer."""

from __future__ import annotations

from collections import deque

from .errors import ConfigError
from .kernel import Component, Process
from .protocol import Dir, Violation


class RemapTable:
    """U entries of ``[in_id, count]``; the entry index is the output ID."""

    def __init__(self, unique_ids, max_per_id, max_total=None):
        if unique_ids < 1 or max_per_id < 1:
            raise ConfigError("remap table needs unique_ids >= 1 and max_per_id >= 1")
        self.max_per_id = max_per_id
        self.max_total = max_total
        self.in_id = [None] * unique_ids
        self.count = [0] * unique_ids
        self.total = 0

    def lookup(self, in_id):
        """Output ID a new request with ``in_id`` would get, or None (stall)."""
        if self.max_total is not None and self.total >= self.max_total:
            return None
        free = None
        for k, v in enumerate(self.in_id):
            if v == in_id:
                return k if self.count[k] < self.max_per_id else None
            if v is None and free is None:
                free = k
        return free

    def claim(self, out_id, in_id):
        assert self.in_id[out_id] in (None, in_id)
        self.in_id[out_id] = in_id
        self.count[out_id] += 1
        self.total += 1

    def restore(self, out_id):
        """Input ID behind ``out_id``; None if the entry is unoccupied."""
        if not 0 <= out_id < len(self.in_id):
            return None
        return self.in_id[out_id]

    def release(self, out_id):
        self.count[out_id] -= 1
        self.total -= 1
        if not self.count[out_id]:
            self.in_id[out_id] = None

    def request(self, in_id):
        """Lookup and claim in one go; returns the output ID or None."""
        k = self.lookup(in_id)
        if k is not None:
            self.claim(k, in_id)
        return k

    def response(self, out_id, last):
        in_id = self.restore(out_id)
        if in_id is not None and last:
            self.release(out_id)
        return in_id

    @property
    def occupied(self):
        return {v: k for k, v in enumerate(self.in_id) if v is not None}


def remap_request(tbl, in_id):
    return tbl.request(in_id)


def remap_response(tbl, out_id, last):
    return tbl.response(out_id, last)


def serialize_assign(in_id, out_bits, f=None):
    """Default assignment: the input ID modulo the number of output IDs."""
    return (f(in_id) if f is not None else in_id) % (1 << out_bits)


class IdRemapper(Component):
    """Compresses a sparse input ID space onto ``unique_ids`` output IDs.

    Distinct in-flight input IDs always get distinct output IDs, so
    independence between transactions is kept. Entries freed by a response are
    reusable from the next cycle.
    """

    def __init__(self, name, data_bytes, in_bits, out_bits, unique_ids=None, max_per_id=8, max_total=None):
        super().__init__(name)
        unique_ids = (1 << out_bits) if unique_ids is None else unique_ids
        if unique_ids > 1 << out_bits:
            raise ConfigError(f"{name}: {unique_ids} unique IDs do not fit in {out_bits} bits")
        self.tables = (RemapTable(unique_ids, max_per_id, max_total), RemapTable(unique_ids, max_per_id, max_total))
        self.slave = self.slave_port("s", data_bytes, in_bits)
        self.master = self.master_port("m", data_bytes, out_bits)
        self.violations: list[Violation] = []
        self._ar = self._aw = None
        self._held = [None, None]  # output ID offered during a stall, per direction

    def processes(self):
        s, m = self.slave.link, self.master.link
        self._s, self._m = s, m
        return [
            Process(self, "req", self._req_valid, self._req_ready, ins=[s.aw, s.w, s.ar], outs=[m.aw, m.w, m.ar]),
            Process(self, "rsp", self._rsp_valid, self._rsp_ready, ins=[m.b, m.r], outs=[s.b, s.r]),
        ]

    def _req_valid(self):
        s, m = self._s, self._m
        self._ar = self._aw = None
        if s.ar.valid:
            cmd = s.ar.payload
            k = self._ar = self._held[Dir.READ] if self._held[Dir.READ] is not None else self.tables[Dir.READ].lookup(cmd.id)
            if k is not None:
                m.ar.send(cmd._replace(id=k))
        if s.aw.valid:
            cmd = s.aw.payload
            k = self._aw = self._held[Dir.WRITE] if self._held[Dir.WRITE] is not None else self.tables[Dir.WRITE].lookup(cmd.id)
            if k is not None:
                m.aw.send(cmd._replace(id=k))
        if s.w.valid:
            m.w.send(s.w.payload)

    def _req_ready(self):
        s, m = self._s, self._m
        if s.ar.valid:
            s.ar.ready = self._ar is not None and m.ar.ready
        if s.aw.valid:
            s.aw.ready = self._aw is not None and m.aw.ready
        if s.w.valid:
            s.w.ready = m.w.ready

    def _restore(self, d, beat, kind):
        in_id = self.tables[d].restore(beat.id)
        if in_id is None:
            self.violations.append(Violation(self.net.cycle, self.name, "ORPHAN", f"{kind} for unmapped id {beat.id}"))
            return beat
        return beat._replace(id=in_id)

    def _rsp_valid(self):
        s, m = self._s, self._m
        if m.r.valid:
            s.r.send(self._restore(Dir.READ, m.r.payload, "r"))
        if m.b.valid:
            s.b.send(self._restore(Dir.WRITE, m.b.payload, "b"))

    def _rsp_ready(self):
        s, m = self._s, self._m
        if m.r.valid:
            m.r.ready = s.r.ready
        if m.b.valid:
            m.b.ready = s.b.ready

    def tick(self):
        s, m = self._s, self._m
        rd, wr = self.tables
        if m.r.valid and m.r.ready and m.r.payload.last and rd.restore(m.r.payload.id) is not None:
            rd.release(m.r.payload.id)
        if m.b.valid and m.b.ready and wr.restore(m.b.payload.id) is not None:
            wr.release(m.b.payload.id)
        # an offered output ID stays fixed until its handshake (F1)
        held = self._held
        if self._ar is not None:
            if s.ar.ready:
                rd.claim(self._ar, s.ar.payload.id)
                held[Dir.READ] = None
            else:
                held[Dir.READ] = self._ar
        if self._aw is not None:
            if s.aw.ready:
                wr.claim(self._aw, s.aw.payload.id)
                held[Dir.WRITE] = None
            else:
                held[Dir.WRITE] = self._aw
        self._ar = self._aw = None


class IdSerializer(Component):
    """Folds the input IDs onto ``2**out_bits`` lanes, one reflection FIFO per lane.

    Transactions in one lane share an output ID and so complete in order; the
    FIFO restores the original ID on the responses.
    """

    def __init__(self, name, data_bytes, in_bits, out_bits, max_per_id=8, assign=None):
        super().__init__(name)
        if max_per_id < 1:
            raise ConfigError(f"{name}: max_per_id must be >= 1")
        if out_bits > in_bits:
            raise ConfigError(f"{name}: serializer cannot widen IDs ({in_bits} -> {out_bits})")
        self.out_bits = out_bits
        self.depth = max_per_id
        self.assign = assign
        lanes = 1 << out_bits
        self.fifos = ([deque() for _ in range(lanes)], [deque() for _ in range(lanes)])
        self.slave = self.slave_port("s", data_bytes, in_bits)
        self.master = self.master_port("m", data_bytes, out_bits)
        self._ar = self._aw = None

    def processes(self):
        s, m = self.slave.link, self.master.link
        self._s, self._m = s, m
        return [
            Process(self, "req", self._req_valid, self._req_ready, ins=[s.aw, s.w, s.ar], outs=[m.aw, m.w, m.ar]),
            Process(self, "rsp", self._rsp_valid, self._rsp_ready, ins=[m.b, m.r], outs=[s.b, s.r]),
        ]

    def _lane(self, d, cmd):
        k = serialize_assign(cmd.id, self.out_bits, self.assign)
        return k if len(self.fifos[d][k]) < self.depth else None

    def _req_valid(self):
        s, m = self._s, self._m
        self._ar = self._aw = None
        if s.ar.valid:
            k = self._ar = self._lane(Dir.READ, s.ar.payload)
            if k is not None:
                m.ar.send(s.ar.payload._replace(id=k))
        if s.aw.valid:
            k = self._aw = self._lane(Dir.WRITE, s.aw.payload)
            if k is not None:
                m.aw.send(s.aw.payload._replace(id=k))
        if s.w.valid:
            m.w.send(s.w.payload)

    def _req_ready(self):
        s, m = self._s, self._m
        if s.ar.valid:
            s.ar.ready = self._ar is not None and m.ar.ready
        if s.aw.valid:
            s.aw.ready = self._aw is not None and m.aw.ready
        if s.w.valid:
            s.w.ready = m.w.ready

    def _rsp_valid(self):
        s, m = self._s, self._m
        if m.r.valid:
            beat = m.r.payload
            s.r.send(beat._replace(id=self.fifos[Dir.READ][beat.id][0]))
        if m.b.valid:
            beat = m.b.payload
            s.b.send(beat._replace(id=self.fifos[Dir.WRITE][beat.id][0]))

    def _rsp_ready(self):
        s, m = self._s, self._m
        if m.r.valid:
            m.r.ready = s.r.ready
        if m.b.valid:
            m.b.ready = s.b.ready

    def tick(self):
        s, m = self._s, self._m
        rd, wr = self.fifos
        if m.r.valid and m.r.ready and m.r.payload.last:
            rd[m.r.payload.id].popleft()
        if m.b.valid and m.b.ready:
            wr[m.b.payload.id].popleft()
        if self._ar is not None and s.ar.ready:
            rd[self._ar].append(s.ar.payload.id)
        if self._aw is not None and s.aw.ready:
            wr[self._aw].append(s.aw.payload.id)
        self._ar = self._aw = None


def serializer_step(fifos, events, out_bits, assign=None):
    """Reference model: apply ``("cmd", dir, in_id)`` / ``("rsp", dir, out_k, last)``
    events to per-lane FIFOs and return the restored IDs of the responses."""
    restored = []
    for ev in events:
        if ev[0] == "cmd":
            _, d, in_id = ev
            fifos[d][serialize_assign(in_id, out_bits, assign)].append(in_id)
        else:
            _, d, k, last = ev
            restored.append(fifos[d][k][0])
            if last:
                fifos[d][k].popleft()
    return restored
