"""Data width converters: upsizer (narrow to wide) and downsizer (wide to narrow)."""

from __future__ import annotations

from collections import deque

from .errors import ConfigError
from .kernel import Component, Process, RrArbiter, rr_grant
from .protocol import MAX_BEATS, BBeat, Command, RBeat, Resp, WBeat, beats_of, is_pow2, worst_resp


def _check_ratio(narrow, wide):
    if not (is_pow2(narrow) and is_pow2(wide)) or wide < narrow:
        raise ConfigError(f"width ratio {wide * 8}/{narrow * 8} bit is not a power of two >= 1")


def upsize_command(cmd, narrow_bytes, wide_bytes):
    """Same byte range in wide beats, unless the command may not be modified."""
    if not cmd.modifiable or cmd.size > narrow_bytes:
        return cmd
    base = cmd.addr & -wide_bytes
    beats = -(-(cmd.end - base) // wide_bytes)
    return cmd._replace(size=wide_bytes, len=beats - 1)


def downsize_command(cmd, wide_bytes, narrow_bytes, max_len=MAX_BEATS):
    """Cover the command's bytes with narrow bursts of at most ``max_len`` beats."""
    if cmd.size <= narrow_bytes:
        return [cmd]
    start, end = cmd.addr, cmd.end
    base = start & -narrow_bytes
    total = -(-(end - base) // narrow_bytes)
    out = []
    k = 0
    while k < total:
        n = min(max_len, total - k)
        addr = start if k == 0 else base + k * narrow_bytes
        out.append(cmd._replace(addr=addr, len=n - 1, size=narrow_bytes))
        k += n
    return out


def _groups(narrow_addrs, wide_bytes, packed):
    """Narrow beats served by each wide beat."""
    if not packed:
        return [1] * len(narrow_addrs)
    out = []
    prev = None
    for a in narrow_addrs:
        w = a // wide_bytes
        if w == prev:
            out[-1] += 1
        else:
            out.append(1)
            prev = w
    return out


def _narrow_per_wide(cmd, wide_bytes, narrow_bytes):
    """For a downsized command: narrow beats making up each wide beat."""
    counts = []
    for addr, (lo, hi) in beats_of(cmd, wide_bytes):
        end = addr + (hi - lo)
        counts.append((end - 1) // narrow_bytes - addr // narrow_bytes + 1)
    return counts


# ---------------------------------------------------------------------------
# Upsizer


class _ReadJob:
    __slots__ = ("cmd", "addrs", "groups", "k", "g")

    def __init__(self, cmd, addrs, groups):
        self.cmd = cmd
        self.addrs = addrs
        self.groups = groups
        self.k = 0  # next narrow beat
        self.g = 0  # narrow beats left from the buffered wide beat


class _Slot:
    __slots__ = ("id", "jobs", "data", "resp")

    def __init__(self):
        self.id = None
        self.jobs: deque[_ReadJob] = deque()
        self.data = None
        self.resp = Resp.OKAY


class Upsizer(Component):
    """Narrow slave port to wide master port.

    Modifiable bursts are packed into wide beats; others pass through one
    beat per beat. ``read_slots`` read upsizers serve distinct IDs in
    parallel; transactions with an ID already in a slot queue behind it.
    """

    def __init__(self, name, narrow_bytes, wide_bytes, id_bits, read_slots=2, max_writes=8):
        super().__init__(name)
        _check_ratio(narrow_bytes, wide_bytes)
        if read_slots < 1:
            raise ConfigError(f"{name}: need at least one read slot")
        self.DN, self.DW = narrow_bytes, wide_bytes
        self.slave = self.slave_port("s", narrow_bytes, id_bits)
        self.master = self.master_port("m", wide_bytes, id_bits)
        self.slots = [_Slot() for _ in range(read_slots)]
        self.r_arb = RrArbiter(read_slots)
        self.max_writes = max_writes
        self.w_jobs: deque[list] = deque()  # [cmd, narrow addrs, index]
        self.acc = bytearray(wide_bytes)
        self.acc_strb = 0
        self.w_out: WBeat | None = None
        self._r_g = None
        self.wide_r_beats = 0

    def assign_read_upsizer(self, rid):
        """Slot for a new read with ``rid``: same-ID slot first, else the lowest idle one."""
        idle = None
        for i, s in enumerate(self.slots):
            if s.id == rid:
                return i
            if s.id is None and idle is None:
                idle = i
        return idle

    def processes(self):
        s, m = self.slave.link, self.master.link
        self._s, self._m = s, m
        return [
            Process(self, "cmd", self._cmd_valid, self._cmd_ready, ins=[s.aw, s.ar], outs=[m.aw, m.ar]),
            Process(self, "w", self._w_out_valid, self._w_in_ready, ins=[s.w], outs=[m.w]),
            Process(self, "r", self._r_valid, self._r_ready, ins=[m.r], outs=[s.r]),
            Process(self, "b", self._b_valid, self._b_ready, ins=[m.b], outs=[s.b]),
        ]

    # commands --------------------------------------------------------------
    def _cmd_valid(self):
        s, m = self._s, self._m
        if s.aw.valid and len(self.w_jobs) < self.max_writes:
            m.aw.send(upsize_command(s.aw.payload, self.DN, self.DW))
        if s.ar.valid and self.assign_read_upsizer(s.ar.payload.id) is not None:
            m.ar.send(upsize_command(s.ar.payload, self.DN, self.DW))

    def _cmd_ready(self):
        s, m = self._s, self._m
        if s.aw.valid:
            s.aw.ready = m.aw.valid and m.aw.ready
        if s.ar.valid:
            s.ar.ready = m.ar.valid and m.ar.ready

    # write data --------------------------------------------------------------
    def _w_completes(self):
        cmd, addrs, k, packed = self.w_jobs[0]
        if not packed or k == cmd.len:
            return True
        return addrs[k + 1] // self.DW != addrs[k] // self.DW

    def _w_in_ready(self):
        s, m = self._s, self._m
        if not s.w.valid:
            return
        if not self.w_jobs:
            s.w.ready = False
        elif not self._w_completes() or self.w_out is None:
            s.w.ready = True
        else:
            s.w.ready = m.w.valid and m.w.ready

    def _w_out_valid(self):
        if self.w_out is not None:
            self._m.w.send(self.w_out)

    # read data ---------------------------------------------------------------
    def _r_valid(self):
        s = self._s
        req = 0
        for i, sl in enumerate(self.slots):
            if sl.data is not None:
                req |= 1 << i
        g = self._r_g = rr_grant(self.r_arb, req)
        if g is None:
            return
        sl = self.slots[g]
        job = sl.jobs[0]
        addr = job.addrs[job.k]
        off = (addr % self.DW) & -self.DN
        s.r.send(RBeat(job.cmd.id, bytes(sl.data[off:off + self.DN]), sl.resp, job.k == job.cmd.len, job.cmd.tag))

    def _r_ready(self):
        s, m = self._s, self._m
        if not m.r.valid:
            return
        rid = m.r.payload.id
        for i, sl in enumerate(self.slots):
            if sl.id == rid:
                if sl.data is None:
                    m.r.ready = True
                else:
                    # refill while the last narrow beat of the buffer leaves
                    m.r.ready = self._r_g == i and sl.jobs[0].g == 1 and s.r.ready
                return
        m.r.ready = False

    def _b_valid(self):
        m = self._m
        if m.b.valid:
            self._s.b.send(m.b.payload)

    def _b_ready(self):
        m = self._m
        if m.b.valid:
            m.b.ready = self._s.b.ready

    def tick(self):
        s, m = self._s, self._m
        DN, DW = self.DN, self.DW
        # write path
        if m.w.valid and m.w.ready:
            self.w_out = None
        if s.w.valid and s.w.ready:
            job = self.w_jobs[0]
            cmd, addrs, k, packed = job
            beat = s.w.payload
            shift = (addrs[k] % DW) & -DN
            self.acc[shift:shift + DN] = _merge(self.acc[shift:shift + DN], beat.data, beat.strb)
            self.acc_strb |= beat.strb << shift
            if self._w_completes():
                self.w_out = WBeat(bytes(self.acc), self.acc_strb, k == cmd.len, cmd.tag)
                self.acc = bytearray(DW)
                self.acc_strb = 0
            if k == cmd.len:
                self.w_jobs.popleft()
            else:
                job[2] = k + 1
        if s.aw.valid and s.aw.ready:
            cmd = s.aw.payload
            packed = upsize_command(cmd, DN, DW) is not cmd
            self.w_jobs.append([cmd, [a for a, _ in beats_of(cmd, DN)], 0, packed])
        # read path
        g = self._r_g
        if g is not None:
            fired = s.r.ready
            self.r_arb.update(g, fired)
            if fired:
                sl = self.slots[g]
                job = sl.jobs[0]
                job.k += 1
                job.g -= 1
                if not job.g:
                    sl.data = None
                    if job.k > job.cmd.len:
                        sl.jobs.popleft()
                        if not sl.jobs:
                            sl.id = None
        if m.r.valid and m.r.ready:
            beat = m.r.payload
            self.wide_r_beats += 1
            for sl in self.slots:
                if sl.id == beat.id:
                    job = sl.jobs[0]
                    sl.data = beat.data
                    sl.resp = beat.resp
                    job.g = job.groups[0]
                    job.groups = job.groups[1:]
                    break
        if s.ar.valid and s.ar.ready:
            cmd = s.ar.payload
            i = self.assign_read_upsizer(cmd.id)
            sl = self.slots[i]
            sl.id = cmd.id
            addrs = [a for a, _ in beats_of(cmd, DN)]
            packed = upsize_command(cmd, DN, DW) is not cmd
            sl.jobs.append(_ReadJob(cmd, addrs, _groups(addrs, DW, packed)))
        self._r_g = None

    def busy(self):
        return self.w_out is not None or any(sl.data is not None for sl in self.slots)


def _merge(old, new, strb):
    out = bytearray(old)
    for i in range(len(out)):
        if strb >> i & 1:
            out[i] = new[i]
    return out


def upsize_write_data(acc, acc_strb, beat, addr, narrow_bytes, wide_bytes):
    """Steer one narrow beat into the wide accumulator; returns ``(acc, strb)``."""
    shift = (addr % wide_bytes) & -narrow_bytes
    acc = bytearray(acc)
    acc[shift:shift + narrow_bytes] = _merge(acc[shift:shift + narrow_bytes], beat.data, beat.strb)
    return acc, acc_strb | beat.strb << shift


# ---------------------------------------------------------------------------
# Downsizer


class _Split:
    """One wide transaction broken into narrow sub-bursts."""

    __slots__ = ("cmd", "subs", "issued", "counts", "wk", "piece", "sub_k", "sub_left", "resp", "bs_left")

    def __init__(self, cmd, subs, counts):
        self.cmd = cmd
        self.subs = subs
        self.issued = 0
        self.counts = counts  # narrow beats per wide beat
        self.wk = 0  # wide beat index
        self.piece = 0  # narrow piece within the wide beat
        self.sub_k = 0  # sub-burst carrying the next narrow data beat
        self.sub_left = subs[0].len + 1
        self.resp = Resp.OKAY
        self.bs_left = len(subs)


class Downsizer(Component):
    """Wide slave port to narrow master port, splitting bursts as needed.

    One read is converted at a time. Writes queue behind each other since
    their data is ordered anyway; write responses of the sub-bursts merge into
    one, any error winning.
    """

    def __init__(self, name, wide_bytes, narrow_bytes, id_bits, max_writes=8, max_len=MAX_BEATS):
        super().__init__(name)
        _check_ratio(narrow_bytes, wide_bytes)
        self.DW, self.DN = wide_bytes, narrow_bytes
        self.max_len = max_len
        self.max_writes = max_writes
        self.slave = self.slave_port("s", wide_bytes, id_bits)
        self.master = self.master_port("m", narrow_bytes, id_bits)
        self.read: _Split | None = None
        self.r_acc = bytearray(wide_bytes)
        self.r_out: RBeat | None = None
        self.writes: deque[_Split] = deque()  # data not yet fully sent
        self.aw_queue: deque[Command] = deque()  # narrow commands to issue
        self.b_wait: dict[int, deque[_Split]] = {}
        self.b_out: deque[BBeat] = deque()

    def _split(self, cmd):
        subs = downsize_command(cmd, self.DW, self.DN, self.max_len)
        if len(subs) == 1 and subs[0] is cmd:
            counts = [1] * (cmd.len + 1)
        else:
            subs = [c._replace(tag=self.net.new_tag()) for c in subs]
            counts = _narrow_per_wide(cmd, self.DW, self.DN)
        return _Split(cmd, subs, counts)

    def processes(self):
        s, m = self.slave.link, self.master.link
        self._s, self._m = s, m
        return [
            Process(self, "in", ready=self._in_ready, ins=[s.aw, s.ar]),
            Process(self, "cmd", self._cmd_valid, outs=[m.aw, m.ar]),
            Process(self, "w", self._w_valid, self._w_ready, ins=[s.w], outs=[m.w]),
            Process(self, "r", self._r_valid, self._r_in_ready, ins=[m.r], outs=[s.r]),
            Process(self, "b", self._b_valid, self._b_in_ready, ins=[m.b], outs=[s.b]),
        ]

    def _in_ready(self):
        s = self._s
        if s.ar.valid:
            s.ar.ready = self.read is None
        if s.aw.valid:
            s.aw.ready = not self.aw_queue and len(self.writes) < self.max_writes

    def _cmd_valid(self):
        m = self._m
        rd = self.read
        if rd is not None and rd.issued < len(rd.subs):
            m.ar.send(rd.subs[rd.issued])
        if self.aw_queue:
            m.aw.send(self.aw_queue[0])

    def _w_piece(self):
        sp = self.writes[0]
        beat = self._s.w.payload
        addr = sp.cmd.addr if sp.wk == 0 else (sp.cmd.addr & -sp.cmd.size) + sp.wk * sp.cmd.size
        a = addr if sp.piece == 0 else (addr & -self.DN) + sp.piece * self.DN
        off = (a % self.DW) & -self.DN
        sub = sp.subs[sp.sub_k]
        strb = (beat.strb >> off) & ((1 << self.DN) - 1)
        return WBeat(beat.data[off:off + self.DN], strb, sp.sub_left == 1, sub.tag)

    def _w_valid(self):
        s = self._s
        if s.w.valid and self.writes:
            sp = self.writes[0]
            if sp.sub_k < sp.issued:  # command of this sub-burst already sent
                self._m.w.send(self._w_piece())

    def _w_ready(self):
        s, m = self._s, self._m
        if not s.w.valid:
            return
        if not m.w.valid:
            s.w.ready = False
            return
        sp = self.writes[0]
        s.w.ready = m.w.ready and sp.piece == sp.counts[sp.wk] - 1

    def _r_in_ready(self):
        s, m = self._s, self._m
        if m.r.valid:
            rd = self.read
            completes = rd.piece == rd.counts[rd.wk] - 1
            m.r.ready = not completes or self.r_out is None or (s.r.valid and s.r.ready)

    def _b_in_ready(self):
        m = self._m
        if m.b.valid:
            m.b.ready = True

    def _r_valid(self):
        if self.r_out is not None:
            self._s.r.send(self.r_out)

    def _b_valid(self):
        if self.b_out:
            self._s.b.send(self.b_out[0])

    def tick(self):
        s, m = self._s, self._m
        DN, DW = self.DN, self.DW
        if s.r.valid and s.r.ready:
            self.r_out = None
        if s.b.valid and s.b.ready:
            self.b_out.popleft()
        rd = self.read
        if m.ar.valid and m.ar.ready:
            rd.issued += 1
        if m.r.valid and m.r.ready:
            beat = m.r.payload
            c = rd.cmd
            addr = c.addr if rd.wk == 0 else (c.addr & -c.size) + rd.wk * c.size
            a = addr if rd.piece == 0 else (addr & -DN) + rd.piece * DN
            off = (a % DW) & -DN
            self.r_acc[off:off + DN] = beat.data
            rd.resp = worst_resp(rd.resp, beat.resp)
            rd.piece += 1
            if rd.piece == rd.counts[rd.wk]:
                last = rd.wk == c.len
                self.r_out = RBeat(c.id, bytes(self.r_acc), rd.resp, last, c.tag)
                self.r_acc = bytearray(DW)
                rd.resp = Resp.OKAY
                rd.piece = 0
                rd.wk += 1
                if last:
                    self.read = None
        if m.aw.valid and m.aw.ready:
            self.aw_queue.popleft()
            for sp in self.writes:
                if sp.issued < len(sp.subs):
                    sp.issued += 1
                    break
        if m.w.valid and m.w.ready:
            sp = self.writes[0]
            sp.sub_left -= 1
            if not sp.sub_left and sp.sub_k + 1 < len(sp.subs):
                sp.sub_k += 1
                sp.sub_left = sp.subs[sp.sub_k].len + 1
            sp.piece += 1
            if sp.piece == sp.counts[sp.wk]:
                sp.piece = 0
                sp.wk += 1
                if sp.wk > sp.cmd.len:
                    self.writes.popleft()
        if m.b.valid and m.b.ready:
            beat = m.b.payload
            sp = self.b_wait[beat.id][0]
            sp.resp = worst_resp(sp.resp, beat.resp)
            sp.bs_left -= 1
            if not sp.bs_left:
                self.b_wait[beat.id].popleft()
                self.b_out.append(BBeat(sp.cmd.id, sp.resp, sp.cmd.tag))
        if s.ar.valid and s.ar.ready:
            self.read = self._split(s.ar.payload)
        if s.aw.valid and s.aw.ready:
            sp = self._split(s.aw.payload)
            self.writes.append(sp)
            self.aw_queue.extend(sp.subs)
            self.b_wait.setdefault(sp.cmd.id, deque()).append(sp)

    def busy(self):
        return bool(self.r_out is not None or self.b_out or self.aw_queue
                    or (self.read is not None and self.read.issued < len(self.read.subs)))
