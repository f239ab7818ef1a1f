"""Last-level cache: set-associative, write-back, read/write-allocate, with SPM ways.

Naming follows the usual cache terms: a *way* is one of the associative
banks, an *index* picks a line within every way. Scratchpad mode is
enabled per way; an SPM way is addressed directly and never tag-matches.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import ConfigError
from .junctions import Demux, Mux
from .kernel import Component, Process
from .protocol import BBeat, Command, Dir, RBeat, Resp, WBeat, beats_of, is_pow2, merge_strobed


@dataclass(frozen=True)
class CacheGeometry:
    ways: int = 4
    lines: int = 64  # lines per way
    blocks_per_line: int = 16
    block_bytes: int = 8

    def __post_init__(self):
        for name in ("ways", "lines", "blocks_per_line", "block_bytes"):
            if not is_pow2(getattr(self, name)):
                raise ConfigError(f"cache geometry: {name} must be a power of two")

    @property
    def line_bytes(self):
        return self.blocks_per_line * self.block_bytes

    @property
    def way_bytes(self):
        return self.lines * self.line_bytes

    @property
    def capacity(self):
        return self.ways * self.way_bytes


@dataclass(eq=False)
class Descriptor:
    """Unit of work covering the beats of one command that fall in one cache line."""

    cmd: Command
    line: int  # line address (addr // line_bytes)
    k0: int  # first beat of the command
    k1: int  # last beat of the command
    addrs: list = field(default_factory=list)
    first: bool = False
    last: bool = False
    spm: bool = False
    way: int | None = None
    hit: bool = False
    evict: bool = False
    refill: bool = False
    merge: bool = False  # write allocated without refill: fill the unwritten bytes afterwards
    flush: bool = False
    invalidate: bool = False
    victim: int | None = None  # line address written back by the eviction
    ready: bool = False
    written: int = 0  # byte mask written into a no-refill allocation
    beat: int = 0  # beats handled by the write unit so far
    record: object = None
    key: tuple = ()

    @property
    def dir(self):
        return self.cmd.dir


def split_command(cmd, geo: CacheGeometry):
    """Break a command into per-line descriptors, in beat order."""
    out = []
    LB = geo.line_bytes
    for k, (addr, _) in enumerate(beats_of(cmd, geo.block_bytes)):
        line = addr // LB
        if out and out[-1].line == line:
            out[-1].k1 = k
            out[-1].addrs.append(addr)
        else:
            out.append(Descriptor(cmd, line, k, k, [addr]))
    out[0].first = True
    out[-1].last = True
    return out


class TagStore:
    """Valid/dirty/tag per way and index, plus one pseudo-random counter per index."""

    def __init__(self, geo, seed=1):
        self.geo = geo
        self.valid = [[False] * geo.lines for _ in range(geo.ways)]
        self.dirty = [[False] * geo.lines for _ in range(geo.ways)]
        self.tag = [[0] * geo.lines for _ in range(geo.ways)]
        self.lfsr = [((seed * 2654435761 + i * 40503) & 0xFFFF) or 0xACE1 for i in range(geo.lines)]

    def step_lfsr(self, index):
        x = self.lfsr[index]
        lsb = x & 1
        x >>= 1
        if lsb:
            x ^= 0xB400
        self.lfsr[index] = x
        return x

    def find(self, index, tag, ways):
        for w in ways:
            if self.valid[w][index] and self.tag[w][index] == tag:
                return w
        return None

    def victim(self, index, ways):
        for w in ways:
            if not self.valid[w][index]:
                return w
        return ways[self.step_lfsr(index) % len(ways)]


def lookup(tags, desc, cache_ways):
    """Resolve a cache descriptor: hit way, or victim way with evict/refill needs.

    Updates the tag store for an allocation. Returns ``desc``.
    """
    geo = tags.geo
    index = desc.line % geo.lines
    tag = desc.line // geo.lines
    w = tags.find(index, tag, cache_ways)
    if w is not None:
        desc.way, desc.hit = w, True
        return desc
    w = tags.victim(index, cache_ways)
    desc.way = w
    desc.hit = False
    if tags.valid[w][index] and tags.dirty[w][index]:
        desc.evict = True
        desc.victim = tags.tag[w][index] * geo.lines + index
    full_line = desc.addrs[0] % geo.line_bytes == 0 and len(desc.addrs) * desc.cmd.size >= geo.line_bytes \
        and desc.cmd.size == geo.block_bytes
    if desc.dir == Dir.READ or not full_line:
        desc.refill = True
    else:
        desc.merge = True
    tags.valid[w][index] = True
    tags.dirty[w][index] = False
    tags.tag[w][index] = tag
    return desc


class MissGuard:
    """Per-ID count of read descriptors waiting in the miss path."""

    def __init__(self):
        self.miss = {}

    def add(self, rid):
        self.miss[rid] = self.miss.get(rid, 0) + 1

    def remove(self, rid):
        n = self.miss[rid] - 1
        if n:
            self.miss[rid] = n
        else:
            del self.miss[rid]


def admit_bypass(guards, desc):
    """A hit may overtake misses of other IDs, never one of its own ID."""
    return guards.miss.get(desc.cmd.id, 0) == 0


class _Cmd:
    __slots__ = ("cmd", "left")

    def __init__(self, cmd, left):
        self.cmd = cmd
        self.left = left


class LlcCore(Component):
    """Descriptor pipeline: lookup, evict, refill, read and write units.

    ``s`` faces the network; ``m`` reaches the backing memory with a
    single ID. Each unit works on one descriptor at a time.
    """

    def __init__(self, name, geo: CacheGeometry, id_bits, spm_mask=0, spm_base=0, seed=1, queue_depth=4):
        super().__init__(name)
        self.geo = geo
        self.W = geo.block_bytes
        self.full = (1 << geo.line_bytes) - 1
        self.slave = self.slave_port("s", geo.block_bytes, id_bits)
        self.master = self.master_port("m", geo.block_bytes, id_bits)
        self.tags = TagStore(geo, seed)
        self.data: dict[tuple[int, int], bytearray] = {}
        self.spm_base = spm_base
        self.spm_mask = 0
        self._set_mask(spm_mask)
        self.pending_mask = None
        self.depth = queue_depth
        self.ar_q: deque[Command] = deque()
        self.aw_q: deque[Command] = deque()
        self.split = [deque(), deque()]  # per dir: descriptors of the head command awaiting lookup
        self.flush_q: deque[Descriptor] = deque()
        self.locks: set = set()
        self.read_q: list[Descriptor] = []
        self.write_q: deque[Descriptor] = deque()
        self.evict_q: deque[Descriptor] = deque()
        self.refill_q: deque[Descriptor] = deque()
        self.w_cmds: deque[_Cmd] = deque()
        self.b_out: deque[BBeat] = deque()
        self.guard = MissGuard()
        self.r_cur = None  # [desc, beat offset]
        self.r_cmd = None  # command whose response burst is open
        self.ev = None  # [desc, stage, beat]
        self.rf = None
        self.last_dir = Dir.WRITE
        self.hits = self.misses = self.evictions = self.refills = 0
        self.max_locks = 0
        self.ingress = None  # routing demux, set by the composite

    # configuration ------------------------------------------------------------
    def _set_mask(self, mask):
        if mask >> self.geo.ways:
            raise ConfigError(f"SPM mask {mask:#x} names ways beyond {self.geo.ways}")
        self.spm_mask = mask
        self.spm_ways = [w for w in range(self.geo.ways) if mask >> w & 1]
        self.cache_ways = [w for w in range(self.geo.ways) if not mask >> w & 1]
        self.spm_end = self.spm_base + len(self.spm_ways) * self.geo.way_bytes

    def in_spm(self, addr):
        return self.spm_base <= addr < self.spm_end

    def routes_to_core(self, cmd):
        if self.in_spm(cmd.addr):
            return True
        return bool(self.cache_ways) and cmd.modifiable

    def configure_spm(self, mask):
        """Request a new SPM way mask; applied once the core has drained."""
        if mask >> self.geo.ways:
            raise ConfigError(f"SPM mask {mask:#x} names ways beyond {self.geo.ways}")
        self.pending_mask = mask
        if self.ingress is not None:
            self.ingress.hold = True
        self.wake()

    def flush_all(self):
        """Queue write-back of every dirty cache line (lines stay valid)."""
        geo = self.geo
        for w in self.cache_ways:
            for i in range(geo.lines):
                self._queue_flush(w, i, invalidate=False)
        self.wake()

    def _queue_flush(self, way, index, invalidate):
        d = Descriptor(Command(0, 0, 0, self.W, Dir.WRITE), -1, 0, 0, flush=True, invalidate=invalidate)
        d.way = way
        d.key = ("line", index)
        self.flush_q.append(d)

    def _drained(self):
        return not (self.ar_q or self.aw_q or self.split[0] or self.split[1] or self.read_q or self.write_q
                    or self.evict_q or self.refill_q or self.flush_q or self.ev or self.rf or self.w_cmds
                    or self.b_out or self.r_cur)

    def _apply_mask(self):
        if self.ingress is not None and not self.ingress.quiet():
            return  # an offered command must keep its route
        new = self.pending_mask
        old = self.spm_mask
        tags = self.tags
        becoming = [w for w in range(self.geo.ways) if new >> w & 1 and not old >> w & 1]
        if becoming:
            flushes = False
            for w in becoming:
                for i in range(self.geo.lines):
                    if tags.valid[w][i]:
                        flushes = True
                        self._queue_flush(w, i, invalidate=True)
            if flushes:
                return  # write-backs first; retried once drained
        for w in range(self.geo.ways):
            if (new ^ old) >> w & 1:
                for i in range(self.geo.lines):
                    tags.valid[w][i] = tags.dirty[w][i] = False
                    self.data.pop((w, i), None)
        self._set_mask(new)
        self.pending_mask = None
        if self.ingress is not None:
            self.ingress.hold = False
            self.ingress.wake()

    def _line(self, way, index):
        key = (way, index)
        buf = self.data.get(key)
        if buf is None:
            buf = self.data[key] = bytearray(self.geo.line_bytes)
        return buf

    # processes ---------------------------------------------------------------
    def processes(self):
        s, m = self.slave.link, self.master.link
        self._s, self._m = s, m
        return [
            Process(self, "in", ready=self._in_ready, ins=[s.aw, s.ar, s.w]),
            Process(self, "s_out", self._s_out_valid, outs=[s.r, s.b]),
            Process(self, "m_out", self._m_out_valid, outs=[m.aw, m.w, m.ar]),
            Process(self, "m_in", ready=self._m_in_ready, ins=[m.r, m.b]),
        ]

    def _w_target(self):
        if not self.write_q:
            return None
        d = self.write_q[0]
        return d if d.ready else None

    def _in_ready(self):
        s = self._s
        if s.ar.valid:
            s.ar.ready = len(self.ar_q) < self.depth
        if s.aw.valid:
            s.aw.ready = len(self.aw_q) < self.depth
        if s.w.valid:
            s.w.ready = self._w_target() is not None

    def _s_out_valid(self):
        s = self._s
        if self.r_cur is not None:
            d, i = self.r_cur
            addr = d.addrs[i]
            index = d.line % self.geo.lines if not d.spm else d.key[2]
            off = (addr % self.geo.line_bytes) & -self.W
            data = bytes(self._line(d.way, index)[off:off + self.W])
            k = d.k0 + i
            s.r.send(RBeat(d.cmd.id, data, Resp.OKAY, k == d.cmd.len, d.cmd.tag))
        if self.b_out:
            s.b.send(self.b_out[0])

    def _m_out_valid(self):
        m = self._m
        geo = self.geo
        if self.ev is not None:
            d, stage, k = self.ev
            if stage == "aw":
                m.aw.send(Command(d.victim * geo.line_bytes, 0, geo.blocks_per_line - 1, self.W, Dir.WRITE,
                                  tag=self.ev_tag))
            elif stage == "w":
                index = d.key[1]
                buf = self._line(d.way, index)
                m.w.send(WBeat(bytes(buf[k * self.W:(k + 1) * self.W]), (1 << self.W) - 1,
                                k == geo.blocks_per_line - 1, self.ev_tag))
        if self.rf is not None:
            d, stage, k = self.rf
            if stage == "ar":
                m.ar.send(Command(d.line * geo.line_bytes, 0, geo.blocks_per_line - 1, self.W, Dir.READ,
                                  tag=self.rf_tag))

    def _m_in_ready(self):
        m = self._m
        if m.r.valid:
            m.r.ready = self.rf is not None and self.rf[1] == "r"
        if m.b.valid:
            m.b.ready = True

    # state update ---------------------------------------------------------------
    def tick(self):
        s, m = self._s, self._m
        geo = self.geo
        W = self.W
        # network side responses
        if s.b.valid and s.b.ready:
            self.b_out.popleft()
        if s.r.valid and s.r.ready:
            d, i = self.r_cur
            i += 1
            if i == len(d.addrs):
                self.read_q.remove(d)
                self._release(d)
                self.r_cmd = None if d.last else d.cmd
                self.r_cur = None
            else:
                self.r_cur = [d, i]
        # write unit
        if s.w.valid and s.w.ready:
            d = self.write_q[0]
            beat = s.w.payload
            i = d.beat
            addr = d.addrs[i]
            index = d.key[1] if not d.spm else d.key[2]
            off = (addr % geo.line_bytes) & -W
            buf = self._line(d.way, index)
            buf[off:off + W] = merge_strobed(bytes(buf[off:off + W]), beat.data, beat.strb, (1 << W) - 1)
            d.written |= beat.strb << off
            d.beat = i + 1
            if not d.spm:
                self.tags.dirty[d.way][index] = True
            if i + 1 == len(d.addrs):
                self.write_q.popleft()
                if d.merge and d.written != self.full:
                    d.refill = True
                    self.refill_q.append(d)
                else:
                    self._finish_write(d)
        # evict unit
        if self.ev is not None:
            d, stage, k = self.ev
            if stage == "aw" and m.aw.valid and m.aw.ready:
                self.ev = [d, "w", 0]
            elif stage == "w" and m.w.valid and m.w.ready:
                self.ev = [d, "w", k + 1] if k + 1 < geo.blocks_per_line else [d, "b", 0]
        if m.b.valid and m.b.ready:
            d = self.ev[0]
            self.ev = None
            self.evictions += 1
            if d.flush:
                index = d.key[1]
                self.tags.dirty[d.way][index] = False
                self._finish_flush(d)
            elif d.refill:
                self.refill_q.append(d)
            else:
                self._data_ready(d)
        # refill unit
        if self.rf is not None:
            d, stage, k = self.rf
            if stage == "ar" and m.ar.valid and m.ar.ready:
                self.rf = [d, "r", 0]
            elif stage == "r" and m.r.valid and m.r.ready:
                beat = m.r.payload
                index = d.key[1]
                buf = self._line(d.way, index)
                off = k * W
                if d.merge:
                    keep = (d.written >> off) & ((1 << W) - 1)
                    buf[off:off + W] = merge_strobed(beat.data, bytes(buf[off:off + W]), keep, (1 << W) - 1)
                else:
                    buf[off:off + W] = beat.data
                if beat.last:
                    self.rf = None
                    self.refills += 1
                    if d.merge:
                        self._finish_write(d)
                    else:
                        if d.dir == Dir.READ:
                            self.guard.remove(d.cmd.id)
                        self._data_ready(d)
                else:
                    self.rf = [d, "r", k + 1]
        # lookup stage: one descriptor per cycle
        self._lookup_step()
        # start units
        if self.ev is None and self.evict_q:
            self.ev = [self.evict_q.popleft(), "aw", 0]
            self.ev_tag = self.net.new_tag()
        if self.rf is None and self.refill_q:
            self.rf = [self.refill_q.popleft(), "ar", 0]
            self.rf_tag = self.net.new_tag()
        if self.r_cur is None:
            d = self._pick_read()
            if d is not None:
                self.r_cur = [d, 0]
        # completed write commands respond in order
        while self.w_cmds and self.w_cmds[0].left == 0:
            c = self.w_cmds.popleft().cmd
            self.b_out.append(BBeat(c.id, Resp.OKAY, c.tag))
        # intake
        if s.ar.valid and s.ar.ready:
            self.ar_q.append(s.ar.payload)
        if s.aw.valid and s.aw.ready:
            self.aw_q.append(s.aw.payload)
            self.w_cmds.append(_Cmd(s.aw.payload, None))
        if self.pending_mask is not None and self._drained():
            self._apply_mask()
        self.max_locks = max(self.max_locks, len(self.locks))

    def _release(self, d):
        self.locks.discard(d.key)

    def _finish_write(self, d):
        self._release(d)
        rec = d.record
        rec.left -= 1

    def _finish_flush(self, d):
        if d.invalidate:
            self.tags.valid[d.way][d.key[1]] = False
        self._release(d)

    def _data_ready(self, d):
        d.ready = True
        if d.dir == Dir.READ:
            d.record.left -= 1

    def _pick_read(self):
        if self.r_cmd is not None:
            for d in self.read_q:
                if d.cmd is self.r_cmd:
                    return d if d.ready else None
            return None
        seen = set()
        for d in self.read_q:
            rid = d.cmd.id
            if rid in seen:
                continue
            if d.first and d.record.left == 0:
                return d
            seen.add(rid)
        return None

    def _next_desc(self, d_):
        """Head descriptor of direction ``d_``, splitting the next command if needed."""
        q = self.split[d_]
        if not q:
            cmds = self.ar_q if d_ == Dir.READ else self.aw_q
            if not cmds:
                return None
            cmd = cmds.popleft()
            descs = split_command(cmd, self.geo)
            if d_ == Dir.WRITE:
                rec = self.w_cmds[-len(self.aw_q) - 1]
                rec.left = len(descs)
            else:
                # a read starts responding only once all its lines are ready
                rec = _Cmd(cmd, len(descs))
            for x in descs:
                x.record = rec
            q.extend(descs)
        return q[0]

    def _key(self, d):
        geo = self.geo
        if self.in_spm(d.addrs[0]):
            off = d.addrs[0] - self.spm_base
            way = self.spm_ways[off // geo.way_bytes]
            index = (off % geo.way_bytes) // geo.line_bytes
            d.spm = True
            d.way = way
            return ("spm", way, index)
        return ("line", d.line % geo.lines)

    def _lookup_step(self):
        order = (Dir.READ, Dir.WRITE) if self.last_dir == Dir.WRITE else (Dir.WRITE, Dir.READ)
        for d_ in order:
            d = self._next_desc(d_)
            if d is None:
                continue
            key = self._key(d)
            if key in self.locks:
                continue
            self.split[d_].popleft()
            self.last_dir = d_
            self._resolve(d, key)
            return
        if self.flush_q and self.flush_q[0].key not in self.locks:
            d = self.flush_q.popleft()
            index = d.key[1]
            if self.tags.valid[d.way][index] and self.tags.dirty[d.way][index]:
                d.victim = self.tags.tag[d.way][index] * self.geo.lines + index
                self.locks.add(d.key)
                self.evict_q.append(d)
            elif d.invalidate:
                self.tags.valid[d.way][index] = False

    def _resolve(self, d, key):
        d.key = key
        self.locks.add(key)
        if d.spm:
            self._data_ready(d)
        else:
            lookup(self.tags, d, self.cache_ways)
            if d.hit:
                self.hits += 1
                self._data_ready(d)
            else:
                self.misses += 1
                if d.dir == Dir.READ:
                    self.guard.add(d.cmd.id)
                if d.evict:
                    self.evict_q.append(d)
                elif d.refill:
                    self.refill_q.append(d)
                else:
                    self._data_ready(d)
        if d.dir == Dir.READ:
            self.read_q.append(d)
        else:
            self.write_q.append(d)

    def busy(self):
        return not self._drained() or self.pending_mask is not None

    def outstanding(self):
        """Maintenance work the core started itself: queued or running flushes and a pending reconfiguration."""
        n = len(self.flush_q) + sum(1 for d in self.evict_q if d.flush)
        if self.ev is not None and self.ev[0].flush:
            n += 1
        return n + (self.pending_mask is not None)

    # backdoor ---------------------------------------------------------------
    def peek(self, addr, n):
        """Cached or SPM bytes at ``addr`` if present, else None per byte."""
        geo = self.geo
        out = []
        for a in range(addr, addr + n):
            if self.in_spm(a):
                off = a - self.spm_base
                way = self.spm_ways[off // geo.way_bytes]
                index = (off % geo.way_bytes) // geo.line_bytes
                out.append(self._line(way, index)[a % geo.line_bytes])
                continue
            line = a // geo.line_bytes
            w = self.tags.find(line % geo.lines, line // geo.lines, self.cache_ways)
            out.append(None if w is None else self._line(w, line % geo.lines)[a % geo.line_bytes])
        return out


class Llc(Component):
    """Cache composite: ingress demux, bypass path, core and egress mux.

    The master port carries one more ID bit than the slave port, selecting
    between bypass and core traffic.
    """

    def __init__(self, name, geo: CacheGeometry, id_bits, spm_mask=0, spm_base=0, seed=1, max_trans=8):
        super().__init__(name)
        self.geo = geo
        W = geo.block_bytes
        self.core = LlcCore(f"{name}.core", geo, id_bits, spm_mask, spm_base, seed)
        core = self.core

        def select(cmd):
            return 1 if core.routes_to_core(cmd) else 0

        self.ingress = Demux(f"{name}.in", 2, W, id_bits, select, max_trans=max_trans)
        self.egress = Mux(f"{name}.out", 2, W, id_bits, max_w_trans=max_trans)
        core.ingress = self.ingress
        self.slave = self.ingress.slave
        self.master = self.egress.master
        self.ports = [self.slave, self.master]
        self._links = [
            (self.ingress.masters[0], self.egress.slaves[0], {"monitor": False}),
            (self.ingress.masters[1], core.slave, {"monitor": False}),
            (core.master, self.egress.slaves[1], {"monitor": False}),
        ]

    def parts(self):
        return [self.ingress, self.core, self.egress]

    def processes(self):
        return []

    def internal_links(self):
        return self._links

    def configure_spm(self, mask):
        self.core.configure_spm(mask)

    def flush_all(self):
        self.core.flush_all()
