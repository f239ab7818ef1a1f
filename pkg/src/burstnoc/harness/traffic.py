"""Traffic generators, traffic masters and the golden-memory oracle."""

from __future__ import annotations

import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import NamedTuple

from ..errors import ConfigError
from ..kernel import Component, Process
from ..protocol import BOUNDARY_BYTES, MAX_BEATS, Command, Dir, Resp, WBeat, beats_of, lane_mask


class Op(NamedTuple):
    """One transaction a generator wants issued."""

    dir: Dir
    addr: int
    len: int
    size: int
    id: int = 0
    data: bytes | None = None  # write payload, ``nbytes`` long
    modifiable: bool = True
    qos: int = 0
    key: object = None  # handed back to the generator's ``on_done``


class Mismatch(NamedTuple):
    master: str
    addr: int
    expected: int
    got: int


class GoldenMemory:
    """Flat byte memory plus the set of address ranges currently in flight.

    Writes are applied when their response arrives; reads take their
    expected data when issued. Generators avoid overlapping in-flight
    ranges, so both views coincide with what the fabric must deliver.
    """

    def __init__(self):
        self.bytes: dict[int, int] = {}
        self.inflight: dict[int, tuple[int, int, Dir]] = {}

    def read(self, addr, n):
        get = self.bytes.get
        return bytes(get(a, 0) for a in range(addr, addr + n))

    def write(self, addr, data):
        for i, b in enumerate(data):
            self.bytes[addr + i] = b

    def write_masked(self, addr, data, mask):
        for i, b in enumerate(data):
            if mask[i]:
                self.bytes[addr + i] = b

    def hazard(self, lo, hi, d):
        for a, b, d2 in self.inflight.values():
            if lo < b and a < hi and (d == Dir.WRITE or d2 == Dir.WRITE):
                return True
        return False

    def begin(self, tag, lo, hi, d):
        self.inflight[tag] = (lo, hi, d)

    def end(self, tag):
        self.inflight.pop(tag, None)

    def image(self, lo, hi):
        return self.read(lo, hi - lo)


def clamp_len(addr, size, want_beats, boundary=BOUNDARY_BYTES, limit=None):
    """Longest burst of at most ``want_beats`` that stays inside the boundary and ``limit``."""
    base = addr & -size
    room = (boundary - (base % boundary)) // size
    beats = min(want_beats, room, MAX_BEATS)
    if limit is not None:
        beats = min(beats, max(1, (limit - base) // size))
    return max(beats, 1)


# ---------------------------------------------------------------------------
# generators


class Generator:
    """Produces :class:`Op` values; ``None`` means nothing to issue this cycle."""

    done = False

    def next(self, cycle, rng):
        raise NotImplementedError

    def on_done(self, key, cycle):
        """Called when the transaction issued for an ``Op`` with ``key`` completes."""


@dataclass
class RandomTraffic(Generator):
    regions: list[tuple[int, int]]
    data_bytes: int
    read_ratio: float = 0.5
    max_beats: int = 16
    rate: float = 1.0
    ids: int = 4
    sizes: tuple[int, ...] | None = None
    aligned: bool = False
    count: int | None = None
    modifiable: bool = True
    boundary: int = BOUNDARY_BYTES
    issued: int = 0

    def __post_init__(self):
        if not self.regions:
            raise ConfigError("random traffic needs at least one address region")
        if self.sizes is None:
            self.sizes = (self.data_bytes,)

    @property
    def done(self):
        return self.count is not None and self.issued >= self.count

    def next(self, cycle, rng):
        if self.done or (self.rate < 1.0 and rng.random() >= self.rate):
            return None
        base, span = rng.choice(self.regions)
        size = rng.choice(self.sizes)
        addr = base + rng.randrange(0, span // size) * size
        if not self.aligned and size > 1 and rng.random() < 0.25:
            addr += rng.randrange(size)
        beats = clamp_len(addr, size, rng.randint(1, self.max_beats), self.boundary, base + span)
        d = Dir.READ if rng.random() < self.read_ratio else Dir.WRITE
        self.issued += 1
        return Op(d, addr, beats - 1, size, rng.randrange(self.ids), modifiable=self.modifiable)


@dataclass
class SequentialTraffic(Generator):
    """Contiguous bursts sweeping ``[base, base + span)``, wrapping around."""

    base: int
    span: int
    data_bytes: int
    dir: Dir = Dir.READ
    beats: int = 16
    id: int = 0
    count: int | None = None
    offset: int = 0
    issued: int = 0

    @property
    def done(self):
        return self.count is not None and self.issued >= self.count

    def next(self, cycle, rng):
        if self.done:
            return None
        W = self.data_bytes
        addr = self.base + (self.offset % self.span)
        beats = clamp_len(addr, W, self.beats, limit=self.base + self.span)
        self.offset += beats * W - (addr % W)
        self.issued += 1
        return Op(self.dir, addr, beats - 1, W, self.id)


@dataclass
class ScriptTraffic(Generator):
    """Replays a fixed list of operations, one per cycle at most."""

    ops: list[Op] = field(default_factory=list)

    def __post_init__(self):
        self.ops = deque(self.ops)

    @property
    def done(self):
        return not self.ops

    def next(self, cycle, rng):
        return self.ops.popleft() if self.ops else None


@dataclass
class PermutationTraffic(Generator):
    """Each master streams into the region ``(index + shift) % n``, so no two masters collide."""

    regions: list[tuple[int, int]]
    index: int
    data_bytes: int
    shift: int = 1
    dir: Dir = Dir.READ
    beats: int = 16
    count: int | None = None
    offset: int = 0
    issued: int = 0

    @property
    def done(self):
        return self.count is not None and self.issued >= self.count

    def next(self, cycle, rng):
        if self.done:
            return None
        base, span = self.regions[(self.index + self.shift) % len(self.regions)]
        W = self.data_bytes
        addr = base + self.offset % span
        beats = clamp_len(addr, W, self.beats, limit=base + span)
        self.offset += beats * W
        self.issued += 1
        return Op(self.dir, addr, beats - 1, W, 0)


class TraceRecord(NamedTuple):
    """``cycle_offset,op,src,dst,len,dep_id``; the offset counts from the dependency's completion."""

    id: int
    cycle_offset: int
    op: str
    src: int
    dst: int
    len: int
    dep_id: int | None


def parse_trace(text):
    """Parse trace lines; record IDs are line positions, ``dep_id`` empty or -1 for none."""
    out = []
    for n, line in enumerate(l for l in text.splitlines() if l.strip() and not l.lstrip().startswith("#")):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 6:
            raise ConfigError(f"trace line {n}: need 6 fields cycle_offset,op,src,dst,len,dep_id")
        try:
            off, op, src, dst, ln = int(parts[0], 0), parts[1], int(parts[2], 0), int(parts[3], 0), int(parts[4], 0)
            dep = None if parts[5] in ("", "-1") else int(parts[5], 0)
        except ValueError as e:
            raise ConfigError(f"trace line {n}: {e}") from None
        if op not in ("read", "write", "copy"):
            raise ConfigError(f"trace line {n}: unknown op {op!r}")
        if dep is not None and not 0 <= dep < n:
            raise ConfigError(f"trace line {n}: dep_id {dep} must name an earlier record")
        if ln < 1:
            raise ConfigError(f"trace line {n}: length must be >= 1")
        out.append(TraceRecord(n, off, op, src, dst, ln, dep))
    return out


class TraceReplay(Generator):
    """Releases trace records once their dependency has completed and the offset has passed.

    For a traffic master, ``read``/``write`` records become bursts at ``src``;
    for a DMA engine every record is a copy from ``src`` to ``dst``.
    """

    def __init__(self, records, data_bytes=None):
        self.records = list(records)
        self.W = data_bytes
        self.waiting = deque(self.records)
        self.finished: dict[int, int] = {}
        self.start = None
        self.outstanding = 0

    @property
    def done(self):
        return not self.waiting

    def _due(self, cycle):
        if self.start is None:
            self.start = cycle
        if not self.waiting:
            return None
        r = self.waiting[0]
        base = self.start if r.dep_id is None else self.finished.get(r.dep_id)
        if base is None or cycle < base + r.cycle_offset:
            return None
        return r

    def next(self, cycle, rng):
        r = self._due(cycle)
        if r is None:
            return None
        W = self.W
        d = Dir.WRITE if r.op == "write" else Dir.READ
        first = r.src & -W
        beats = (r.src + r.len - first + W - 1) // W
        beats = clamp_len(r.src, W, beats)
        self.waiting.popleft()
        return Op(d, r.src, beats - 1, W, 0, key=r.id)

    def next_transfer(self, cycle, rng=None):
        r = self._due(cycle)
        if r is None:
            return None
        self.waiting.popleft()
        return r.id, r.src, r.dst, r.len

    def on_done(self, key, cycle):
        self.finished[key] = cycle


@dataclass
class DmaTransfers(Generator):
    """Random 1-D copies from ``src`` into disjoint destination slots in ``dst``.

    Destinations never overlap each other or the sources, so each copy can be
    checked against the preloaded source bytes after the run.
    """

    src: tuple[int, int]
    dst: tuple[int, int]
    count: int = 100
    min_len: int = 1
    max_len: int = 4096
    issued: int = 0
    cursor: int = 0
    full: bool = False

    def __post_init__(self):
        s0, sn = self.src
        d0, dn = self.dst
        if s0 < d0 + dn and d0 < s0 + sn:
            raise ConfigError("dma_transfers: src and dst regions overlap")
        if self.max_len > min(sn, dn):
            raise ConfigError("dma_transfers: max_len exceeds a region")

    @property
    def done(self):
        return self.full or self.issued >= self.count

    def next_transfer(self, cycle, rng):
        if self.done:
            return None
        s0, sn = self.src
        d0, dn = self.dst
        n = rng.randint(self.min_len, self.max_len)
        src = s0 + rng.randrange(sn - n + 1)
        skew = rng.randrange(64)
        if self.cursor + skew + n > dn:
            self.full = True  # destinations are never reused
            return None
        dst = d0 + self.cursor + skew
        self.cursor += skew + n
        self.issued += 1
        return self.issued - 1, src, dst, n

    def on_done(self, key, cycle):
        pass


class MixTraffic(Generator):
    """Runs several generators, picking one at random each cycle."""

    def __init__(self, gens):
        self.gens = list(gens)

    @property
    def done(self):
        return all(g.done for g in self.gens)

    def next(self, cycle, rng):
        live = [g for g in self.gens if not g.done]
        return rng.choice(live).next(cycle, rng) if live else None


# ---------------------------------------------------------------------------
# traffic master


class _Pending:
    __slots__ = ("cmd", "issued", "expect", "data", "beats", "seen", "resp", "key")

    def __init__(self, cmd, issued, expect=None, data=None):
        self.cmd = cmd
        self.issued = issued
        self.expect = expect
        self.data = data
        self.beats = None
        self.seen = 0
        self.resp = Resp.OKAY
        self.key = None


class TrafficMaster(Component):
    """Issues generator traffic on a master port and checks every response.

    Reads are checked byte by byte against the golden memory; writes update
    it when their response arrives. ``stop_at`` ends injection so the run
    can drain.
    """

    def __init__(self, name, data_bytes, id_bits, gen, golden=None, seed=0, max_outstanding=8,
                 stop_at=None, expect_errors=False, max_per_id=None):
        super().__init__(name)
        self.port = self.master_port("m", data_bytes, id_bits)
        self.W = data_bytes
        self.id_mask = (1 << id_bits) - 1
        self.gen = gen
        self.golden = golden if golden is not None else GoldenMemory()
        self.rng = random.Random(seed)
        self.max_outstanding = max_outstanding
        self.max_per_id = max_per_id
        self.per_id: Counter = Counter()
        self.stop_at = stop_at
        self.expect_errors = expect_errors
        self.held: Op | None = None
        self.ar_slot: Command | None = None
        self.aw_slot: Command | None = None
        self.w_queue: deque[WBeat] = deque()
        self.pending: dict[int, _Pending] = {}
        self.latencies: Counter = Counter()
        self.mismatches: list[Mismatch] = []
        self.errors = 0
        self.completed = [0, 0]
        self.read_bytes = 0
        self.write_bytes = 0
        self.first_issue = None
        self.last_done = None

    # generation -----------------------------------------------------------
    def _fetch(self):
        cyc = self.net.cycle
        if self.stop_at is not None and cyc >= self.stop_at:
            return
        if len(self.pending) + (self.ar_slot is not None) + (self.aw_slot is not None) >= self.max_outstanding:
            return
        op = self.held
        if op is None:
            op = self.gen.next(cyc, self.rng)
            if op is None:
                return
        slot = self.ar_slot if op.dir == Dir.READ else self.aw_slot
        cmd = Command(op.addr, op.id & self.id_mask, op.len, op.size, op.dir, op.modifiable, op.qos)
        lo, hi = op.addr, cmd.end
        full = self.max_per_id is not None and self.per_id[cmd.dir, cmd.id] >= self.max_per_id
        if slot is not None or full or self.golden.hazard(lo, hi, op.dir):
            self.held = op
            return
        self.held = None
        tag = self.net.new_tag()
        cmd = cmd._replace(tag=tag)
        self.golden.begin(tag, lo, hi, op.dir)
        self.per_id[cmd.dir, cmd.id] += 1
        if op.dir == Dir.READ:
            self.ar_slot = cmd
            p = self.pending[tag] = _Pending(cmd, cyc, expect=self.golden.read(lo, hi - lo))
        else:
            data = op.data if op.data is not None else self.rng.randbytes(hi - lo)
            self.aw_slot = cmd
            p = self.pending[tag] = _Pending(cmd, cyc, data=data)
        p.key = op.key

    def _write_beats(self, p):
        cmd, W = p.cmd, self.W
        out = []
        beats = beats_of(cmd, W)
        for k, (addr, (lo, hi)) in enumerate(beats):
            buf = bytearray(W)
            off = addr - cmd.addr
            n = hi - lo
            buf[lo:hi] = p.data[off:off + n]
            out.append(WBeat(bytes(buf), lane_mask(lo, hi), k == cmd.len, cmd.tag))
        return out

    # processes ------------------------------------------------------------
    def processes(self):
        l = self.port.link
        self._l = l
        return [
            Process(self, "req", self._req_valid, outs=[l.aw, l.w, l.ar]),
            Process(self, "rsp", ready=self._rsp_ready, ins=[l.b, l.r]),
        ]

    def _req_valid(self):
        l = self._l
        if self.ar_slot is not None:
            l.ar.send(self.ar_slot)
        if self.aw_slot is not None:
            l.aw.send(self.aw_slot)
        if self.w_queue:
            l.w.send(self.w_queue[0])

    def _rsp_ready(self):
        l = self._l
        l.r.ready = True
        l.b.ready = True

    def _finish(self, tag, p):
        cyc = self.net.cycle
        del self.pending[tag]
        self.golden.end(tag)
        self.latencies[cyc - p.issued] += 1
        self.completed[p.cmd.dir] += 1
        self.per_id[p.cmd.dir, p.cmd.id] -= 1
        self.last_done = cyc
        if p.key is not None:
            self.gen.on_done(p.key, cyc)

    def tick(self):
        l = self._l
        cyc = self.net.cycle
        if l.r.valid:
            self._on_r(l.r.payload)
        if l.b.valid:
            self._on_b(l.b.payload)
        if l.w.valid and l.w.ready:
            self.w_queue.popleft()
        if l.ar.valid and l.ar.ready:
            self.ar_slot = None
            if self.first_issue is None:
                self.first_issue = cyc
        if l.aw.valid and l.aw.ready:
            p = self.pending[self.aw_slot.tag]
            self.w_queue.extend(self._write_beats(p))
            self.aw_slot = None
            if self.first_issue is None:
                self.first_issue = cyc
        self._fetch()

    def _on_r(self, beat):
        p = self.pending.get(beat.tag)
        if p is None:
            return  # the link checker reports orphans
        cmd, W = p.cmd, self.W
        if p.beats is None:
            p.beats = beats_of(cmd, W)
        addr, (lo, hi) = p.beats[min(p.seen, cmd.len)]
        p.seen += 1
        if beat.resp != Resp.OKAY:
            p.resp = beat.resp
        elif p.expect is not None:
            off = addr - cmd.addr
            got = beat.data[lo:hi]
            want = p.expect[off:off + hi - lo]
            if got != want:
                for i, (g, w) in enumerate(zip(got, want)):
                    if g != w:
                        self.mismatches.append(Mismatch(self.name, addr + i, w, g))
                        break
        self.read_bytes += hi - lo
        if beat.last:
            if p.resp != Resp.OKAY:
                self.errors += 1
            self._finish(beat.tag, p)

    def _on_b(self, beat):
        p = self.pending.get(beat.tag)
        if p is None:
            return
        if beat.resp == Resp.OKAY:
            self.golden.write(p.cmd.addr, p.data)
            self.write_bytes += len(p.data)
        else:
            self.errors += 1
        self._finish(beat.tag, p)

    def busy(self):
        return True if not self.gen.done and (self.stop_at is None or self.net.cycle < self.stop_at) else bool(
            self.held or self.ar_slot or self.aw_slot or self.w_queue)

    def outstanding(self):
        return len(self.pending)

    @property
    def ok(self):
        return not self.mismatches and (self.expect_errors or not self.errors)
