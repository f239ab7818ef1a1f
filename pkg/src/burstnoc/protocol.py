"""Protocol data model and link monitors.

A link bundles five channels: read command (``ar``), read response (``r``),
write command (``aw``), write data (``w``) and write response (``b``).
Payloads are immutable named tuples so a monitor can compare a stalled
payload against the one offered in the next cycle.

Every payload carries a ``tag``. Tags are simulation-only transaction serial
numbers (the ID is what the protocol sees); components keep the tag of the
transaction a beat belongs to, which lets a monitor tell *which* transaction
a response closes instead of only *that* one with the right ID came back.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from enum import IntEnum
from typing import Iterable, NamedTuple

from .errors import ConfigError

MAX_BEATS = 256
BOUNDARY_BYTES = 4096
ADDR_BITS = 64


class Dir(IntEnum):
    READ = 0
    WRITE = 1


class Resp(IntEnum):
    OKAY = 0
    SLAVE_ERROR = 2
    DECODE_ERROR = 3


def worst_resp(a, b):
    """Error-priority merge of two response codes."""
    return a if a >= b else b


class Command(NamedTuple):
    addr: int
    id: int
    len: int  # beats - 1
    size: int  # bytes per beat, power of two
    dir: Dir
    modifiable: bool = True
    qos: int = 0
    tag: int | None = None

    @property
    def beats(self):
        return self.len + 1

    @property
    def end(self):
        """One past the last byte touched by the burst."""
        return (self.addr & -self.size) + self.beats * self.size

    @property
    def nbytes(self):
        return self.end - self.addr


class WBeat(NamedTuple):
    data: bytes
    strb: int
    last: bool
    tag: int | None = None


class RBeat(NamedTuple):
    id: int
    data: bytes
    resp: Resp
    last: bool
    tag: int | None = None


class BBeat(NamedTuple):
    id: int
    resp: Resp
    tag: int | None = None


class TransactionId(NamedTuple):
    value: int
    width: int

    def check(self):
        if not 0 <= self.width <= 32:
            raise ConfigError(f"ID width {self.width} outside 0..32")
        if not 0 <= self.value < (1 << self.width):
            raise ConfigError(f"ID {self.value} does not fit in {self.width} bits")
        return self


def is_pow2(x):
    return x > 0 and x & (x - 1) == 0


def clog2(n):
    return (n - 1).bit_length() if n > 1 else 0


def lane_mask(lo, hi):
    return ((1 << (hi - lo)) - 1) << lo


def beats_of(cmd, data_width_bytes):
    """Per-beat ``(address, (lane_lo, lane_hi))`` of an incrementing burst.

    The first beat keeps the (possibly unaligned) start address; later beats
    start at size-aligned addresses.
    """
    size = cmd.size
    if size > data_width_bytes:
        raise ConfigError(f"beat size {size} exceeds data width {data_width_bytes}")
    base = cmd.addr & -size
    out = []
    for k in range(cmd.len + 1):
        addr = cmd.addr if k == 0 else base + k * size
        lo = addr % data_width_bytes
        hi = (base + k * size) % data_width_bytes + size
        out.append((addr, (lo, hi)))
    return out


def command_problems(cmd, data_width_bytes=None, boundary=BOUNDARY_BYTES):
    """Return a list of invariant violations of a single command (empty if clean)."""
    problems = []
    if not 0 <= cmd.len < MAX_BEATS:
        problems.append(f"len {cmd.len} outside 0..{MAX_BEATS - 1}")
    if not is_pow2(cmd.size):
        problems.append(f"size {cmd.size} not a power of two")
    elif data_width_bytes is not None and cmd.size > data_width_bytes:
        problems.append(f"size {cmd.size} exceeds link width {data_width_bytes}")
    if not 0 <= cmd.addr < (1 << ADDR_BITS):
        problems.append(f"address {cmd.addr:#x} outside 64-bit space")
    elif is_pow2(cmd.size) and cmd.addr // boundary != (cmd.end - 1) // boundary:
        problems.append(f"burst {cmd.addr:#x}+{cmd.nbytes} crosses a {boundary}-byte boundary")
    return problems


def merge_strobed(old, new, strb, full_mask):
    """Overwrite the strobed byte lanes of ``old`` with those of ``new``."""
    if strb == full_mask:
        return bytes(new)
    if not strb:
        return old
    out = bytearray(old)
    while strb:
        lo = (strb & -strb).bit_length() - 1
        x = strb >> lo
        run = (x ^ (x + 1)).bit_length() - 1
        out[lo:lo + run] = new[lo:lo + run]
        strb &= ~(((1 << run) - 1) << lo)
    return bytes(out)


# ---------------------------------------------------------------------------
# Violations and traces


class Violation(NamedTuple):
    cycle: int
    link: str
    rule: str  # F1, R2, R3, ORPHAN, BURST, PROTO
    detail: str


def format_violations(violations):
    """Serialize violations as ``cycle,link,rule,detail`` records."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cycle", "link", "rule", "detail"])
    for v in violations:
        writer.writerow([v.cycle, v.link, v.rule, v.detail])
    return buf.getvalue()


def parse_violations(text):
    rows = list(csv.reader(io.StringIO(text)))
    return [Violation(int(c), link, rule, detail) for c, link, rule, detail in rows[1:]]


class Sample(NamedTuple):
    cycle: int
    valid: bool
    ready: bool
    payload: object


class LinkTrace:
    """Per-channel sequence of samples on one link.

    Traces may be sparse: a cycle absent from a channel's list means valid
    was low in that cycle.
    """

    def __init__(self, name=""):
        self.name = name
        self.channels: dict[str, list[Sample]] = {}

    def record(self, channel, cycle, valid, ready, payload=None):
        samples = self.channels.setdefault(channel, [])
        if samples and samples[-1].cycle >= cycle:
            raise ValueError(f"{self.name}.{channel}: cycle {cycle} not after {samples[-1].cycle}")
        samples.append(Sample(cycle, bool(valid), bool(ready), payload))


def check_handshakes(trace):
    """Stability check: a stalled beat must be re-offered unchanged next cycle."""
    out = []
    for channel, samples in trace.channels.items():
        for cur, nxt in zip(samples, samples[1:] + [None]):
            if not cur.valid or cur.ready:
                continue
            where = f"{channel}"
            if nxt is None:
                continue  # trace ends mid-stall; nothing to compare against
            if nxt.cycle != cur.cycle + 1 or not nxt.valid:
                out.append(Violation(cur.cycle + 1, trace.name, "F1", f"{where}: valid retracted without handshake"))
            elif nxt.payload != cur.payload:
                out.append(Violation(nxt.cycle, trace.name, "F1", f"{where}: payload changed during stall"))
    return out


# ---------------------------------------------------------------------------
# Ordering scoreboard


class _Txn:
    __slots__ = ("tag", "beats", "seen", "data_done", "cycle")

    def __init__(self, tag, beats, cycle):
        self.tag = tag
        self.beats = beats
        self.seen = 0
        self.data_done = False
        self.cycle = cycle


def _same(a, b):
    return a is None or b is None or a == b


class OrderingChecker:
    """Scoreboard for one link: ordering rules, burst shape and outstanding counts.

    Feed it handshakes with :meth:`observe`. Violations accumulate in
    :attr:`violations`; nothing is raised.
    """

    def __init__(self, link="", data_bytes=None, boundary=BOUNDARY_BYTES):
        self.link = link
        self.data_bytes = data_bytes
        self.boundary = boundary
        self.violations: list[Violation] = []
        self.outstanding = (dict(), dict())  # per Dir: id -> deque[_Txn]
        self.issued = [0, 0]
        self.completed = [0, 0]
        self.total = [0, 0]
        self.max_total = [0, 0]
        self.max_per_id = [0, 0]
        self.max_unique = [0, 0]
        self._aw_wait = deque()  # writes whose data burst is not matched yet
        self._w_early = deque()  # finished data bursts that beat their command
        self._w_open = None

    def _flag(self, cycle, rule, detail):
        self.violations.append(Violation(cycle, self.link, rule, detail))

    def outstanding_count(self):
        return self.total[0] + self.total[1]

    def observe(self, cycle, channel, payload):
        getattr(self, "_on_" + channel)(cycle, payload)

    # commands -----------------------------------------------------------
    def _issue(self, cycle, cmd, d):
        for problem in command_problems(cmd, self.data_bytes, self.boundary):
            self._flag(cycle, "PROTO", f"id {cmd.id}: {problem}")
        txn = _Txn(cmd.tag, cmd.len + 1, cycle)
        per_id = self.outstanding[d]
        q = per_id.get(cmd.id)
        if q is None:
            q = per_id[cmd.id] = deque()
        q.append(txn)
        self.issued[d] += 1
        self.total[d] += 1
        if self.total[d] > self.max_total[d]:
            self.max_total[d] = self.total[d]
        if len(q) > self.max_per_id[d]:
            self.max_per_id[d] = len(q)
        if len(per_id) > self.max_unique[d]:
            self.max_unique[d] = len(per_id)
        return txn

    def _retire(self, d, rid, q, txn):
        q.remove(txn)
        if not q:
            del self.outstanding[d][rid]
        self.completed[d] += 1
        self.total[d] -= 1

    def _on_ar(self, cycle, cmd):
        self._issue(cycle, cmd, Dir.READ)

    def _on_aw(self, cycle, cmd):
        txn = self._issue(cycle, cmd, Dir.WRITE)
        if self._w_early:
            self._match_data(cycle, txn, *self._w_early.popleft())
        else:
            self._aw_wait.append(txn)

    # write data -----------------------------------------------------------
    def _on_w(self, cycle, beat):
        cur = self._w_open
        if cur is None:
            cur = self._w_open = [beat.tag, 0]
        elif not _same(beat.tag, cur[0]):
            self._flag(cycle, "R3", f"data beat of txn {beat.tag} interleaved into burst of txn {cur[0]}")
        cur[1] += 1
        if beat.last:
            self._w_open = None
            if self._aw_wait:
                self._match_data(cycle, self._aw_wait.popleft(), cur[0], cur[1])
            else:
                self._w_early.append((cur[0], cur[1]))

    def _match_data(self, cycle, txn, tag, count):
        if not _same(txn.tag, tag):
            self._flag(cycle, "R3", f"data burst of txn {tag} does not follow command order (expected {txn.tag})")
        if count != txn.beats:
            self._flag(cycle, "BURST", f"write txn {txn.tag}: {count} data beats for {txn.beats}-beat command")
        txn.data_done = True

    # responses --------------------------------------------------------------
    def _find(self, cycle, d, rid, tag, what):
        q = self.outstanding[d].get(rid)
        if not q:
            self._flag(cycle, "ORPHAN", f"{what} id {rid} with nothing outstanding")
            return None, None
        head = q[0]
        if _same(head.tag, tag):
            return q, head
        for txn in q:
            if txn.tag == tag:
                if txn.seen == 0:
                    self._flag(cycle, "R2", f"{what} id {rid}: txn {tag} overtook txn {head.tag}")
                return q, txn
        self._flag(cycle, "ORPHAN", f"{what} id {rid}: unknown txn {tag}")
        return None, None

    def _on_b(self, cycle, beat):
        q, txn = self._find(cycle, Dir.WRITE, beat.id, beat.tag, "write response")
        if txn is None:
            return
        if not txn.data_done:
            self._flag(cycle, "BURST", f"write response for txn {txn.tag} before its last data beat")
            if txn in self._aw_wait:
                self._aw_wait.remove(txn)
        self._retire(Dir.WRITE, beat.id, q, txn)

    def _on_r(self, cycle, beat):
        q, txn = self._find(cycle, Dir.READ, beat.id, beat.tag, "read response")
        if txn is None:
            return
        txn.seen += 1
        if beat.last:
            if txn.seen != txn.beats:
                self._flag(cycle, "BURST", f"read txn {txn.tag}: last flag on beat {txn.seen} of {txn.beats}")
            self._retire(Dir.READ, beat.id, q, txn)
        elif txn.seen >= txn.beats:
            self._flag(cycle, "BURST", f"read txn {txn.tag}: beat {txn.seen} of {txn.beats} without last")
            self._retire(Dir.READ, beat.id, q, txn)


def check_ordering(state, events: Iterable[tuple[int, str, object]]):
    """Feed ``(cycle, channel, payload)`` handshakes to ``state``; return new violations."""
    start = len(state.violations)
    for cycle, channel, payload in events:
        state.observe(cycle, channel, payload)
    return state.violations[start:]


def scoreboard_drain_time(system, horizon):
    """Step ``system`` until nothing is outstanding; return the cycles taken.

    ``system`` needs ``outstanding()`` and ``step()``. Raises
    :class:`WatchdogTimeout` when ``horizon`` cycles pass without draining.
    """
    from .errors import WatchdogTimeout

    cycles = 0
    while system.outstanding():
        if cycles >= horizon:
            raise WatchdogTimeout(
                f"{system.outstanding()} transactions still outstanding after {horizon} cycles",
                dump=system.scoreboard_dump() if hasattr(system, "scoreboard_dump") else None,
            )
        system.step()
        cycles += 1
    return cycles
