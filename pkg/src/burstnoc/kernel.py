"""Two-phase cycle engine and elementary stream blocks.

Each component exposes *processes*. A process owns a set of output channels
whose ``valid``/``payload`` it computes from its input channels' ``valid``/
``payload`` and registered state, and it computes the ``ready`` of its input
channels from the ``ready`` of its outputs. One cycle is:

1. forward settle: processes run ``valid()`` in topological order,
2. backward settle: the same processes run ``ready()`` in reverse order,
3. commit: every touched component runs ``tick()`` once.

Since all valids settle before any ready exists, a sender cannot depend on
``ready`` (F2) and a combinational valid loop is rejected at elaboration.
Only processes that receive a valid beat or belong to a busy component are
evaluated, so idle parts of a large netlist cost nothing.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque

from .errors import ConfigError, WatchdogTimeout
from .protocol import LinkTrace, OrderingChecker, Violation, scoreboard_drain_time


class _Unsettled:
    """Placeholder for a ``ready`` that has not been computed yet (strict mode)."""

    def __bool__(self):
        raise ConfigError("F2: a valid/payload computation read a ready signal")

    __repr__ = lambda self: "<unsettled>"  # noqa: E731


UNSETTLED = _Unsettled()


class Channel:
    __slots__ = (
        "name", "kind", "link", "valid", "ready", "payload", "src", "dst",
        "beats", "stalls", "monitored", "observe", "net",
    )

    def __init__(self, net, name, kind="", link=None):
        self.net = net
        self.name = name
        self.kind = kind
        self.link = link
        self.valid = False
        self.ready = False
        self.payload = None
        self.src = None
        self.dst = None
        self.beats = 0
        self.stalls = 0
        self.monitored = False
        self.observe = None

    def send(self, payload):
        """Drive valid high with ``payload`` for the current cycle."""
        net = self.net
        if net.strict and net._current is not self.src:
            raise ConfigError(f"{self.name} driven by a process that does not own it")
        self.valid = True
        self.payload = payload
        net._driven.append(self)
        dst = self.dst
        if dst.stamp != net.cycle:
            dst.stamp = net.cycle
            heapq.heappush(net._heap, dst.order)

    @property
    def fire(self):
        return self.valid and self.ready

    def __repr__(self):
        return f"Channel({self.name})"


class Process:
    __slots__ = ("comp", "name", "valid", "ready", "ins", "outs", "order", "stamp")

    def __init__(self, comp, name, valid=None, ready=None, ins=(), outs=()):
        self.comp = comp
        self.name = name
        self.valid = valid or _noop
        self.ready = ready or _noop
        self.ins = list(ins)
        self.outs = list(outs)
        self.order = -1
        self.stamp = -1

    def __repr__(self):
        return f"Process({self.comp.name}.{self.name})"


def _noop():
    pass


class Port:
    """One side of a five-channel link, owned by a component."""

    __slots__ = ("owner", "name", "role", "data_bytes", "id_bits", "link")

    def __init__(self, owner, name, role, data_bytes, id_bits):
        self.owner = owner
        self.name = name
        self.role = role
        self.data_bytes = data_bytes
        self.id_bits = id_bits
        self.link = None

    @property
    def path(self):
        return f"{self.owner.name}.{self.name}"

    def __repr__(self):
        return f"Port({self.path}, {self.role}, {self.data_bytes * 8}b, id{self.id_bits})"


class Link:
    """Five channels between a master port and a slave port."""

    CHANNELS = ("aw", "w", "b", "ar", "r")
    FORWARD = ("aw", "w", "ar")
    BACKWARD = ("b", "r")

    def __init__(self, net, name, data_bytes, id_bits, monitor=True):
        self.name = name
        self.data_bytes = data_bytes
        self.id_bits = id_bits
        self.master = None
        self.slave = None
        for kind in self.CHANNELS:
            setattr(self, kind, net.channel(f"{name}.{kind}", kind=kind, link=self))
        self.checker = OrderingChecker(name, data_bytes) if monitor else None
        if monitor:
            for kind in self.CHANNELS:
                ch = getattr(self, kind)
                ch.monitored = True
                ch.observe = getattr(self.checker, "_on_" + kind)

    def channels(self):
        return [self.aw, self.w, self.b, self.ar, self.r]


class Component:
    """Base class. Subclasses create ports in ``__init__`` and processes on demand."""

    def __init__(self, name):
        self.name = name
        self.ports: list[Port] = []
        self.net = None
        self._ticked = -1

    def master_port(self, name, data_bytes, id_bits):
        p = Port(self, name, "master", data_bytes, id_bits)
        self.ports.append(p)
        return p

    def slave_port(self, name, data_bytes, id_bits):
        p = Port(self, name, "slave", data_bytes, id_bits)
        self.ports.append(p)
        return p

    def parts(self):
        """Sub-components of a composite; leaves return ()."""
        return ()

    def internal_links(self):
        """``(master_port, slave_port, pipeline)`` connections inside a composite."""
        return ()

    def processes(self):
        return []

    def tick(self):
        pass

    def busy(self):
        """True while registered state can drive an output without any input."""
        return False

    def outstanding(self):
        """Transactions this component originated and has not seen complete."""
        return 0

    def wake(self):
        """Schedule this component next cycle after an external state change."""
        net = self.net
        if net is not None and net._elaborated:
            for part in self.parts() or (self,):
                part.wake() if part is not self else net._busy.append(self)

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Netlist:
    """A set of components, the links between them and the cycle engine."""

    def __init__(self, name="top", strict=False):
        self.name = name
        self.strict = strict
        self.components: list[Component] = []
        self.channels: list[Channel] = []
        self.links: list[Link] = []
        self.cycle = 0
        self.f1_violations: list[Violation] = []
        self.traces: dict[str, LinkTrace] | None = None
        self._tags = itertools.count(1)
        self._elaborated = False
        self._procs: list[Process] = []
        self._driven: list[Channel] = []
        self._heap: list[int] = []
        self._busy: list[Component] = []
        self._stalled: list[tuple[Channel, object]] = []
        self._current = None
        self._counted: list[Component] = []  # components that originate transactions
        self._checked: list = []  # link checkers

    # construction ---------------------------------------------------------
    def add(self, comp):
        if self._elaborated:
            raise ConfigError("cannot add components after elaboration")
        for part in comp.parts():
            self.add(part)
        if not comp.parts():
            comp.net = self
            self.components.append(comp)
        comp.net = self
        for master, slave, kw in comp.internal_links():
            self.connect(master, slave, **kw)
        return comp

    def channel(self, name, kind="", link=None):
        ch = Channel(self, name, kind, link)
        self.channels.append(ch)
        return ch

    def connect(self, master, slave, name=None, monitor=True):
        if master.role != "master" or slave.role != "slave":
            raise ConfigError(f"connect needs master→slave, got {master.path}→{slave.path}")
        for port in (master, slave):
            if port.link is not None:
                raise ConfigError(f"port {port.path} connected twice")
        if master.data_bytes != slave.data_bytes:
            raise ConfigError(
                f"data width mismatch {master.path} ({master.data_bytes * 8} bit) → "
                f"{slave.path} ({slave.data_bytes * 8} bit); insert a width converter"
            )
        if master.id_bits != slave.id_bits:
            raise ConfigError(
                f"ID width mismatch {master.path} ({master.id_bits}) → {slave.path} ({slave.id_bits}); "
                "insert an ID converter"
            )
        link = Link(self, name or f"{master.path}->{slave.path}", master.data_bytes, master.id_bits, monitor)
        link.master, link.slave = master, slave
        master.link = slave.link = link
        self.links.append(link)
        return link

    def new_tag(self):
        return next(self._tags)

    def enable_traces(self):
        self.traces = {link.name: LinkTrace(link.name) for link in self.links if link.checker is not None}

    def elaborate(self):
        if self._elaborated:
            return self
        for comp in self.components:
            for port in comp.ports:
                if port.link is None:
                    raise ConfigError(f"port {port.path} is not connected")
        procs = []
        for comp in self.components:
            comp._procs = comp.processes()
            for p in comp._procs:
                for ch in p.outs:
                    if ch.src is not None:
                        raise ConfigError(f"{ch.name} has two drivers: {ch.src} and {p}")
                    ch.src = p
                for ch in p.ins:
                    if ch.dst is not None:
                        raise ConfigError(f"{ch.name} has two receivers: {ch.dst} and {p}")
                    ch.dst = p
            procs.extend(comp._procs)
        for ch in self.channels:
            if ch.src is None or ch.dst is None:
                side = "driver" if ch.src is None else "receiver"
                raise ConfigError(f"channel {ch.name} has no {side}")
        self._procs = self._toposort(procs)
        for i, p in enumerate(self._procs):
            p.order = i
        self._busy = [c for c in self.components if c.busy()]
        self._counted = [c for c in self.components if type(c).outstanding is not Component.outstanding]
        self._checked = [link.checker for link in self.links if link.checker is not None]
        self._elaborated = True
        return self

    @staticmethod
    def _toposort(procs):
        index = {id(p): i for i, p in enumerate(procs)}
        succ = [[] for _ in procs]
        indeg = [0] * len(procs)
        for i, p in enumerate(procs):
            for ch in p.outs:
                j = index[id(ch.dst)]
                succ[i].append(j)
                indeg[j] += 1
        ready = [i for i, d in enumerate(indeg) if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            i = heapq.heappop(ready)
            order.append(procs[i])
            for j in succ[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(ready, j)
        if len(order) != len(procs):
            stuck = [repr(p) for i, p in enumerate(procs) if indeg[i] > 0]
            raise ConfigError("combinational valid loop through " + ", ".join(stuck[:8]))
        return order

    # simulation -----------------------------------------------------------
    def step(self):
        """Advance one clock cycle."""
        if not self._elaborated:
            self.elaborate()
        cyc = self.cycle
        driven = self._driven
        for ch in driven:
            ch.valid = False
        self._driven = driven = []
        strict = self.strict
        if strict:
            for ch in self.channels:
                ch.ready = UNSETTLED

        heap = self._heap
        for comp in self._busy:
            for p in comp._procs:
                if p.stamp != cyc:
                    p.stamp = cyc
                    heapq.heappush(heap, p.order)

        procs = self._procs
        ran = []
        pop = heapq.heappop
        while heap:
            p = procs[pop(heap)]
            self._current = p
            p.valid()
            ran.append(p)
        self._current = None

        if self._stalled:
            for ch, payload in self._stalled:
                if not ch.valid:
                    self.f1_violations.append(Violation(cyc, ch.link.name, "F1", f"{ch.kind}: valid retracted without handshake"))
                elif ch.payload != payload:
                    self.f1_violations.append(Violation(cyc, ch.link.name, "F1", f"{ch.kind}: payload changed during stall"))

        for p in reversed(ran):
            p.ready()

        stalled = []
        traces = self.traces
        if strict:
            for ch in driven:
                if ch.ready is UNSETTLED:
                    raise ConfigError(f"{ch.name}: valid beat left without a ready decision by {ch.dst}")
        for ch in driven:
            if ch.ready:
                ch.beats += 1
                if ch.observe is not None:
                    ch.observe(cyc, ch.payload)
                    if traces is not None:
                        traces[ch.link.name].record(ch.kind, cyc, True, True, ch.payload)
            else:
                ch.stalls += 1
                if ch.monitored:
                    stalled.append((ch, ch.payload))
                    if traces is not None:
                        traces[ch.link.name].record(ch.kind, cyc, True, False, ch.payload)
        self._stalled = stalled

        busy = []
        for p in ran:
            comp = p.comp
            if comp._ticked != cyc:
                comp._ticked = cyc
                comp.tick()
                if comp.busy():
                    busy.append(comp)
        self._busy = busy
        self.cycle = cyc + 1

    def run(self, cycles):
        for _ in range(cycles):
            self.step()
        return self

    # scoreboard -------------------------------------------------------------
    def outstanding(self):
        if not self._elaborated:
            self.elaborate()
        n = sum(c.outstanding() for c in self._counted)
        return n + sum(chk.total[0] + chk.total[1] for chk in self._checked)

    def drain(self, horizon):
        """Step until nothing is outstanding; see :func:`scoreboard_drain_time`."""
        if not self._elaborated:
            self.elaborate()
        return scoreboard_drain_time(self, horizon)

    def scoreboard_dump(self):
        dump = {}
        for link in self.links:
            chk = link.checker
            if chk is None or not chk.outstanding_count():
                continue
            dump[link.name] = {
                d: {rid: [t.tag for t in q] for rid, q in chk.outstanding[d].items()} for d in (0, 1)
            }
        for comp in self.components:
            if comp.outstanding():
                dump[comp.name] = comp.outstanding()
        return dump

    @property
    def violations(self):
        out = list(self.f1_violations)
        for link in self.links:
            if link.checker is not None:
                out.extend(link.checker.violations)
        out.sort(key=lambda v: (v.cycle, v.link))
        return out


# ---------------------------------------------------------------------------
# Elementary state blocks (used inside components)


class StreamFifo:
    """Bounded FIFO. ``push`` on a full FIFO and ``pop`` on an empty one are bugs."""

    __slots__ = ("capacity", "entries")

    def __init__(self, capacity):
        if capacity < 1:
            raise ConfigError("FIFO capacity must be >= 1")
        self.capacity = capacity
        self.entries = deque()

    def __len__(self):
        return len(self.entries)

    @property
    def full(self):
        return len(self.entries) >= self.capacity

    @property
    def empty(self):
        return not self.entries

    def head(self):
        return self.entries[0]

    def push(self, item):
        assert len(self.entries) < self.capacity, "push into full FIFO"
        self.entries.append(item)

    def pop(self):
        return self.entries.popleft()


class RrArbiter:
    """Round-robin arbiter whose grant locks until the granted beat handshakes."""

    __slots__ = ("n", "pointer", "lock")

    def __init__(self, n):
        self.n = n
        self.pointer = n - 1
        self.lock = None

    def grant(self, requests):
        return rr_grant(self, requests)

    def update(self, grant, fired):
        """Commit after a cycle in which ``grant`` was offered downstream."""
        if grant is None:
            return
        if fired:
            self.pointer = grant
            self.lock = None
        else:
            self.lock = grant


def rr_grant(arb, requests):
    """First requesting index strictly after the pointer, cyclically.

    ``requests`` is an int bitmask. A locked arbiter keeps its grant.
    """
    if arb.lock is not None:
        return arb.lock
    if not requests:
        return None
    n = arb.n
    start = arb.pointer + 1
    high = requests >> start if start < n else 0
    if high:
        return start + ((high & -high).bit_length() - 1)
    return (requests & -requests).bit_length() - 1


# ---------------------------------------------------------------------------
# Channel-level stream components


class StreamSource(Component):
    """Offers queued payloads, one per cycle, holding each until accepted."""

    def __init__(self, name, out, items=()):
        super().__init__(name)
        self.out = out
        self.queue = deque(items)
        self.sent = []

    def processes(self):
        return [Process(self, "out", self._valid, outs=[self.out])]

    def _valid(self):
        if self.queue:
            self.out.send(self.queue[0])

    def tick(self):
        if self.out.fire:
            self.sent.append(self.queue.popleft())

    def busy(self):
        return bool(self.queue)


class StreamSink(Component):
    """Accepts beats; ``ready_pattern`` (cycle -> bool) models back-pressure."""

    def __init__(self, name, inp, ready_pattern=None):
        super().__init__(name)
        self.inp = inp
        self.pattern = ready_pattern
        self.received = []
        self.cycles = []

    def processes(self):
        return [Process(self, "in", ready=self._ready, ins=[self.inp])]

    def _ready(self):
        self.inp.ready = True if self.pattern is None else bool(self.pattern(self.net.cycle))

    def tick(self):
        if self.inp.fire:
            self.received.append(self.inp.payload)
            self.cycles.append(self.net.cycle)


class FifoStage(Component):
    """Registered FIFO on one channel: ready = not full, valid = not empty."""

    def __init__(self, name, inp, out, capacity=2):
        super().__init__(name)
        self.inp, self.out = inp, out
        self.fifo = StreamFifo(capacity)

    def processes(self):
        return [
            Process(self, "in", ready=self._in_ready, ins=[self.inp]),
            Process(self, "out", self._out_valid, outs=[self.out]),
        ]

    def _in_ready(self):
        self.inp.ready = not self.fifo.full

    def _out_valid(self):
        if self.fifo.entries:
            self.out.send(self.fifo.entries[0])

    def tick(self):
        if self.out.valid and self.out.ready:
            self.fifo.pop()
        if self.inp.valid and self.inp.ready:
            self.fifo.push(self.inp.payload)

    def busy(self):
        return bool(self.fifo.entries)


class RegisterStage(Component):
    """Stream register: one slot, cuts valid and payload, passes ready through."""

    def __init__(self, name, inp, out):
        super().__init__(name)
        self.inp, self.out = inp, out
        self.slot = None
        self.full = False

    def processes(self):
        return [Process(self, "reg", self._valid, self._ready, ins=[self.inp], outs=[self.out])]

    def _valid(self):
        if self.full:
            self.out.send(self.slot)

    def _ready(self):
        self.inp.ready = not self.full or self.out.ready

    def tick(self):
        if self.full and self.out.valid and self.out.ready:
            self.full = False
            self.slot = None
        if self.inp.valid and self.inp.ready:
            self.full = True
            self.slot = self.inp.payload

    def busy(self):
        return self.full


class SpillStage(Component):
    """Two-slot spill register: cuts valid, payload and ready; full throughput."""

    def __init__(self, name, inp, out):
        super().__init__(name)
        self.inp, self.out = inp, out
        self.slots = deque()

    def processes(self):
        return [
            Process(self, "in", ready=self._in_ready, ins=[self.inp]),
            Process(self, "out", self._out_valid, outs=[self.out]),
        ]

    def _in_ready(self):
        self.inp.ready = len(self.slots) < 2

    def _out_valid(self):
        if self.slots:
            self.out.send(self.slots[0])

    def tick(self):
        if self.out.valid and self.out.ready:
            self.slots.popleft()
        if self.inp.valid and self.inp.ready:
            self.slots.append(self.inp.payload)

    def busy(self):
        return bool(self.slots)


class StreamArbiter(Component):
    """N:1 stream multiplexer with a locking round-robin arbiter."""

    def __init__(self, name, inputs, out):
        super().__init__(name)
        self.inputs = list(inputs)
        self.out = out
        self.arb = RrArbiter(len(self.inputs))
        self.grant = None
        self.grants = [0] * len(self.inputs)

    def processes(self):
        return [Process(self, "arb", self._valid, self._ready, ins=self.inputs, outs=[self.out])]

    def _valid(self):
        req = 0
        for i, ch in enumerate(self.inputs):
            if ch.valid:
                req |= 1 << i
        self.grant = g = rr_grant(self.arb, req)
        if g is not None:
            self.out.send(self.inputs[g].payload)

    def _ready(self):
        g = self.grant
        for i, ch in enumerate(self.inputs):
            ch.ready = i == g and self.out.ready

    def tick(self):
        g = self.grant
        fired = g is not None and self.out.ready
        if fired:
            self.grants[g] += 1
        self.arb.update(g, fired)
        self.grant = None


class StreamFork(Component):
    """1:N fork; the input is consumed once every output has taken the beat."""

    def __init__(self, name, inp, outputs):
        super().__init__(name)
        self.inp = inp
        self.outputs = list(outputs)
        self.done = [False] * len(self.outputs)

    def processes(self):
        return [Process(self, "fork", self._valid, self._ready, ins=[self.inp], outs=self.outputs)]

    def _valid(self):
        if self.inp.valid:
            for ch, done in zip(self.outputs, self.done):
                if not done:
                    ch.send(self.inp.payload)

    def _ready(self):
        self.inp.ready = all(d or ch.ready for ch, d in zip(self.outputs, self.done))

    def tick(self):
        if not self.inp.valid:
            return
        if self.inp.ready:
            self.done = [False] * len(self.outputs)
        else:
            self.done = [d or (ch.valid and ch.ready) for ch, d in zip(self.outputs, self.done)]


class StreamDemux(Component):
    """1:N stream demultiplexer; ``select(payload)`` picks the output."""

    def __init__(self, name, inp, outputs, select):
        super().__init__(name)
        self.inp = inp
        self.outputs = list(outputs)
        self.select = select
        self.sel = None

    def processes(self):
        return [Process(self, "demux", self._valid, self._ready, ins=[self.inp], outs=self.outputs)]

    def _valid(self):
        self.sel = None
        if self.inp.valid:
            self.sel = self.select(self.inp.payload)
            self.outputs[self.sel].send(self.inp.payload)

    def _ready(self):
        self.inp.ready = self.sel is not None and self.outputs[self.sel].ready


# ---------------------------------------------------------------------------
# Link-level pipeline


class LinkPipe(Component):
    """Five-channel pass-through with ``stages[k]`` spill registers on channel k.

    Channel order is ``aw, w, b, ar, r``. All-zero stages make a wire.
    """

    def __init__(self, name, data_bytes, id_bits, stages=(0, 0, 0, 0, 0)):
        super().__init__(name)
        if isinstance(stages, int):
            stages = (stages,) * 5
        if len(stages) != 5 or any(s < 0 for s in stages):
            raise ConfigError(f"{name}: need five non-negative stage counts, got {stages}")
        self.stages = tuple(int(s) for s in stages)
        self.s = self.slave_port("s", data_bytes, id_bits)
        self.m = self.master_port("m", data_bytes, id_bits)
        self.regs = {k: [deque() for _ in range(n)] for k, n in zip(Link.CHANNELS, self.stages) if n}

    def _ends(self, kind):
        src, dst = (self.s, self.m) if kind in Link.FORWARD else (self.m, self.s)
        return getattr(src.link, kind), getattr(dst.link, kind)

    def processes(self):
        procs = []
        wires = {"fwd": [], "bwd": []}
        self._wired = []
        self._reg_in = []
        self._reg_out = []
        self._chains = [(*self._ends(k), self.regs[k]) for k in Link.CHANNELS if k in self.regs]
        for kind, n in zip(Link.CHANNELS, self.stages):
            inp, out = self._ends(kind)
            if n == 0:
                wires["fwd" if kind in Link.FORWARD else "bwd"].append((inp, out))
            else:
                chain = self.regs[kind]
                self._reg_in.append((inp, chain[0]))
                self._reg_out.append((out, chain[-1]))
        for name, pairs in wires.items():
            if pairs:
                self._wired.extend(pairs)
                procs.append(Process(self, name, self._wire_valid(pairs), self._wire_ready(pairs),
                                     ins=[i for i, _ in pairs], outs=[o for _, o in pairs]))
        if self._reg_in:
            procs.append(Process(self, "reg_in", ready=self._regs_in_ready, ins=[i for i, _ in self._reg_in]))
            procs.append(Process(self, "reg_out", self._regs_out_valid, outs=[o for o, _ in self._reg_out]))
        return procs

    @staticmethod
    def _wire_valid(pairs):
        def valid():
            for inp, out in pairs:
                if inp.valid:
                    out.send(inp.payload)
        return valid

    @staticmethod
    def _wire_ready(pairs):
        def ready():
            for inp, out in pairs:
                if inp.valid:
                    inp.ready = out.ready
        return ready

    def _regs_in_ready(self):
        for inp, first in self._reg_in:
            inp.ready = len(first) < 2

    def _regs_out_valid(self):
        for out, last in self._reg_out:
            if last:
                out.send(last[0])

    def tick(self):
        for inp, out, chain in self._chains:
            if len(chain) == 1:
                stage = chain[0]
                if out.valid and out.ready:
                    stage.popleft()
                if inp.valid and inp.ready:
                    stage.append(inp.payload)
                continue
            # a stage accepts based on its start-of-cycle fill (registered ready)
            start = [len(s) for s in chain]
            if out.valid and out.ready:
                chain[-1].popleft()
            for i in range(len(chain) - 1, 0, -1):
                if chain[i - 1] and start[i] < 2:
                    chain[i].append(chain[i - 1].popleft())
            if inp.valid and inp.ready:
                chain[0].append(inp.payload)

    def busy(self):
        for _, _, chain in self._chains:
            for s in chain:
                if s:
                    return True
        return False

    @property
    def latency(self):
        """Registered stages per channel, in ``aw, w, b, ar, r`` order."""
        return self.stages
