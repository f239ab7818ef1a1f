"""Network multiplexer, demultiplexer, crossbar and crosspoint."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import ConfigError
from .kernel import Component, LinkPipe, Process, RrArbiter, StreamFifo, rr_grant
from .protocol import BBeat, Dir, RBeat, Resp, clog2

DECODE_ERROR = -1
MAX_DEMUX_ID_BITS = 8


# ---------------------------------------------------------------------------
# pure helpers


def mux_forward(slave_idx, cmd, input_id_bits):
    """Prepend the slave port index to the command ID."""
    return cmd._replace(id=(slave_idx << input_id_bits) | cmd.id)


def mux_route_response(rsp, input_id_bits):
    """Split an extended response ID into ``(slave_idx, response with original ID)``."""
    return rsp.id >> input_id_bits, rsp._replace(id=rsp.id & ((1 << input_id_bits) - 1))


@dataclass
class AddrRule:
    """Address map of one decoder: half-open ``(start, end, port)`` ranges.

    ``default`` is the port for unmatched addresses; ``None`` sends them to
    the error slave.
    """

    ranges: list[tuple[int, int, int]] = field(default_factory=list)
    default: int | None = None

    def __post_init__(self):
        spans = sorted((s, e) for s, e, _ in self.ranges)
        for (s, e), (s2, _) in zip(spans, spans[1:]):
            if s2 < e:
                raise ConfigError(f"address ranges overlap at {s2:#x}")
        for s, e, p in self.ranges:
            if e <= s:
                raise ConfigError(f"empty address range [{s:#x}, {e:#x})")


def decode_addr(rule, addr):
    """First matching range wins; otherwise the fallback (port or DECODE_ERROR)."""
    for start, end, port in rule.ranges:
        if start <= addr < end:
            return port
    return DECODE_ERROR if rule.default is None else rule.default


class DemuxState:
    """Per-ID, per-direction outstanding counter and target index."""

    def __init__(self, id_bits, max_trans):
        if id_bits > MAX_DEMUX_ID_BITS:
            raise ConfigError(
                f"demultiplexer ID width {id_bits} exceeds {MAX_DEMUX_ID_BITS} bits; insert an ID remapper"
            )
        n = 1 << id_bits
        self.max_trans = max_trans
        self.count = ([0] * n, [0] * n)
        self.index = ([0] * n, [0] * n)

    def admit(self, d, tid, target):
        c = self.count[d][tid]
        if c == 0:
            return True
        return self.index[d][tid] == target and c < self.max_trans

    def issue(self, d, tid, target):
        self.count[d][tid] += 1
        self.index[d][tid] = target

    def retire(self, d, tid):
        assert self.count[d][tid] > 0, f"demux counter underflow for id {tid}"
        self.count[d][tid] -= 1


def demux_admit(state, cmd, target_port):
    """True when ``cmd`` may go to ``target_port`` without breaking response order."""
    return state.admit(cmd.dir, cmd.id, target_port)


# ---------------------------------------------------------------------------
# Multiplexer


class Mux(Component):
    """S slave ports onto one master port; the port index extends the ID.

    ``prefixes[i]`` is the value prepended to IDs from slave port i (default
    ``i``) and ``prefix_bits`` its width, which lets a sparse crossbar column
    keep the global slave index in the ID.
    """

    def __init__(self, name, n_slaves, data_bytes, id_bits, max_w_trans=8, prefixes=None, prefix_bits=None):
        super().__init__(name)
        self.n = n_slaves
        self.prefixes = list(prefixes) if prefixes is not None else list(range(n_slaves))
        self.prefix_bits = clog2(n_slaves) if prefix_bits is None else prefix_bits
        if len(self.prefixes) != n_slaves or any(not 0 <= p < (1 << self.prefix_bits) for p in self.prefixes):
            raise ConfigError(f"{name}: bad prefixes {self.prefixes}")
        self.in_bits = id_bits
        self.slaves = [self.slave_port(f"s{i}", data_bytes, id_bits) for i in range(n_slaves)]
        self.master = self.master_port("m", data_bytes, id_bits + self.prefix_bits)
        self.route = {p: i for i, p in enumerate(self.prefixes)}
        self.ar_arb = RrArbiter(n_slaves)
        self.aw_arb = RrArbiter(n_slaves)
        self.w_grants = StreamFifo(max_w_trans)
        self._ar_g = self._aw_g = self._r_to = self._b_to = None

    def processes(self):
        links = [p.link for p in self.slaves]
        m = self.master.link
        self._s_ar = [l.ar for l in links]
        self._s_aw = [l.aw for l in links]
        self._s_w = [l.w for l in links]
        self._s_r = [l.r for l in links]
        self._s_b = [l.b for l in links]
        self._m = m
        return [
            Process(self, "req", self._req_valid, self._req_ready,
                    ins=self._s_aw + self._s_w + self._s_ar, outs=[m.aw, m.w, m.ar]),
            Process(self, "rsp", self._rsp_valid, self._rsp_ready,
                    ins=[m.b, m.r], outs=self._s_b + self._s_r),
        ]

    def _req_valid(self):
        m = self._m
        shift = self.in_bits
        req = 0
        for i, ch in enumerate(self._s_ar):
            if ch.valid:
                req |= 1 << i
        g = self._ar_g = rr_grant(self.ar_arb, req)
        if g is not None:
            cmd = self._s_ar[g].payload
            m.ar.send(cmd._replace(id=(self.prefixes[g] << shift) | cmd.id))
        g = None
        if not self.w_grants.full:
            req = 0
            for i, ch in enumerate(self._s_aw):
                if ch.valid:
                    req |= 1 << i
            g = rr_grant(self.aw_arb, req)
            if g is not None:
                cmd = self._s_aw[g].payload
                m.aw.send(cmd._replace(id=(self.prefixes[g] << shift) | cmd.id))
        self._aw_g = g
        if self.w_grants.entries:
            w = self._s_w[self.w_grants.entries[0]]
            if w.valid:
                m.w.send(w.payload)

    def _req_ready(self):
        m = self._m
        g = self._ar_g
        for i, ch in enumerate(self._s_ar):
            ch.ready = i == g and m.ar.ready
        g = self._aw_g
        for i, ch in enumerate(self._s_aw):
            ch.ready = i == g and m.aw.ready
        h = self.w_grants.entries[0] if self.w_grants.entries else None
        for i, ch in enumerate(self._s_w):
            ch.ready = i == h and m.w.valid and m.w.ready

    def _rsp_valid(self):
        m = self._m
        mask = (1 << self.in_bits) - 1
        self._r_to = self._b_to = None
        if m.r.valid:
            beat = m.r.payload
            i = self._r_to = self.route[beat.id >> self.in_bits]
            self._s_r[i].send(beat._replace(id=beat.id & mask))
        if m.b.valid:
            beat = m.b.payload
            i = self._b_to = self.route[beat.id >> self.in_bits]
            self._s_b[i].send(beat._replace(id=beat.id & mask))

    def _rsp_ready(self):
        m = self._m
        if self._r_to is not None:
            m.r.ready = self._s_r[self._r_to].ready
        if self._b_to is not None:
            m.b.ready = self._s_b[self._b_to].ready

    def tick(self):
        m = self._m
        if self._ar_g is not None:
            self.ar_arb.update(self._ar_g, m.ar.ready)
        if self._aw_g is not None:
            fired = m.aw.ready
            self.aw_arb.update(self._aw_g, fired)
            push = self._aw_g if fired else None
        else:
            push = None
        if m.w.valid and m.w.ready and m.w.payload.last:
            self.w_grants.pop()
        if push is not None:
            self.w_grants.push(push)
        self._ar_g = self._aw_g = None


# ---------------------------------------------------------------------------
# Demultiplexer


class Demux(Component):
    """One slave port onto M master ports.

    ``select(cmd)`` returns the master port index for a command. All
    concurrent transactions with one ID and direction go to one port. While
    write data is still owed, further write commands may only go to the port
    that data goes to, so write data never has to interleave across ports.
    """

    def __init__(self, name, n_masters, data_bytes, id_bits, select, select_read=None, max_trans=8):
        super().__init__(name)
        self.n = n_masters
        self.select_w = select
        self.select_r = select_read or select
        self.state = DemuxState(id_bits, max_trans)
        self.slave = self.slave_port("s", data_bytes, id_bits)
        self.masters = [self.master_port(f"m{j}", data_bytes, id_bits) for j in range(n_masters)]
        self.w_sel = None  # master port owed write data
        self.w_owed = 0  # write bursts issued whose last data beat has not passed
        self.max_w = max_trans
        self.r_arb = RrArbiter(n_masters)
        self.b_arb = RrArbiter(n_masters)
        self.stalls = 0
        self.hold = False  # when set, no new command is offered
        self._offered = [False, False]  # per dir: a command is offered and waiting
        self._ar_t = self._aw_t = self._r_g = self._b_g = None
        self._r_hold = None

    def processes(self):
        s = self.slave.link
        ms = [p.link for p in self.masters]
        self._s = s
        self._m_ar = [l.ar for l in ms]
        self._m_aw = [l.aw for l in ms]
        self._m_w = [l.w for l in ms]
        self._m_r = [l.r for l in ms]
        self._m_b = [l.b for l in ms]
        return [
            Process(self, "req", self._req_valid, self._req_ready,
                    ins=[s.aw, s.w, s.ar], outs=self._m_aw + self._m_w + self._m_ar),
            Process(self, "rsp", self._rsp_valid, self._rsp_ready,
                    ins=self._m_b + self._m_r, outs=[s.b, s.r]),
        ]

    def _req_valid(self):
        s = self._s
        st = self.state
        self._ar_t = self._aw_t = None
        hold = self.hold
        if s.ar.valid and not (hold and not self._offered[Dir.READ]):
            cmd = s.ar.payload
            t = self.select_r(cmd)
            if st.admit(Dir.READ, cmd.id, t):
                self._ar_t = t
                self._m_ar[t].send(cmd)
            else:
                self.stalls += 1
        if s.aw.valid and self.w_owed < self.max_w and not (hold and not self._offered[Dir.WRITE]):
            cmd = s.aw.payload
            t = self.select_w(cmd)
            if self.w_sel not in (None, t):
                pass  # data for another port is still owed
            elif st.admit(Dir.WRITE, cmd.id, t):
                self._aw_t = t
                self._m_aw[t].send(cmd)
            else:
                self.stalls += 1
        if s.w.valid and self.w_sel is not None:
            self._m_w[self.w_sel].send(s.w.payload)

    def _req_ready(self):
        s = self._s
        if s.ar.valid:
            s.ar.ready = self._ar_t is not None and self._m_ar[self._ar_t].ready
            self._offered[Dir.READ] = self._ar_t is not None and not s.ar.ready
        if s.aw.valid:
            s.aw.ready = self._aw_t is not None and self._m_aw[self._aw_t].ready
            self._offered[Dir.WRITE] = self._aw_t is not None and not s.aw.ready
        if s.w.valid:
            s.w.ready = self.w_sel is not None and self._m_w[self.w_sel].ready

    def _rsp_valid(self):
        s = self._s
        req = 0
        if self._r_hold is not None:
            g = self._r_hold if self._m_r[self._r_hold].valid else None
        else:
            for j, ch in enumerate(self._m_r):
                if ch.valid:
                    req |= 1 << j
            g = rr_grant(self.r_arb, req)
        self._r_g = g
        if g is not None:
            s.r.send(self._m_r[g].payload)
        req = 0
        for j, ch in enumerate(self._m_b):
            if ch.valid:
                req |= 1 << j
        g = self._b_g = rr_grant(self.b_arb, req)
        if g is not None:
            s.b.send(self._m_b[g].payload)

    def _rsp_ready(self):
        s = self._s
        g = self._r_g
        for j, ch in enumerate(self._m_r):
            if ch.valid:
                ch.ready = j == g and s.r.ready
        g = self._b_g
        for j, ch in enumerate(self._m_b):
            if ch.valid:
                ch.ready = j == g and s.b.ready

    def quiet(self):
        """No command is offered downstream and none is left waiting."""
        return not any(self._offered)

    def tick(self):
        s = self._s
        st = self.state
        if self._ar_t is not None and s.ar.ready:
            st.issue(Dir.READ, s.ar.payload.id, self._ar_t)
        if self._aw_t is not None and s.aw.ready:
            st.issue(Dir.WRITE, s.aw.payload.id, self._aw_t)
            self.w_sel = self._aw_t
            self.w_owed += 1
        if s.w.valid and s.w.ready and s.w.payload.last:
            self.w_owed -= 1
            if not self.w_owed:
                self.w_sel = None
        if self._r_g is not None:
            fired = s.r.ready
            beat = s.r.payload
            if fired:
                if beat.last:
                    st.retire(Dir.READ, beat.id)
                    self._r_hold = None
                    self.r_arb.update(self._r_g, True)
                else:
                    self._r_hold = self._r_g
            else:
                self.r_arb.update(self._r_g, False)
        if self._b_g is not None:
            fired = s.b.ready
            if fired:
                st.retire(Dir.WRITE, s.b.payload.id)
            self.b_arb.update(self._b_g, fired)
        self._ar_t = self._aw_t = self._r_g = self._b_g = None


# ---------------------------------------------------------------------------
# Error slave


class ErrorSlave(Component):
    """Terminates every transaction with decode-error responses, one beat per cycle."""

    def __init__(self, name, data_bytes, id_bits, depth=4):
        super().__init__(name)
        self.slave = self.slave_port("s", data_bytes, id_bits)
        self.zero = bytes(data_bytes)
        self.reads = deque()  # [cmd, beats_left]
        self.writes = deque()  # commands awaiting data
        self.b_queue = deque()
        self.depth = depth
        self.w_seen = 0

    def processes(self):
        s = self.slave.link
        self._s = s
        return [
            Process(self, "in", ready=self._in_ready, ins=[s.aw, s.w, s.ar]),
            Process(self, "out", self._out_valid, outs=[s.b, s.r]),
        ]

    def _in_ready(self):
        s = self._s
        s.ar.ready = len(self.reads) < self.depth
        s.aw.ready = len(self.writes) < self.depth
        s.w.ready = bool(self.writes)

    def _out_valid(self):
        s = self._s
        if self.reads:
            cmd, left = self.reads[0]
            s.r.send(RBeat(cmd.id, self.zero, Resp.DECODE_ERROR, left == 1, cmd.tag))
        if self.b_queue:
            cmd = self.b_queue[0]
            s.b.send(BBeat(cmd.id, Resp.DECODE_ERROR, cmd.tag))

    def tick(self):
        s = self._s
        if s.r.valid and s.r.ready:
            entry = self.reads[0]
            entry[1] -= 1
            if not entry[1]:
                self.reads.popleft()
        if s.b.valid and s.b.ready:
            self.b_queue.popleft()
        if s.w.valid and s.w.ready and s.w.payload.last:
            self.b_queue.append(self.writes.popleft())
        if s.ar.valid and s.ar.ready:
            self.reads.append([s.ar.payload, s.ar.payload.len + 1])
        if s.aw.valid and s.aw.ready:
            self.writes.append(s.aw.payload)

    def busy(self):
        return bool(self.reads or self.b_queue)


# ---------------------------------------------------------------------------
# Crossbar and crosspoint


CHANNEL_ORDER = ("aw", "w", "b", "ar", "r")


@dataclass
class XbarConfig:
    slaves: int
    masters: int
    data_bytes: int = 8
    id_bits: int = 4
    addr_rules: AddrRule | Sequence[AddrRule] | None = None
    read_rules: AddrRule | Sequence[AddrRule] | None = None
    pipeline: Sequence[int] | dict = (0, 0, 0, 0, 0)
    connectivity: Sequence[Sequence[bool]] | None = None
    max_trans: int = 8
    max_w_trans: int = 8
    remap_budget: int | None = None
    remap_max_per_id: int = 8
    remap_max_total: int | None = None
    monitor_internal: bool = False

    def rule_for(self, i, read=False):
        rules = self.read_rules if read and self.read_rules is not None else self.addr_rules
        if rules is None:
            raise ConfigError("crossbar needs addr_rules")
        if isinstance(rules, AddrRule):
            return rules
        if len(rules) != self.slaves:
            raise ConfigError(f"need one address rule per slave port ({self.slaves}), got {len(rules)}")
        return rules[i]

    def connected(self, i, j):
        return self.connectivity is None or bool(self.connectivity[i][j])

    def stages(self, i, j):
        p = self.pipeline
        if isinstance(p, dict):
            p = p.get((i, j), p.get(f"{i},{j}", (0, 0, 0, 0, 0)))
        if isinstance(p, int):
            p = (p,) * 5
        p = tuple(int(x) for x in p)
        if len(p) != 5:
            raise ConfigError(f"pipeline needs five entries [aw,w,b,ar,r], got {p}")
        return p

    def validate(self):
        if self.slaves < 1 or self.masters < 1:
            raise ConfigError("crossbar needs at least one slave and one master port")
        if self.connectivity is not None:
            if len(self.connectivity) != self.slaves or any(len(r) != self.masters for r in self.connectivity):
                raise ConfigError(f"connectivity must be {self.slaves}x{self.masters}")
        for i in range(self.slaves):
            for read in (False, True):
                rule = self.rule_for(i, read)
                for _, _, port in rule.ranges:
                    if not 0 <= port < self.masters:
                        raise ConfigError(f"address rule targets master port {port} of {self.masters}")
                if rule.default is not None and not 0 <= rule.default < self.masters:
                    raise ConfigError(f"default port {rule.default} out of range")
        for i in range(self.slaves):
            for j in range(self.masters):
                self.stages(i, j)


class Crossbar(Component):
    """S demultiplexers feeding M multiplexers, optionally pipelined per connection."""

    def __init__(self, name, cfg: XbarConfig):
        super().__init__(name)
        cfg.validate()
        self.cfg = cfg
        S, M = cfg.slaves, cfg.masters
        self.prefix_bits = clog2(S)
        self.demuxes = []
        self.muxes = []
        self.pipes = []
        self.errors = []
        self._links = []
        mon = {"monitor": cfg.monitor_internal}
        columns = [[i for i in range(S) if cfg.connected(i, j)] for j in range(M)]
        for j, col in enumerate(columns):
            if not col:
                raise ConfigError(f"{name}: master port {j} has no connected slave port")
            self.muxes.append(Mux(f"{name}.mux{j}", len(col), cfg.data_bytes, cfg.id_bits,
                                  cfg.max_w_trans, prefixes=col, prefix_bits=self.prefix_bits))
        for i in range(S):
            targets = [j for j in range(M) if cfg.connected(i, j)]
            port_of = {j: k for k, j in enumerate(targets)}
            w_rule, r_rule = cfg.rule_for(i), cfg.rule_for(i, read=True)
            need_err = w_rule.default is None or r_rule.default is None or len(targets) < M
            err = len(targets) if need_err else None
            n_ports = len(targets) + (1 if need_err else 0)
            sel_w = self._selector(w_rule, port_of, err)
            sel_r = self._selector(r_rule, port_of, err)
            demux = Demux(f"{name}.demux{i}", n_ports, cfg.data_bytes, cfg.id_bits, sel_w, sel_r, cfg.max_trans)
            self.demuxes.append(demux)
            for j in targets:
                src = demux.masters[port_of[j]]
                dst = self.muxes[j].slaves[columns[j].index(i)]
                stages = cfg.stages(i, j)
                if any(stages):
                    pipe = LinkPipe(f"{name}.pipe{i}_{j}", cfg.data_bytes, cfg.id_bits, stages)
                    self.pipes.append(pipe)
                    self._links.append((src, pipe.s, mon))
                    self._links.append((pipe.m, dst, mon))
                else:
                    self._links.append((src, dst, mon))
            if need_err:
                es = ErrorSlave(f"{name}.err{i}", cfg.data_bytes, cfg.id_bits)
                self.errors.append(es)
                self._links.append((demux.masters[err], es.slave, mon))
        self.slaves = [d.slave for d in self.demuxes]
        self.masters = [m.master for m in self.muxes]
        self.ports = self.slaves + self.masters

    @staticmethod
    def _selector(rule, port_of, err):
        ranges = [(s, e, port_of.get(p, err)) for s, e, p in rule.ranges]
        default = err if rule.default is None else port_of.get(rule.default, err)

        def select(cmd):
            a = cmd.addr
            for s, e, p in ranges:
                if s <= a < e:
                    return p
            return default

        return select

    def port(self, name):
        kind, idx = name[0], int(name[1:])
        return (self.slaves if kind == "s" else self.masters)[idx]

    def parts(self):
        return [*self.demuxes, *self.pipes, *self.errors, *self.muxes]

    def internal_links(self):
        return self._links

    @property
    def master_id_bits(self):
        return self.cfg.id_bits + self.prefix_bits


def build_crossbar(cfg, name="xbar"):
    return Crossbar(name, cfg)


class Crosspoint(Component):
    """Crossbar whose master ports are narrowed back to the slave ID width by remappers."""

    def __init__(self, name, cfg: XbarConfig):
        super().__init__(name)
        from .idconv import IdRemapper

        budget = cfg.remap_budget if cfg.remap_budget is not None else 1 << cfg.id_bits
        if budget < 1:
            raise ConfigError(f"{name}: remap budget must be >= 1")
        if budget > 1 << cfg.id_bits:
            raise ConfigError(f"{name}: remap budget {budget} exceeds {1 << cfg.id_bits} output IDs")
        self.cfg = cfg
        self.xbar = Crossbar(f"{name}.xbar", cfg)
        mon = {"monitor": cfg.monitor_internal}
        self.remappers = []
        self._links = []
        for j, m in enumerate(self.xbar.masters):
            rm = IdRemapper(f"{name}.remap{j}", cfg.data_bytes, m.id_bits, cfg.id_bits,
                            unique_ids=budget, max_per_id=cfg.remap_max_per_id,
                            max_total=cfg.remap_max_total)
            self.remappers.append(rm)
            self._links.append((m, rm.slave, mon))
        self.slaves = self.xbar.slaves
        self.masters = [r.master for r in self.remappers]
        self.ports = self.slaves + self.masters

    port = Crossbar.port

    def parts(self):
        return [self.xbar, *self.remappers]

    def internal_links(self):
        return self._links


def build_crosspoint(cfg, name="xp"):
    return Crosspoint(name, cfg)
