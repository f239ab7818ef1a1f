"""Topology documents: parsing, validation and netlist construction.

A document is a YAML mapping::

    name: demo
    clock_mhz: 1000          # reporting only
    monitor: true            # default monitor flag of listed links
    components:
      gen: {type: master, width_bits: 64, id_bits: 4, traffic: {kind: random, regions: [[0, 0x1000]]}}
      mem: {type: mem_simplex, width_bits: 64, id_bits: 4, bytes: 0x1000}
    links:
      - gen.m -> mem.s
      - {from: gen.m, to: mem.s, monitor: false}

Instead of ``components``/``links`` a document may name a ``preset`` (a
Python builder returning such a mapping) plus its ``params``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..dma import DmaEngine
from ..errors import ConfigError
from ..idconv import IdRemapper, IdSerializer
from ..junctions import AddrRule, Crossbar, Crosspoint, ErrorSlave, XbarConfig
from ..kernel import LinkPipe, Netlist
from ..llc import CacheGeometry, Llc
from ..memory import MemoryController
from ..protocol import Dir
from ..widthconv import Downsizer, Upsizer
from .drivers import DmaNode
from .traffic import (
    DmaTransfers,
    GoldenMemory,
    MixTraffic,
    PermutationTraffic,
    RandomTraffic,
    SequentialTraffic,
    TraceReplay,
    TrafficMaster,
    parse_trace,
)


@dataclass
class Topology:
    """A built netlist plus the handles the runner needs."""

    name: str
    net: Netlist
    doc: dict
    components: dict = field(default_factory=dict)
    masters: list = field(default_factory=list)  # TrafficMaster instances
    dmas: list = field(default_factory=list)  # DrivenDma instances
    memories: list = field(default_factory=list)
    golden: GoldenMemory = field(default_factory=GoldenMemory)
    clock_mhz: float = 1000.0
    preloads: list = field(default_factory=list)  # (addr, bytes)


class _Params:
    """Read typed keys from a mapping, reporting the full key path on error."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError(f"expected a mapping, got {type(data).__name__}", path)
        self.data = data
        self.path = path
        self.used = {"type"}

    def _get(self, key, default, required):
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required key '{key}'", self.path)
            return default
        self.used.add(key)
        return self.data[key]

    def int(self, key, default=None, required=False, lo=None, hi=None):
        v = self._get(key, default, required)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"'{key}' must be an integer, got {v!r}", f"{self.path}.{key}")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ConfigError(f"'{key}' = {v} outside [{lo}, {hi}]", f"{self.path}.{key}")
        return v

    def num(self, key, default=None):
        v = self._get(key, default, False)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {v!r}", f"{self.path}.{key}")
        return float(v)

    def bool(self, key, default=False):
        v = self._get(key, default, False)
        if not isinstance(v, bool):
            raise ConfigError(f"'{key}' must be true or false, got {v!r}", f"{self.path}.{key}")
        return v

    def width(self, key="width_bits", required=True):
        bits = self.int(key, required=required)
        if bits is None:
            return None
        if bits < 8 or bits % 8 or bits & (bits - 1):
            raise ConfigError(f"'{key}' must be a power-of-two multiple of 8, got {bits}", f"{self.path}.{key}")
        return bits // 8

    def raw(self, key, default=None, required=False):
        return self._get(key, default, required)

    def sub(self, key, required=False):
        v = self._get(key, None, required)
        return None if v is None else _Params(v, f"{self.path}.{key}")

    def finish(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigError(f"unknown key(s) {', '.join(unknown)}", self.path)


def _regions(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError("need a non-empty list of [base, size] regions", path)
    out = []
    for i, r in enumerate(v):
        if not (isinstance(r, (list, tuple)) and len(r) == 2 and all(isinstance(x, int) for x in r) and r[1] > 0):
            raise ConfigError(f"region must be [base, size] with size > 0, got {r!r}", f"{path}[{i}]")
        out.append((r[0], r[1]))
    return out


def _region(v, path):
    return _regions([v], path)[0]


def _dir(v, path):
    if v in ("read", "r"):
        return Dir.READ
    if v in ("write", "w"):
        return Dir.WRITE
    raise ConfigError(f"direction must be read or write, got {v!r}", path)


def _trace(p, base_dir):
    text = p.raw("records")
    fname = p.raw("file")
    if (text is None) == (fname is None):
        raise ConfigError("trace_replay needs exactly one of 'records' or 'file'", p.path)
    if fname is not None:
        path = Path(base_dir or ".") / fname
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read trace {path}: {e.strerror}", f"{p.path}.file") from None
    elif isinstance(text, list):
        text = "\n".join(text)
    try:
        return parse_trace(text)
    except ConfigError as e:
        raise ConfigError(str(e), p.path) from None


def build_traffic(p: _Params, W, base_dir=None):
    """Generator for a traffic master from its ``traffic`` mapping."""
    kind = p.raw("kind", required=True)
    if kind == "random":
        g = RandomTraffic(
            _regions(p.raw("regions", required=True), f"{p.path}.regions"), W,
            read_ratio=p.num("read_ratio", 0.5), max_beats=p.int("max_beats", 16, lo=1, hi=256),
            rate=p.num("rate", 1.0), ids=p.int("ids", 4, lo=1), aligned=p.bool("aligned", False),
            count=p.int("count", None, lo=0), modifiable=p.bool("modifiable", True),
            sizes=tuple(p.raw("sizes", [W])),
        )
    elif kind == "sequential":
        g = SequentialTraffic(p.int("base", required=True), p.int("span", required=True, lo=1), W,
                              _dir(p.raw("dir", "read"), f"{p.path}.dir"), p.int("beats", 16, lo=1, hi=256),
                              p.int("id", 0, lo=0), p.int("count", None, lo=0))
    elif kind == "permutation":
        g = PermutationTraffic(_regions(p.raw("regions", required=True), f"{p.path}.regions"),
                               p.int("index", required=True, lo=0), W, p.int("shift", 1),
                               _dir(p.raw("dir", "read"), f"{p.path}.dir"), p.int("beats", 16, lo=1, hi=256),
                               p.int("count", None, lo=0))
    elif kind == "trace_replay":
        g = TraceReplay(_trace(p, base_dir), W)
    elif kind == "mix":
        parts = p.raw("parts", required=True)
        if not isinstance(parts, list) or not parts:
            raise ConfigError("'parts' must be a non-empty list", f"{p.path}.parts")
        g = MixTraffic(build_traffic(_Params(x, f"{p.path}.parts[{i}]"), W, base_dir) for i, x in enumerate(parts))
    else:
        raise ConfigError(f"unknown traffic kind {kind!r}", f"{p.path}.kind")
    p.used.add("kind")
    p.finish()
    if isinstance(g, RandomTraffic) and any(s > W or s & (s - 1) for s in g.sizes):
        raise ConfigError(f"burst sizes {g.sizes} must be powers of two <= {W}", f"{p.path}.sizes")
    return g


def build_transfers(p: _Params, base_dir=None):
    """Transfer source for a DMA engine."""
    kind = p.raw("kind", required=True)
    if kind == "dma_transfers":
        src = _region(p.raw("src", required=True), f"{p.path}.src")
        dst = _region(p.raw("dst", required=True), f"{p.path}.dst")
        g = DmaTransfers(src, dst, p.int("count", 100, lo=0), p.int("min_len", 1, lo=1), p.int("max_len", 4096, lo=1))
    elif kind == "trace_replay":
        g = TraceReplay(_trace(p, base_dir))
    else:
        raise ConfigError(f"DMA traffic kind must be dma_transfers or trace_replay, got {kind!r}", f"{p.path}.kind")
    p.finish()
    return g


def _addr_rules(v, fallback, path):
    if v is None:
        return AddrRule([], default=fallback)
    if not isinstance(v, list):
        raise ConfigError("addr_rules must be a list of [start, end, port]", path)
    ranges = []
    for i, r in enumerate(v):
        if not (isinstance(r, (list, tuple)) and len(r) == 3 and all(isinstance(x, int) for x in r)):
            raise ConfigError(f"rule must be [start, end, port], got {r!r}", f"{path}[{i}]")
        ranges.append(tuple(r))
    try:
        return AddrRule(ranges, default=fallback)
    except ConfigError as e:
        raise ConfigError(str(e), path) from None


def _pipeline(v, path):
    if isinstance(v, int) and not isinstance(v, bool):
        return (v,) * 5
    if isinstance(v, list) and len(v) == 5 and all(isinstance(x, int) and x >= 0 for x in v):
        return tuple(v)
    if isinstance(v, dict):
        out = {}
        for k, x in v.items():
            out[k] = _pipeline(x, f"{path}.{k}")
        return out
    raise ConfigError("pipeline must be an int, [aw,w,b,ar,r] or a per-connection mapping", path)


class _Builder:
    def __init__(self, topo: Topology, seed, stop_at, base_dir):
        self.topo = topo
        self.seed = seed
        self.stop_at = stop_at
        self.base_dir = base_dir
        self.n_gen = 0

    def build(self, name, p: _Params):
        kind = p.raw("type", required=True)
        fn = getattr(self, "_" + str(kind), None)
        if fn is None:
            raise ConfigError(f"unknown component type {kind!r}", f"{p.path}.type")
        comp = fn(name, p)
        p.finish()
        return comp

    def _gen_seed(self):
        self.n_gen += 1
        return self.seed * 1_000_003 + self.n_gen

    def _master(self, name, p):
        W = p.width()
        t = p.sub("traffic", required=True)
        gen = build_traffic(t, W, self.base_dir)
        m = TrafficMaster(name, W, p.int("id_bits", 4, lo=0, hi=32), gen, self.topo.golden, seed=self._gen_seed(),
                          max_outstanding=p.int("max_outstanding", 8, lo=1),
                          max_per_id=p.int("max_per_id", None, lo=1), stop_at=self.stop_at,
                          expect_errors=p.bool("expect_errors", False))
        self.topo.masters.append(m)
        return m

    def _dma(self, name, p):
        W = p.width()
        t = p.sub("traffic", required=True)
        src = build_transfers(t, self.base_dir)
        node = DmaNode(name, W, p.int("id_bits", 4, lo=0, hi=32), src, seed=self._gen_seed(), stop_at=self.stop_at,
                       max_outstanding=p.int("max_outstanding", 8, lo=1),
                       buffer_beats=p.int("buffer_beats", 16, lo=2), id=p.int("id", 0, lo=0))
        self.topo.dmas.append(node.engine)
        if isinstance(src, DmaTransfers):
            self.topo.preloads.append(src.src)
        return node

    def _xbar_cfg(self, p):
        S = p.int("slaves", required=True, lo=1)
        M = p.int("masters", required=True, lo=1)
        fallback = p.int("fallback", None, lo=0, hi=M - 1)
        rules = _addr_rules(p.raw("addr_rules"), fallback, f"{p.path}.addr_rules")
        conn = p.raw("connectivity")
        if conn is not None and not (isinstance(conn, list) and all(isinstance(r, list) for r in conn)):
            raise ConfigError("connectivity must be an S x M matrix of 0/1", f"{p.path}.connectivity")
        return XbarConfig(
            S, M, data_bytes=p.width(), id_bits=p.int("id_bits", 4, lo=0, hi=24), addr_rules=rules,
            pipeline=_pipeline(p.raw("pipeline", 0), f"{p.path}.pipeline"), connectivity=conn,
            max_trans=p.int("max_trans", 8, lo=1), max_w_trans=p.int("max_w_trans", 8, lo=1),
            remap_budget=p.int("remap_budget", None, lo=1), remap_max_per_id=p.int("remap_max_per_id", 8, lo=1),
            remap_max_total=p.int("remap_max_total", None, lo=1),
            monitor_internal=p.bool("monitor_internal", False),
        )

    def _xbar(self, name, p):
        return Crossbar(name, self._xbar_cfg(p))

    def _xp(self, name, p):
        return Crosspoint(name, self._xbar_cfg(p))

    def _remap(self, name, p):
        return IdRemapper(name, p.width(), p.int("in_id_bits", required=True, lo=0),
                          p.int("out_id_bits", required=True, lo=0), unique_ids=p.int("unique_ids", None, lo=1),
                          max_per_id=p.int("max_per_id", 8, lo=1), max_total=p.int("max_total", None, lo=1))

    def _serialize(self, name, p):
        return IdSerializer(name, p.width(), p.int("in_id_bits", required=True, lo=0),
                            p.int("out_id_bits", required=True, lo=0), max_per_id=p.int("max_per_id", 8, lo=1))

    def _upsize(self, name, p):
        return Upsizer(name, p.width("narrow_bits"), p.width("wide_bits"), p.int("id_bits", 4, lo=0),
                       read_slots=p.int("read_slots", 2, lo=1), max_writes=p.int("max_writes", 8, lo=1))

    def _downsize(self, name, p):
        return Downsizer(name, p.width("wide_bits"), p.width("narrow_bits"), p.int("id_bits", 4, lo=0),
                         max_writes=p.int("max_writes", 8, lo=1))

    def _mem(self, name, p, duplex):
        mem = MemoryController(
            name, p.width(), p.int("id_bits", 4, lo=0), banks=p.int("banks", 2 if duplex else 1, lo=1),
            duplex=duplex, base=p.int("base", 0, lo=0), size=p.int("bytes", None, lo=1),
            latency=p.int("latency", 1, lo=1), prioritize_writes=p.bool("prioritize_writes", False),
            max_reads=p.int("max_reads", 8, lo=1), max_writes=p.int("max_writes", 8, lo=1),
        )
        self.topo.memories.append(mem)
        return mem

    def _mem_simplex(self, name, p):
        return self._mem(name, p, False)

    def _mem_duplex(self, name, p):
        return self._mem(name, p, True)

    def _llc(self, name, p):
        geo = CacheGeometry(p.int("ways", 4, lo=1), p.int("lines", 64, lo=1), p.int("blocks_per_line", 16, lo=1),
                            p.int("block_bytes", 8, lo=1))
        return Llc(name, geo, p.int("id_bits", 4, lo=0), spm_mask=p.int("spm_mask", 0, lo=0),
                   spm_base=p.int("spm_base", 0, lo=0), seed=self.seed + 1)

    def _pipe(self, name, p):
        st = _pipeline(p.raw("stages", 1), f"{p.path}.stages")
        if isinstance(st, dict):
            raise ConfigError("pipe stages must be an int or [aw,w,b,ar,r]", f"{p.path}.stages")
        return LinkPipe(name, p.width(), p.int("id_bits", 4, lo=0), st)

    def _error(self, name, p):
        return ErrorSlave(name, p.width(), p.int("id_bits", 4, lo=0))


def _find_port(comp, pname):
    getter = getattr(comp, "port", None)
    if callable(getter):
        try:
            return getter(pname)
        except (KeyError, IndexError, ValueError):
            pass
    for port in getattr(comp, "ports", ()):
        if port.name == pname:
            return port
    return None


def _endpoint(topo, ref, path):
    if not isinstance(ref, str) or "." not in ref:
        raise ConfigError(f"port reference must be 'component.port', got {ref!r}", path)
    cname, pname = ref.rsplit(".", 1)
    comp = topo.components.get(cname)
    if comp is None:
        raise ConfigError(f"unknown component {cname!r}", path)
    port = _find_port(comp, pname)
    if port is None:
        names = [p.name for p in getattr(comp, "ports", ())]
        raise ConfigError(f"component {cname!r} has no port {pname!r} (ports: {', '.join(names) or '?'})", path)
    return port


def _parse_link(item, default_monitor, path):
    if isinstance(item, str):
        if "->" not in item:
            raise ConfigError("link string must look like 'a.m -> b.s'", path)
        src, dst = (x.strip() for x in item.split("->", 1))
        return src, dst, default_monitor, None
    if isinstance(item, dict):
        extra = set(item) - {"from", "to", "monitor", "name"}
        if extra:
            raise ConfigError(f"unknown key(s) {', '.join(sorted(extra))}", path)
        if "from" not in item or "to" not in item:
            raise ConfigError("link needs 'from' and 'to'", path)
        mon = item.get("monitor", default_monitor)
        if not isinstance(mon, bool):
            raise ConfigError("'monitor' must be true or false", f"{path}.monitor")
        return item["from"], item["to"], mon, item.get("name")
    raise ConfigError("link must be a string or a mapping", path)


def expand(doc):
    """Resolve a ``preset`` document into explicit ``components``/``links``."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping")
    if "preset" not in doc:
        return doc
    from . import presets

    name = doc["preset"]
    fn = presets.PRESETS.get(name)
    if fn is None:
        raise ConfigError(f"unknown preset {name!r} (known: {', '.join(sorted(presets.PRESETS))})", "preset")
    params = doc.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping", "params")
    out = fn(**_preset_kwargs(fn, params))
    for k in ("name", "clock_mhz", "monitor"):
        if k in doc:
            out[k] = doc[k]
    return out


def _preset_kwargs(fn, params):
    import inspect

    sig = inspect.signature(fn)
    for k in params:
        if k not in sig.parameters:
            raise ConfigError(f"preset has no parameter {k!r}", f"params.{k}")
    return params


def parse(text):
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"not a valid YAML document: {e}") from None
    return doc


def build(doc, seed=0, stop_at=None, base_dir=None, strict=False) -> Topology:
    """Construct and elaborate the netlist of a topology document."""
    doc = expand(doc)
    allowed = {"name", "clock_mhz", "monitor", "components", "links", "description"}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown top-level key(s) {', '.join(sorted(extra))}")
    comps = doc.get("components")
    links = doc.get("links", [])
    if not isinstance(comps, dict) or not comps:
        raise ConfigError("need a non-empty 'components' mapping", "components")
    if not isinstance(links, list):
        raise ConfigError("'links' must be a list", "links")
    clock = doc.get("clock_mhz", 1000)
    if isinstance(clock, bool) or not isinstance(clock, (int, float)) or clock <= 0:
        raise ConfigError("clock_mhz must be a positive number", "clock_mhz")
    monitor = doc.get("monitor", True)
    if not isinstance(monitor, bool):
        raise ConfigError("'monitor' must be true or false", "monitor")
    net = Netlist(str(doc.get("name", "top")), strict=strict)
    topo = Topology(net.name, net, doc, clock_mhz=float(clock))
    b = _Builder(topo, seed, stop_at, base_dir)
    for name, spec in comps.items():
        path = f"components.{name}"
        if not isinstance(name, str) or "." in name:
            raise ConfigError("component names must be strings without '.'", path)
        try:
            comp = b.build(name, _Params(spec, path))
        except ConfigError as e:
            raise ConfigError(e.message, e.path or path) from None
        topo.components[name] = comp
        net.add(comp)
    for i, item in enumerate(links):
        path = f"links[{i}]"
        src, dst, mon, lname = _parse_link(item, monitor, path)
        m = _endpoint(topo, src, path)
        s = _endpoint(topo, dst, path)
        try:
            net.connect(m, s, name=lname or f"{src}->{dst}", monitor=mon)
        except ConfigError as e:
            raise ConfigError(e.message, path) from None
    net.elaborate()
    return topo


def load_topology(text, seed=0, stop_at=None, base_dir=None, strict=False) -> Topology:
    """Parse, validate and build a topology document given as text."""
    return build(parse(text), seed=seed, stop_at=stop_at, base_dir=base_dir, strict=strict)


def load_file(path, **kw) -> Topology:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    return load_topology(text, base_dir=path.parent, **kw)


def set_param(doc, key, value):
    """Set a dotted ``key`` in a document (creating mappings as needed); used by sweeps."""
    parts = key.split(".")
    cur = doc
    for k in parts[:-1]:
        if isinstance(cur, list):
            cur = cur[int(k)]
            continue
        if k not in cur or cur[k] is None:
            cur[k] = {}
        cur = cur[k]
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value
    return doc


__all__ = ["Topology", "build", "build_traffic", "build_transfers", "expand", "load_file", "load_topology", "parse",
           "set_param", "DmaEngine"]
