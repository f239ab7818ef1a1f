"""DMA engines fed by a transfer source, packaged behind one master port."""

from __future__ import annotations

import random

from ..dma import DmaEngine, PortJoin
from ..kernel import Component


class DrivenDma(DmaEngine):
    """DMA engine that pulls transfers from ``source`` while its queue is short."""

    def __init__(self, name, data_bytes, id_bits, source, seed=0, stop_at=None, queue=2, **kw):
        super().__init__(name, data_bytes, id_bits, **kw)
        self.source = source
        self.rng = random.Random(seed)
        self.stop_at = stop_at
        self.queue = queue
        self.keys: dict[int, object] = {}
        self.copies: list[tuple[int, int, int]] = []  # completed (src, dst, len)

    def _feeding(self):
        return not self.source.done and (self.stop_at is None or self.net.cycle < self.stop_at)

    def tick(self):
        super().tick()
        if self._feeding() and len(self.transfers) < self.queue:
            nxt = self.source.next_transfer(self.net.cycle, self.rng)
            if nxt is not None:
                key, src, dst, n = nxt
                self.keys[self.submit(src, dst, n)] = key

    def on_transfer_done(self, serial, t):
        self.copies.append((t.src, t.dst, t.len))
        self.source.on_done(self.keys.pop(serial), self.net.cycle)

    def busy(self):
        return self._feeding() or super().busy()


class DmaNode(Component):
    """A driven DMA engine whose read and write ports are joined into master port ``m``."""

    def __init__(self, name, data_bytes, id_bits, source, **kw):
        super().__init__(name)
        self.engine = DrivenDma(f"{name}.engine", data_bytes, id_bits, source, **kw)
        self.join = PortJoin(f"{name}.join", data_bytes, id_bits)
        self.master = self.join.master
        self.ports = [self.master]

    def port(self, name):
        if name != "m":
            raise KeyError(name)
        return self.master

    def parts(self):
        return [self.engine, self.join]

    def internal_links(self):
        return [
            (self.engine.rd, self.join.rd, {"monitor": False}),
            (self.engine.wr, self.join.wr, {"monitor": False}),
        ]
