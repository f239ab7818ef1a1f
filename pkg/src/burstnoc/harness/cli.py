"""``sim`` command line: run, validate and sweep topology files.

Exit codes: 0 ok, 1 protocol or data violations, 2 config error, 3 watchdog timeout.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from ..errors import ConfigError
from . import config
from .run import EXIT_CONFIG, EXIT_OK, run, write_metrics, write_trace, write_violations


def _load_doc(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    return config.parse(text)


def _summary(topo, res):
    m = res.metrics
    n = sum(m.latency.values())
    mean = sum(k * v for k, v in m.latency.items()) / n if n else 0.0
    lines = [
        f"topology {topo.name}: {len(topo.net.components)} components, {len(topo.net.links)} links",
        f"cycles {m.cycles} (drain {res.drain_cycles}), transactions {n}, mean latency {mean:.1f}",
        f"violations {len(res.violations)}" + (f", golden mismatches {len(res.mismatches)}" if res.checked else ""),
    ]
    return "\n".join(lines)


def _simulate(doc, base_dir, cycles, seed, watchdog, check, trace=False):
    topo = config.build(copy.deepcopy(doc), seed=seed, stop_at=cycles, base_dir=base_dir, strict=check)
    return topo, run(topo, cycles, seed=seed, watchdog=watchdog, check=check, trace=trace)


def cmd_run(args):
    doc = _load_doc(args.config)
    topo, res = _simulate(doc, Path(args.config).parent, args.cycles, args.seed, args.watchdog, args.check,
                          trace=args.trace_out is not None)
    if args.metrics_out:
        write_metrics(res.metrics, args.metrics_out, args.lat_bucket)
    if args.trace_out:
        write_trace(topo, args.trace_out)
    if args.violations_out:
        write_violations(res.violations, args.violations_out)
    print(_summary(topo, res))
    for v in res.violations[:20]:
        print(f"  {v.cycle},{v.link},{v.rule},{v.detail}", file=sys.stderr)
    for addr, want, got, where in res.mismatches[:5]:
        print(f"  mismatch at {addr:#x}: expected {want:#04x}, got {got:#04x} ({where})", file=sys.stderr)
    if res.timeout is not None:
        print(f"watchdog: {res.timeout}", file=sys.stderr)
        for k, v in list(res.timeout.dump.items())[:20]:
            print(f"  {k}: {v}", file=sys.stderr)
    return res.exit_code


def cmd_validate(args):
    doc = _load_doc(args.config)
    topo = config.build(doc, base_dir=Path(args.config).parent)
    net = topo.net
    print(f"{args.config}: ok, {len(net.components)} components, {len(net.links)} links, "
          f"{sum(l.checker is not None for l in net.links)} monitored")
    return EXIT_OK


def _parse_param(text):
    if "=" not in text:
        raise ConfigError(f"--param needs KEY=V1,V2,..., got {text!r}")
    key, vals = text.split("=", 1)
    return key.strip(), [yaml.safe_load(v) for v in vals.split(",")]


def _sweep_job(job):
    doc, base_dir, cycles, seed, watchdog, check = job
    try:
        _, res = _simulate(doc, base_dir, cycles, seed, watchdog, check)
    except ConfigError as e:
        return EXIT_CONFIG, str(e), 0, 0.0, 0.0
    m = res.metrics
    n = sum(m.latency.values())
    mean = sum(k * v for k, v in m.latency.items()) / n if n else 0.0
    data = sum(s.beats * m.widths[s.link] for s in m.links if s.channel in ("r", "w"))
    return res.exit_code, "", len(res.violations), data / max(m.cycles, 1), mean


def cmd_sweep(args):
    doc = _load_doc(args.config)
    params = [_parse_param(p) for p in args.param]
    keys = [k for k, _ in params]
    combos = list(itertools.product(*(v for _, v in params)))
    jobs = []
    for combo in combos:
        d = copy.deepcopy(doc)
        for k, v in zip(keys, combo):
            config.set_param(d, k, v)
        jobs.append((d, Path(args.config).parent, args.cycles, args.seed, args.watchdog, args.check))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    header = [*keys, "exit", "violations", "link_bytes_per_cycle", "mean_latency"]
    rows = [[*combo, r[0], r[2], f"{r[3]:.4f}", f"{r[4]:.2f}"] for combo, r in zip(combos, results)]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    for combo, r in zip(combos, results):
        if r[1]:
            print(f"{dict(zip(keys, combo))}: {r[1]}", file=sys.stderr)
    return max(r[0] for r in results) if results else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="sim", description="Cycle-accurate burst-protocol interconnect simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="topology file (YAML)")
        sp.add_argument("--cycles", type=int, default=10_000, help="injection cycles before draining")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--watchdog", type=int, default=10_000, help="drain horizon in cycles")
        sp.add_argument("--check", action="store_true", help="strict handshake checks and golden-memory check")

    r = sub.add_parser("run", help="simulate one topology")
    common(r)
    r.add_argument("--metrics-out", help="per-link CSV; the latency histogram goes next to it")
    r.add_argument("--trace-out", help="handshake trace CSV of monitored links")
    r.add_argument("--violations-out", help="violation records cycle,link,rule,detail")
    r.add_argument("--lat-bucket", type=int, default=1, help="latency histogram bucket width")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("validate", help="load and check a topology without simulating")
    v.add_argument("--config", required=True)
    v.set_defaults(fn=cmd_validate)

    s = sub.add_parser("sweep", help="run a topology over parameter values")
    common(s)
    s.add_argument("--param", action="append", required=True, help="KEY=V1,V2,... (dotted key into the document)")
    s.add_argument("--out", help="summary CSV (default stdout)")
    s.add_argument("--jobs", type=int, default=1, help="parallel simulations")
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
