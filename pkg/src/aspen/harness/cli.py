"""Command line entry point (installed as ``aspen``).

Log verbosity follows the ``ASPEN_LOG_LEVEL`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""
from __future__ import annotations

import argparse
import asyncio
import dataclasses
import logging
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from aspen.harness.checker import check_trace
from aspen.harness.trace import read_trace

log = logging.getLogger("aspen")

LOG_ENV = "ASPEN_LOG_LEVEL"


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def merge_traces(paths: Sequence[str | Path]) -> tuple[dict, list[dict]]:
    header: Optional[dict] = None
    events: list[dict] = []
    for path in paths:
        h, evs = read_trace(path)
        if header is None:
            header = dict(h)
        elif (h["n"], h["f"], h["p"]) != (header["n"], header["f"], header["p"]):
            raise ValueError(f"{path}: trace header disagrees with {paths[0]}")
        else:
            header["byzantine"] = sorted(set(header.get("byzantine", [])) | set(h.get("byzantine", [])))
        events.extend(evs)
    if header is None:
        raise ValueError("no trace files given")
    events.sort(key=lambda ev: ev.get("t", 0))
    return header, events


def cmd_run_sim(args: argparse.Namespace) -> int:
    from aspen.harness.runner import run_scenario
    from aspen.simnet.scenario import load_scenario

    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn.seed = args.seed
    out = Path(args.out) if args.out else Path(f"{scn.name}-out")
    started = time.perf_counter()
    result = run_scenario(scn, out)
    s = result.summary
    print(f"{scn.name}: seed={scn.seed} committed={s.committed}/{result.submitted} "
          f"fast={s.fast_path_proportion:.3f} repairs={s.repair_rounds} aligns={s.align_total} "
          f"fast_median_ms={s.fast_median_ms} ({time.perf_counter() - started:.2f}s wall)")
    print(result.report.summary())
    print(f"metrics digest {result.digest()}")
    print(f"wrote {out}/trace.jsonl, metrics.csv, summary.csv")
    if not result.ok:
        first = result.report.violations[0]
        lines = list(result.cluster.trace.lines())
        print(f"counterexample excerpt (trace.jsonl around line {first.line}):")
        for no in range(max(2, first.line - 5), min(len(lines), first.line + 2) + 1):
            print(f"  {no:>6} {lines[no - 1]}")
        return 1
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    header, events = merge_traces(args.trace)
    report = check_trace(header, events)
    print(report.summary())
    return 0 if report.ok else 1


def cmd_run_cluster(args: argparse.Namespace) -> int:
    from aspen.harness.cluster import load_cluster_config, run_node

    cc = load_cluster_config(args.config)
    return asyncio.run(run_node(cc, args.role, args.id, args.duration))


def cmd_bench(args: argparse.Namespace) -> int:
    from aspen.harness.cluster import load_cluster_config, write_cluster_config
    from aspen.harness.metrics import request_records

    cc = load_cluster_config(args.config)
    requests = max(1, int(args.rate * args.duration))
    cc.workload = dataclasses.replace(cc.workload, mode="open", rate=args.rate, requests=requests)
    if args.trace_dir:
        cc.trace_dir = Path(args.trace_dir).resolve()
    cc.trace_dir.mkdir(parents=True, exist_ok=True)
    for old in cc.trace_dir.glob("*.jsonl"):
        old.unlink()
    run_cfg = cc.trace_dir / "bench.ini"
    write_cluster_config(run_cfg, cc)
    grace = args.grace
    base = [sys.executable, "-m", "aspen.harness.cli", "run-cluster", "--config", str(run_cfg)]
    servers = []
    for r in range(cc.cluster.n):
        servers.append(subprocess.Popen(base + ["--role", "replica", "--id", str(r),
                                                "--duration", str(args.duration + 2 * grace)]))
    for p in cc.proxies:
        servers.append(subprocess.Popen(base + ["--role", "proxy", "--id", str(p),
                                                "--duration", str(args.duration + 2 * grace)]))
    time.sleep(0.5)
    clients = [subprocess.Popen(base + ["--role", "client", "--id", str(c),
                                        "--duration", str(args.duration + grace)])
               for c in cc.clients]
    client_codes = [c.wait() for c in clients]
    for proc in servers:
        proc.terminate()
    for proc in servers:
        proc.wait()
    header, events = merge_traces(sorted(cc.trace_dir.glob("*.jsonl")))
    report = check_trace(header, events)
    rows = request_records(events)
    fast = [r for r in rows if r.path == "FAST"]
    lat = sorted(r.latency_us for r in rows)
    median = lat[len(lat) // 2] / 1000 if lat else 0.0
    print(f"bench: {len(rows)}/{requests * len(cc.clients)} committed, "
          f"fast={len(fast) / len(rows) if rows else 0:.3f}, median latency {median:.2f} ms, "
          f"throughput {len(rows) / args.duration:.1f} req/s")
    print(report.summary())
    return 0 if report.ok and all(code == 0 for code in client_codes) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aspen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-sim", help="run a simulated scenario and check its trace")
    p.add_argument("scenario", help="scenario INI file")
    p.add_argument("--out", help="output directory (default <scenario>-out)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(fn=cmd_run_sim)

    p = sub.add_parser("check", help="run the safety checker over one or more trace files")
    p.add_argument("trace", nargs="+")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("run-cluster", help="run one node of a real cluster over TCP")
    p.add_argument("--role", required=True, choices=["replica", "proxy", "client"])
    p.add_argument("--id", required=True, type=int)
    p.add_argument("--config", required=True)
    p.add_argument("--duration", type=float, help="seconds to run (default: forever; clients stop when done)")
    p.set_defaults(fn=cmd_run_cluster)

    p = sub.add_parser("bench", help="spawn a local cluster, drive open-loop load, check the traces")
    p.add_argument("--config", required=True)
    p.add_argument("--rate", type=float, required=True, help="requests per second per client")
    p.add_argument("--duration", type=float, required=True, help="seconds of load")
    p.add_argument("--grace", type=float, default=3.0, help="extra seconds for stragglers")
    p.add_argument("--trace-dir", help="where node traces go (default from config)")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
