"""Build a simulated cluster from a scenario, run it, and evaluate the run."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from aspen.app import APPS, get, put
from aspen.client import Client
from aspen.core.config import ms_to_us
from aspen.core.crypto import make_crypto
from aspen.core.messages import client_node, proxy_node, replica_node
from aspen.harness.checker import CheckReport, check_trace
from aspen.harness.metrics import (
    RequestRecord,
    RunSummary,
    csv_digest,
    request_records,
    requests_csv,
    summarize,
    summary_csv,
    write_csv,
)
from aspen.harness.trace import TraceRecorder
from aspen.replica.engine import Replica
from aspen.sequencer import Proxy
from aspen.simnet.faults import faulty_replicas, install_faults
from aspen.simnet.scenario import Scenario
from aspen.simnet.sim import ClockSkew, Simulator

log = logging.getLogger(__name__)


def op_factory(app: str, c: int) -> Callable[[int], bytes]:
    if app == "counter":
        return lambda i: b"INC"
    if app == "kv":
        def kv_op(i: int) -> bytes:
            key = f"k{(c + i) % 8}".encode()
            return put(key, f"{c}:{i}".encode()) if i % 2 == 0 else get(key)
        return kv_op
    raise ValueError(f"unknown application {app!r}")


@dataclass
class Cluster:
    sim: Simulator
    replicas: list[Replica]
    proxies: list[Proxy]
    clients: list[Client]
    trace: TraceRecorder
    byzantine: set[str]

    def force_repair(self) -> None:
        for rep in self.replicas:
            if rep.node not in self.sim.crashed:
                rep.force_repair()


def build_cluster(scn: Scenario) -> Cluster:
    cfg = scn.cluster
    wl = scn.workload
    byz, crashed = faulty_replicas(scn.faults)
    trace = TraceRecorder({
        "n": cfg.n, "f": cfg.f, "p": cfg.p, "byzantine": sorted(byz), "crash_targets": sorted(crashed),
        "scenario": scn.name, "seed": scn.seed,
    })
    sim = Simulator(scn.seed, scn.default_link, ms_to_us(scn.gst_ms), trace, scn.trace_messages)
    for pattern, model in scn.links:
        sim.set_link(pattern, model)
    nodes = ([replica_node(r) for r in range(cfg.n)] + [proxy_node(p) for p in range(wl.proxies)]
             + [client_node(c) for c in range(wl.clients)])
    crypto = make_crypto(cfg.crypto, f"sim-{scn.seed}", nodes)
    app_factory = APPS[scn.app]
    replicas = []
    for r in range(cfg.n):
        rep = Replica(r, cfg, crypto, sim.env(replica_node(r)), app_factory)
        sim.add_node(rep.node, rep, _skew(scn, rep.node))
        replicas.append(rep)
    proxies = []
    for p in range(wl.proxies):
        px = Proxy(p, cfg, crypto, sim.env(proxy_node(p)))
        sim.add_node(px.node, px, _skew(scn, px.node))
        proxies.append(px)
    clients = []
    for c in range(wl.clients):
        # each client prefers its co-located proxy and fails over round-robin
        order = [(c + k) % wl.proxies for k in range(wl.proxies)]
        cl = Client(c, cfg, crypto, sim.env(client_node(c)), order)
        sim.add_node(cl.node, cl, _skew(scn, cl.node))
        clients.append(cl)
    cluster = Cluster(sim, replicas, proxies, clients, trace, byz)
    install_faults(sim, scn.faults, cluster.force_repair)
    return cluster


def _skew(scn: Scenario, node: str) -> ClockSkew:
    return scn.skews.get(node, ClockSkew())


@dataclass
class RunResult:
    scenario: Scenario
    cluster: Cluster
    records: list[RequestRecord]
    summary: RunSummary
    report: CheckReport
    submitted: int
    end_us: int

    @property
    def ok(self) -> bool:
        return self.report.ok

    def metrics_csv(self) -> str:
        return requests_csv(self.records)

    def summary_csv(self) -> str:
        return summary_csv([self.summary])

    def digest(self) -> str:
        return csv_digest(self.metrics_csv(), self.summary_csv())

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.cluster.trace.write(out / "trace.jsonl")
        write_csv(out / "metrics.csv", self.metrics_csv())
        write_csv(out / "summary.csv", self.summary_csv())


def run_scenario(scn: Scenario, out_dir: Optional[str | Path] = None,
                 setup: Optional[Callable[[Cluster], None]] = None) -> RunResult:
    """Run ``scn`` to completion. ``setup`` may install extra interceptors first."""
    cluster = build_cluster(scn)
    if setup is not None:
        setup(cluster)
    sim, wl = cluster.sim, scn.workload
    total = wl.clients * wl.requests
    delivered = [0]

    def count(_client: Client, _delivery) -> None:
        delivered[0] += 1

    start = ms_to_us(wl.start_ms)
    for rep in cluster.replicas:
        rep.start()
    for px in cluster.proxies:
        px.start()
    for cl in cluster.clients:
        cl.on_deliver = count
        ops = op_factory(scn.app, cl.c)
        if wl.mode == "closed":
            sim.schedule(start, cl.run_closed_loop, wl.requests, ops, wl.outstanding)
        else:
            sim.schedule(start, cl.run_open_loop, wl.requests, ops, wl.rate)

    horizon = ms_to_us(scn.max_time_ms)
    sim.run_until(horizon, stop=lambda: delivered[0] >= total)
    sim.run_until(min(horizon, sim.t + ms_to_us(scn.drain_ms)))

    header = cluster.trace.header
    report = check_trace(header, cluster.trace.events)
    records = request_records(cluster.trace.events)
    correct = [r.r for r in cluster.replicas if r.node not in cluster.byzantine]
    evidence = sum(len(c.byzantine_evidence) for c in cluster.clients)
    summary = summarize(scn.name, scn.seed, scn.cluster, sum(c.next_s for c in cluster.clients),
                        records, [r.status() for r in cluster.replicas], evidence, report.ok, correct)
    result = RunResult(scn, cluster, records, summary, report, total, sim.t)
    if out_dir is not None:
        result.write(out_dir)
    log.info("%s seed=%d: %s", scn.name, scn.seed, report.summary())
    return result
