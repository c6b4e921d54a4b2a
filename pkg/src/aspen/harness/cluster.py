"""Real-socket runtime: the same protocol objects over TCP with a wall clock.

Frames are a 4-byte big-endian length followed by the canonical wire
encoding of one message. Each process hosts exactly one node and writes its
own trace file; ``aspen check`` accepts several trace files at once.

Cluster config (INI)::

    [cluster]
    f = 1
    p = 1
    crypto = ed25519
    app = counter

    [nodes]
    r0 = 127.0.0.1:7000
    ...
    p0 = 127.0.0.1:7100
    c0 = 127.0.0.1:7200

    [workload]
    requests = 100
    mode = closed

    [run]
    seed = cluster-key-seed
    trace_dir = traces
"""
from __future__ import annotations

import asyncio
import configparser
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from aspen.app import APPS
from aspen.client import Client
from aspen.core.config import Config
from aspen.core.crypto import make_crypto
from aspen.core.messages import client_node, node_index, proxy_node, replica_node
from aspen.core.wire import WireError, decode, encode
from aspen.harness.runner import op_factory
from aspen.harness.trace import TraceRecorder
from aspen.replica.engine import Replica
from aspen.sequencer import Proxy
from aspen.simnet.scenario import WorkloadSpec

log = logging.getLogger(__name__)

_LEN = struct.Struct(">I")
MAX_FRAME = 64 << 20


def wall_us() -> int:
    return time.time_ns() // 1000


@dataclass
class ClusterConfig:
    cluster: Config
    app: str
    addresses: dict[str, tuple[str, int]]
    workload: WorkloadSpec
    seed: str = "aspen"
    trace_dir: Path = field(default_factory=lambda: Path("traces"))

    @property
    def proxies(self) -> list[int]:
        return sorted(node_index(n) for n in self.addresses if n.startswith("p"))

    @property
    def clients(self) -> list[int]:
        return sorted(node_index(n) for n in self.addresses if n.startswith("c"))


def load_cluster_config(path: str | Path) -> ClusterConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # type: ignore[assignment]
    cp.read(path)
    values = dict(cp["cluster"]) if cp.has_section("cluster") else {}
    app = values.pop("app", "counter").strip()
    cfg = Config.from_mapping(values)
    addresses = {}
    for node, addr in cp["nodes"].items():
        host, port = addr.strip().rsplit(":", 1)
        addresses[node.strip()] = (host, int(port))
    missing = [replica_node(r) for r in range(cfg.n) if replica_node(r) not in addresses]
    if missing:
        raise ValueError(f"config lacks addresses for {missing}")
    wl = cp["workload"] if cp.has_section("workload") else {}
    workload = WorkloadSpec(
        requests=int(wl.get("requests", 100)),
        mode=str(wl.get("mode", "closed")).strip(),
        rate=float(wl.get("rate", 100.0)),
        outstanding=int(wl.get("outstanding", 1)),
    )
    run = cp["run"] if cp.has_section("run") else {}
    base = Path(path).resolve().parent
    trace_dir = Path(str(run.get("trace_dir", "traces")))
    return ClusterConfig(cfg, app, addresses, workload, str(run.get("seed", "aspen")),
                         trace_dir if trace_dir.is_absolute() else base / trace_dir)


def write_cluster_config(path: str | Path, cc: ClusterConfig) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # type: ignore[assignment]
    c = cc.cluster
    cp["cluster"] = {
        "f": str(c.f), "p": str(c.p), "interval": str(c.interval), "gamma": str(c.gamma),
        "delta_ms": str(c.delta_ms), "sync_timeout_ms": str(c.sync_timeout_ms),
        "chkpt_timeout_ms": str(c.chkpt_timeout_ms),
        "view_change_timeout_ms": str(c.view_change_timeout_ms),
        "probe_interval_ms": str(c.probe_interval_ms), "crypto": c.crypto,
        "align": str(c.align).lower(), "app": cc.app,
    }
    cp["nodes"] = {n: f"{h}:{p}" for n, (h, p) in cc.addresses.items()}
    wl = cc.workload
    cp["workload"] = {"requests": str(wl.requests), "mode": wl.mode, "rate": str(wl.rate),
                      "outstanding": str(wl.outstanding)}
    cp["run"] = {"seed": cc.seed, "trace_dir": str(cc.trace_dir)}
    with open(path, "w") as fh:
        cp.write(fh)


class TcpEnv:
    """:class:`aspen.core.env.Env` over asyncio streams and the wall clock."""

    def __init__(self, node: str, cc: ClusterConfig, trace: TraceRecorder,
                 trace_path: Optional[Path] = None) -> None:
        self.node = node
        self.cc = cc
        self.trace = trace
        self.trace_fh = open(trace_path, "w") if trace_path else None
        if self.trace_fh:
            self.trace_fh.write(next(trace.lines()) + "\n")
            self.trace_fh.flush()
        self.loop = asyncio.get_running_loop()
        self.target: Any = None
        self.queues: dict[str, asyncio.Queue[bytes]] = {}
        self.tasks: list[asyncio.Task] = []
        self.frames_in = 0
        self.frames_out = 0

    def now(self) -> int:
        return wall_us()

    def send(self, dst: str, msg: Any) -> None:
        if dst == self.node:
            self.loop.call_soon(self._dispatch, msg)
            return
        if dst not in self.cc.addresses:
            return
        q = self.queues.get(dst)
        if q is None:
            q = self.queues[dst] = asyncio.Queue()
            self.tasks.append(self.loop.create_task(self._writer(dst, q)))
        q.put_nowait(encode(msg))

    def set_timer(self, delay_us: int, fn: Callable[..., None], *args: Any) -> asyncio.TimerHandle:
        return self.loop.call_later(max(0, delay_us) / 1e6, fn, *args)

    def cancel_timer(self, handle: asyncio.TimerHandle) -> None:
        handle.cancel()

    def record(self, kind: str, **fields: Any) -> None:
        self.trace(self.now(), self.node, kind, fields)
        if self.trace_fh:
            self.trace_fh.write(json.dumps(self.trace.events[-1], sort_keys=True) + "\n")
            self.trace_fh.flush()

    def _dispatch(self, msg: Any) -> None:
        try:
            self.target.on_message(msg)
        except Exception:  # keep the node alive; a bad message must not kill it
            log.exception("%s: handler failed for %s", self.node, type(msg).__name__)

    async def _writer(self, dst: str, q: asyncio.Queue[bytes]) -> None:
        host, port = self.cc.addresses[dst]
        writer = None
        backoff = 0.05
        while True:
            frame = await q.get()
            while True:
                try:
                    if writer is None:
                        _, writer = await asyncio.open_connection(host, port)
                        backoff = 0.05
                    writer.write(_LEN.pack(len(frame)) + frame)
                    await writer.drain()
                    self.frames_out += 1
                    break
                except OSError:
                    writer = None
                    await asyncio.sleep(backoff)
                    backoff = min(1.0, backoff * 2)
                    # drop stale traffic while a peer is down instead of queueing forever
                    if q.qsize() > 10_000:
                        break

    async def serve(self) -> asyncio.base_events.Server:
        host, port = self.cc.addresses[self.node]
        return await asyncio.start_server(self._reader, host, port)

    async def _reader(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                head = await reader.readexactly(_LEN.size)
                (size,) = _LEN.unpack(head)
                if size > MAX_FRAME:
                    log.warning("%s: oversized frame (%d bytes), closing", self.node, size)
                    break
                body = await reader.readexactly(size)
                try:
                    msg = decode(body)
                except WireError as exc:
                    log.warning("%s: undecodable frame: %s", self.node, exc)
                    continue
                self.frames_in += 1
                self._dispatch(msg)
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            writer.close()

    def close(self) -> None:
        for task in self.tasks:
            task.cancel()
        if self.trace_fh:
            self.trace_fh.close()


def _header(cc: ClusterConfig) -> dict[str, Any]:
    c = cc.cluster
    return {"n": c.n, "f": c.f, "p": c.p, "byzantine": [], "mode": "cluster"}


async def run_node(cc: ClusterConfig, role: str, idx: int, duration_s: Optional[float] = None) -> int:
    cfg = cc.cluster
    node = {"replica": replica_node, "proxy": proxy_node, "client": client_node}[role](idx)
    if node not in cc.addresses:
        raise ValueError(f"{node} has no address in the cluster config")
    crypto = make_crypto(cfg.crypto, cc.seed, list(cc.addresses))
    cc.trace_dir.mkdir(parents=True, exist_ok=True)
    trace = TraceRecorder(_header(cc))
    env = TcpEnv(node, cc, trace, cc.trace_dir / f"{node}.jsonl")
    server = await env.serve()
    done = asyncio.Event()
    if role == "replica":
        target: Any = Replica(idx, cfg, crypto, env, APPS[cc.app])
    elif role == "proxy":
        target = Proxy(idx, cfg, crypto, env)
    else:
        proxies = cc.proxies
        order = [proxies[(idx + k) % len(proxies)] for k in range(len(proxies))]
        target = Client(idx, cfg, crypto, env, order,
                        on_deliver=lambda cl, _d: done.set() if cl.done else None)
    env.target = target
    log.info("%s listening on %s:%d", node, *cc.addresses[node])
    await asyncio.sleep(0.2)  # give peers a moment to bind
    if role == "client":
        wl = cc.workload
        ops = op_factory(cc.app, idx)
        if wl.mode == "open":
            target.run_open_loop(wl.requests, ops, wl.rate)
        else:
            target.run_closed_loop(wl.requests, ops, wl.outstanding)
    else:
        target.start()
    try:
        if duration_s is None and role != "client":
            await asyncio.Event().wait()
        await asyncio.wait_for(done.wait(), timeout=duration_s)
    except asyncio.TimeoutError:
        pass
    finally:
        server.close()
        env.close()
    if role == "client":
        client: Client = target
        log.info("%s delivered %d, pending %d", node, len(client.deliveries), len(client.pending))
        return 0 if client.done else 1
    return 0
