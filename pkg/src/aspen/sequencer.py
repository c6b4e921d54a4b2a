"""Best-effort sequencing: proxy-side ETA stamping and replica-side release."""
from __future__ import annotations

import heapq
import math
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Iterable

from aspen.core.config import Config
from aspen.core.crypto import Crypto
from aspen.core.env import Env
from aspen.core.messages import (
    ClientRequest,
    ErrorReply,
    Probe,
    ProbeReply,
    Stamped,
    client_node,
    proxy_node,
    replica_node,
)
from aspen.core.signing import sign_message, verify_message


def nearest_rank(samples: Iterable[int], q: float) -> int:
    ordered = sorted(samples)
    if not ordered:
        raise ValueError("empty sample window")
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]


class DelayEstimator:
    """Sliding windows of one-way-delay samples, one per replica."""

    def __init__(self, window_size: int, default_delay: int) -> None:
        self.window_size = window_size
        self.default_delay = default_delay
        self.windows: dict[int, deque[int]] = {}
        self.skew_clamps = 0
        self._lock = threading.Lock()

    def record_probe(self, replica: int, send_ts: int, recv_ts: int) -> int:
        sample = recv_ts - send_ts
        with self._lock:
            if sample < 0:
                self.skew_clamps += 1
                sample = 0
            window = self.windows.get(replica)
            if window is None:
                window = self.windows[replica] = deque(maxlen=self.window_size)
            window.append(sample)
        return sample

    def window(self, replica: int) -> list[int]:
        with self._lock:
            return list(self.windows.get(replica, ()))

    def estimate(self, replica: int, q: float) -> int:
        samples = self.window(replica)
        if not samples:
            return self.default_delay
        return nearest_rank(samples, q)


def compute_eta(t_send: int, delays: Iterable[int], gamma: float, cap: int) -> int:
    """ETA = t_send + (1 + gamma) * min(max(delays), cap)."""
    worst = max(delays, default=cap)
    return t_send + int(round((1.0 + gamma) * min(worst, cap)))


def eta_for(estimator: DelayEstimator, cfg: Config, t_send: int) -> int:
    delays = [estimator.estimate(r, cfg.q) for r in range(cfg.n)]
    return compute_eta(t_send, delays, cfg.gamma, cfg.delta_us)


@dataclass(order=True)
class _Pending:
    key: tuple[int, int, int, int]
    stamped: Stamped = field(compare=False)


class ReleaseQueue:
    """Holds stamped requests until the local clock reaches their ETA.

    Ties on ETA are broken by (proxy, client, client sequence number) so every
    replica releases on-time requests in the same total order.
    """

    def __init__(self, overwrite_threshold: int) -> None:
        self.overwrite_threshold = overwrite_threshold
        self._heap: list[_Pending] = []
        self.overwrites = 0
        self.late = 0

    def __len__(self) -> int:
        return len(self._heap)

    def enqueue(self, stamped: Stamped, now: int) -> Stamped:
        if stamped.eta > now + self.overwrite_threshold:
            self.overwrites += 1
            stamped = Stamped(stamped.request, now, stamped.proxy, stamped.sig)
        elif stamped.eta <= now:
            self.late += 1
        heapq.heappush(self._heap, _Pending(stamped.order_key(), stamped))
        return stamped

    def requeue(self, stamped: Stamped) -> None:
        """Reinsert without applying the overwrite rule (replay after align/repair)."""
        heapq.heappush(self._heap, _Pending(stamped.order_key(), stamped))

    def next_eta(self) -> int | None:
        return self._heap[0].stamped.eta if self._heap else None

    def drain_ready(self, now: int) -> list[Stamped]:
        out = []
        while self._heap and self._heap[0].stamped.eta <= now:
            out.append(heapq.heappop(self._heap).stamped)
        return out

    def discard_upto(self, eta_star: int) -> list[Stamped]:
        kept, dropped = [], []
        for item in self._heap:
            (dropped if item.stamped.eta <= eta_star else kept).append(item)
        if dropped:
            heapq.heapify(kept)
            self._heap = kept
        return [d.stamped for d in dropped]

    def contains(self, key: tuple[int, int]) -> bool:
        return any(p.stamped.request.key == key for p in self._heap)

    def items(self) -> list[Stamped]:
        return [p.stamped for p in sorted(self._heap)]


class Proxy:
    """Sequencing-layer proxy: validates client requests, stamps an ETA and
    multicasts to every replica. Probes replicas periodically to keep the
    delay estimates fresh."""

    def __init__(self, pid: int, cfg: Config, crypto: Crypto, env: Env,
                 dedup_horizon: int = 4096) -> None:
        self.pid = pid
        self.cfg = cfg
        self.crypto = crypto
        self.env = env
        self.estimator = DelayEstimator(cfg.window_size, cfg.delta_us)
        self.dedup: OrderedDict[tuple[int, int], int] = OrderedDict()
        self.dedup_horizon = dedup_horizon
        self.stamped_count = 0
        self.rejected = 0
        self.eta_offsets: list[int] = []

    def start(self) -> None:
        self._probe()

    def _probe(self) -> None:
        now = self.env.now()
        for r in range(self.cfg.n):
            self.env.send(replica_node(r), Probe(self.pid, now))
        self.env.set_timer(self.cfg.probe_interval_us, self._probe)

    def on_message(self, msg: object) -> None:
        if isinstance(msg, ClientRequest):
            self.stamp_and_multicast(msg)
        elif isinstance(msg, ProbeReply):
            self.estimator.record_probe(msg.replica, msg.send_ts, msg.recv_ts)

    def stamp_and_multicast(self, request: ClientRequest) -> Stamped | None:
        if not verify_message(self.crypto, request):
            self.rejected += 1
            reply = sign_message(self.crypto, ErrorReply(request.c, request.s_c, "bad signature", self.pid))
            self.env.send(client_node(request.c), reply)
            return None
        now = self.env.now()
        eta = self.dedup.get(request.key)
        if eta is None:
            eta = eta_for(self.estimator, self.cfg, now)
            self.dedup[request.key] = eta
            if len(self.dedup) > self.dedup_horizon:
                self.dedup.popitem(last=False)
            self.eta_offsets.append(eta - now)
        else:
            self.dedup.move_to_end(request.key)
        stamped = sign_message(self.crypto, Stamped(request, eta, self.pid))
        self.stamped_count += 1
        for r in range(self.cfg.n):
            self.env.send(replica_node(r), stamped)
        return stamped

    @property
    def node(self) -> str:
        return proxy_node(self.pid)
