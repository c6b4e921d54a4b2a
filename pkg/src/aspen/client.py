"""Client library: submission through a proxy, reply quorums, retransmission."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from aspen.core.config import Config
from aspen.core.crypto import Crypto
from aspen.core.env import Env
from aspen.core.messages import (
    ClientRequest,
    CommittedReply,
    ErrorReply,
    SpecReply,
    client_node,
    proxy_node,
)
from aspen.core.signing import sign_message, verify_message


class Path(Enum):
    FAST = "FAST"
    REPAIR = "REPAIR"


class Status(Enum):
    IN_FLIGHT = "IN-FLIGHT"
    COMMITTED = "COMMITTED"


@dataclass(frozen=True)
class Delivery:
    s_c: int
    res: bytes
    path: Path
    latency_us: int
    submit_ts: int
    commit_ts: int
    k: Optional[int] = None
    digest: Optional[bytes] = None


@dataclass
class PendingRequest:
    s_c: int
    op: bytes
    submit_ts: int
    request: ClientRequest
    spec: dict[int, SpecReply] = field(default_factory=dict)
    committed: dict[int, CommittedReply] = field(default_factory=dict)
    status: Status = Status.IN_FLIGHT
    timeouts: int = 0
    timer: Any = None


DeliverFn = Callable[["Client", Delivery], None]


class Client:
    """Tracks replies per outstanding request and delivers each result once.

    A request commits on n-p SPEC-REPLYs agreeing on (round, index, digest,
    result) or on f+1 COMMITTED-REPLYs agreeing on (round, result). A later
    SPEC-REPLY from the same replica replaces its earlier one, which is how
    corrected replies after alignment complete a quorum.
    """

    def __init__(self, cid: int, cfg: Config, crypto: Crypto, env: Env, proxies: list[int],
                 on_deliver: Optional[DeliverFn] = None, failover_after: int = 2) -> None:
        if not proxies:
            raise ValueError("a client needs at least one proxy")
        self.c = cid
        self.cfg = cfg
        self.crypto = crypto
        self.env = env
        self.proxies = list(proxies)
        self.proxy_pos = 0
        self.on_deliver = on_deliver
        self.failover_after = failover_after
        self.next_s = 0
        self.pending: dict[int, PendingRequest] = {}
        self.deliveries: list[Delivery] = []
        self.byzantine_evidence: list[tuple[int, int, int]] = []
        self.retransmits = 0
        self.errors: list[ErrorReply] = []
        self._workload: Optional[_Workload] = None

    @property
    def node(self) -> str:
        return client_node(self.c)

    @property
    def proxy(self) -> int:
        return self.proxies[self.proxy_pos]

    def submit(self, op: bytes) -> int:
        s_c = self.next_s
        self.next_s += 1
        req = sign_message(self.crypto, ClientRequest(self.c, s_c, op))
        pend = PendingRequest(s_c, op, self.env.now(), req)
        self.pending[s_c] = pend
        self._transmit(pend)
        return s_c

    def _transmit(self, pend: PendingRequest) -> None:
        self.env.send(proxy_node(self.proxy), pend.request)
        pend.timer = self.env.set_timer(self.cfg.retransmit_us, self._on_retransmit, pend.s_c)

    def _on_retransmit(self, s_c: int) -> None:
        pend = self.pending.get(s_c)
        if pend is None or pend.status is Status.COMMITTED:
            return
        pend.timeouts += 1
        self.retransmits += 1
        if pend.timeouts % self.failover_after == 0 and len(self.proxies) > 1:
            self.proxy_pos = (self.proxy_pos + 1) % len(self.proxies)
        self._transmit(pend)

    def on_message(self, msg: Any) -> None:
        if isinstance(msg, SpecReply):
            self._on_spec(msg)
        elif isinstance(msg, CommittedReply):
            self._on_committed(msg)
        elif isinstance(msg, ErrorReply) and msg.c == self.c:
            self.errors.append(msg)

    def _live(self, msg: Any) -> Optional[PendingRequest]:
        if msg.c != self.c or not 0 <= msg.replica < self.cfg.n:
            return None
        pend = self.pending.get(msg.s_c)
        if pend is None or pend.status is Status.COMMITTED:
            return None
        if not verify_message(self.crypto, msg):
            return None
        return pend

    def _on_spec(self, msg: SpecReply) -> None:
        pend = self._live(msg)
        if pend is None:
            return
        prev = pend.spec.get(msg.replica)
        if (prev is not None and (prev.round, prev.k, prev.digest) == (msg.round, msg.k, msg.digest)
                and prev.res != msg.res):
            self.byzantine_evidence.append((msg.replica, msg.round, msg.k))
        pend.spec[msg.replica] = msg
        key = (msg.round, msg.k, msg.digest, msg.res)
        agree = sum(1 for m in pend.spec.values() if (m.round, m.k, m.digest, m.res) == key)
        if agree >= self.cfg.n - self.cfg.p:
            self._commit(pend, msg.res, Path.FAST, msg.k, msg.digest)

    def _on_committed(self, msg: CommittedReply) -> None:
        pend = self._live(msg)
        if pend is None:
            return
        pend.committed[msg.replica] = msg
        key = (msg.round, msg.res)
        agree = sum(1 for m in pend.committed.values() if (m.round, m.res) == key)
        if agree >= self.cfg.f + 1:
            self._commit(pend, msg.res, Path.REPAIR)

    def _commit(self, pend: PendingRequest, res: bytes, path: Path,
                k: Optional[int] = None, digest: Optional[bytes] = None) -> None:
        pend.status = Status.COMMITTED
        if pend.timer is not None:
            self.env.cancel_timer(pend.timer)
        now = self.env.now()
        delivery = Delivery(pend.s_c, res, path, now - pend.submit_ts, pend.submit_ts, now, k, digest)
        del self.pending[pend.s_c]
        self.deliveries.append(delivery)
        self.env.record("client_commit", c=self.c, s_c=pend.s_c, res=res.hex(), path=path.value,
                        k=k, digest=None if digest is None else digest.hex(),
                        latency_us=delivery.latency_us, submit_ts=pend.submit_ts)
        if self.on_deliver is not None:
            self.on_deliver(self, delivery)
        if self._workload is not None:
            self._workload.delivered(self)

    # ---------------------------------------------------------------- workloads

    def run_closed_loop(self, count: int, op_for: Callable[[int], bytes], outstanding: int = 1) -> None:
        """Keep ``outstanding`` requests in flight until ``count`` were submitted."""
        self._workload = _Workload(count, op_for, closed=True)
        for _ in range(min(outstanding, count)):
            self._workload.submit_next(self)

    def run_open_loop(self, count: int, op_for: Callable[[int], bytes], rate_per_s: float) -> None:
        """Submit ``count`` requests at a fixed rate regardless of replies."""
        self._workload = _Workload(count, op_for, closed=False)
        interval = max(1, int(round(1e6 / rate_per_s)))
        self._tick(interval)

    def _tick(self, interval: int) -> None:
        wl = self._workload
        if wl is None or wl.submitted >= wl.count:
            return
        wl.submit_next(self)
        self.env.set_timer(interval, self._tick, interval)

    @property
    def done(self) -> bool:
        wl = self._workload
        return wl is not None and wl.submitted >= wl.count and not self.pending


@dataclass
class _Workload:
    count: int
    op_for: Callable[[int], bytes]
    closed: bool
    submitted: int = 0

    def submit_next(self, client: Client) -> None:
        if self.submitted >= self.count:
            return
        client.submit(self.op_for(self.submitted))
        self.submitted += 1

    def delivered(self, client: Client) -> None:
        if self.closed:
            self.submit_next(client)
