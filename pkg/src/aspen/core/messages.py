"""Wire messages exchanged by clients, proxies and replicas.

Every message is an immutable dataclass. Field order is the canonical
encoding order (see :mod:`aspen.core.wire`). Messages carrying a ``sig``
field are signed over their encoding with ``sig`` emptied.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional


def replica_node(r: int) -> str:
    return f"r{r}"


def client_node(c: int) -> str:
    return f"c{c}"


def proxy_node(p: int) -> str:
    return f"p{p}"


def node_index(node: str) -> int:
    return int(node[1:])


@dataclass(frozen=True)
class ClientRequest:
    c: int
    s_c: int
    op: bytes
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return client_node(self.c)

    @property
    def key(self) -> tuple[int, int]:
        return (self.c, self.s_c)

    @cached_property
    def encoded(self) -> bytes:
        from aspen.core.wire import encode

        return encode(self)


@dataclass(frozen=True)
class Stamped:
    """A client request with the ETA a proxy assigned to it."""

    request: ClientRequest
    eta: int
    proxy: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return proxy_node(self.proxy)

    def order_key(self) -> tuple[int, int, int, int]:
        return (self.eta, self.proxy, self.request.c, self.request.s_c)


@dataclass(frozen=True)
class SpecReply:
    round: int
    c: int
    s_c: int
    k: int
    digest: bytes
    res: bytes
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class CommittedReply:
    round: int
    c: int
    s_c: int
    res: bytes
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class ErrorReply:
    c: int
    s_c: int
    reason: str
    proxy: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return proxy_node(self.proxy)


@dataclass(frozen=True)
class Sync:
    round: int
    k: int
    digest: bytes
    eta_star: int
    app_digest: bytes
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class CheckpointMsg:
    round: int
    k: int
    digest: bytes
    app_digest: bytes
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class Timeout:
    round: int
    k: int
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class TimeoutProof:
    round: int
    k: int
    timeouts: tuple[Timeout, ...]


@dataclass(frozen=True)
class ConflictProof:
    round: int
    k: int
    syncs: tuple[Sync, ...]


@dataclass(frozen=True)
class StateRequest:
    k: int
    replica: int


@dataclass(frozen=True)
class StateReply:
    k: int
    snapshot: bytes
    proof: tuple[Sync, ...]
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class LogItem:
    """One uncommitted log slot as reported in a LOG message."""

    k: int
    digest: bytes
    c: int
    s_c: int
    op_digest: bytes
    eta: int
    request: Optional[ClientRequest] = None

    @property
    def req_id(self) -> tuple[int, int, bytes]:
        return (self.c, self.s_c, self.op_digest)


@dataclass(frozen=True)
class Log:
    view: int
    round: int
    base_idx: int
    base_digest: bytes
    base_proof: tuple[Sync, ...]
    base_snapshot: bytes
    eta_star: int
    entries: tuple[LogItem, ...]
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class RepairPrepare:
    round: int
    view: int
    history_digest: bytes
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class RepairCommit:
    round: int
    view: int
    history_digest: bytes
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class RepairDone:
    round: int
    view: int
    k: int
    history_digest: bytes
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class PrepareCert:
    view: int
    history: "RepairHistory"
    prepares: tuple[RepairPrepare, ...]


@dataclass(frozen=True)
class ViewChange:
    round: int
    view: int
    prepared: Optional[PrepareCert]
    log: Optional[Log]
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class RepairHistory:
    round: int
    view: int
    logs: tuple[Log, ...]
    view_changes: tuple[ViewChange, ...]
    replica: int
    sig: bytes = b""

    @property
    def signer(self) -> str:
        return replica_node(self.replica)


@dataclass(frozen=True)
class HistoryRequest:
    round: int
    replica: int


@dataclass(frozen=True)
class Probe:
    proxy: int
    send_ts: int


@dataclass(frozen=True)
class ProbeReply:
    replica: int
    send_ts: int
    recv_ts: int


# tag byte -> (wire name, class); order is part of the wire format
MESSAGE_TYPES: tuple[tuple[int, str, type], ...] = (
    (1, "REQUEST", ClientRequest),
    (2, "SPEC-REPLY", SpecReply),
    (3, "SYNC", Sync),
    (4, "CHECKPOINT", CheckpointMsg),
    (5, "TIMEOUT", Timeout),
    (6, "TIMEOUT-PROOF", TimeoutProof),
    (7, "CONFLICT-PROOF", ConflictProof),
    (8, "STATE-REQUEST", StateRequest),
    (9, "STATE-REPLY", StateReply),
    (10, "LOG", Log),
    (11, "REPAIR-HISTORY", RepairHistory),
    (12, "REPAIR-PREPARE", RepairPrepare),
    (13, "REPAIR-COMMIT", RepairCommit),
    (14, "REPAIR-DONE", RepairDone),
    (15, "COMMITTED-REPLY", CommittedReply),
    (16, "VIEW-CHANGE", ViewChange),
    (17, "STAMPED", Stamped),
    (18, "HISTORY-REQUEST", HistoryRequest),
    (19, "PROBE", Probe),
    (20, "PROBE-REPLY", ProbeReply),
    (21, "ERROR-REPLY", ErrorReply),
)

TAG_NAMES: dict[type, str] = {cls: name for _, name, cls in MESSAGE_TYPES}


def tag_name(msg: object) -> str:
    return TAG_NAMES[type(msg)]
