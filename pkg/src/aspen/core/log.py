"""Hash-chained replica log and checkpoints."""
from __future__ import annotations

from dataclasses import dataclass, field

from aspen.core.crypto import Crypto
from aspen.core.messages import ClientRequest, Sync


def genesis_digest(crypto: Crypto) -> bytes:
    return crypto.digest(b"")


def chain_digest(crypto: Crypto, prev: bytes, request: ClientRequest) -> bytes:
    return crypto.digest(request.encoded + prev)


@dataclass
class LogEntry:
    k: int
    request: ClientRequest
    eta: int
    res: bytes
    digest: bytes
    # running maximum of ETAs over entries <= k
    eta_max: int
    proxy: int = 0


@dataclass(frozen=True)
class Checkpoint:
    idx: int
    digest: bytes
    proof: tuple[Sync, ...]
    snapshot: bytes
    eta_star: int
    round: int = 0


class HashChainLog:
    """Uncommitted log suffix above a committed base.

    Global indices are preserved across truncation: ``len(log)`` is the
    global length, entries at or below ``base_idx`` are gone and only
    ``base_digest`` (H(base_idx)) remains.
    """

    def __init__(self, crypto: Crypto, base_idx: int = -1, base_digest: bytes | None = None,
                 base_eta: int = 0) -> None:
        self.crypto = crypto
        self.base_idx = base_idx
        self.base_digest = genesis_digest(crypto) if base_digest is None else base_digest
        self.base_eta = base_eta
        self.entries: list[LogEntry] = []

    def __len__(self) -> int:
        return self.base_idx + 1 + len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def last_digest(self) -> bytes:
        return self.entries[-1].digest if self.entries else self.base_digest

    @property
    def last_eta_max(self) -> int:
        return self.entries[-1].eta_max if self.entries else self.base_eta

    def entry(self, k: int) -> LogEntry:
        pos = k - self.base_idx - 1
        if pos < 0 or pos >= len(self.entries):
            raise IndexError(k)
        return self.entries[pos]

    def has(self, k: int) -> bool:
        return self.base_idx < k < len(self)

    def digest_at(self, k: int) -> bytes | None:
        if k == self.base_idx:
            return self.base_digest
        if self.has(k):
            return self.entry(k).digest
        return None

    def eta_max_at(self, k: int) -> int:
        if k == self.base_idx:
            return self.base_eta
        return self.entry(k).eta_max

    def append(self, request: ClientRequest, eta: int, res: bytes, eta_floor: int = 0,
               proxy: int = 0) -> LogEntry:
        k = len(self)
        digest = chain_digest(self.crypto, self.last_digest, request)
        entry = LogEntry(k, request, eta, res, digest, max(self.last_eta_max, eta, eta_floor), proxy)
        self.entries.append(entry)
        return entry

    def truncate_to(self, k: int) -> list[LogEntry]:
        """Drop entries <= k, making k the new base. Returns the dropped entries."""
        if k <= self.base_idx:
            return []
        cut = k - self.base_idx
        dropped = self.entries[:cut]
        self.base_digest = dropped[-1].digest
        self.base_eta = dropped[-1].eta_max
        self.base_idx = k
        self.entries = self.entries[cut:]
        return dropped

    def rollback_to(self, k: int) -> list[LogEntry]:
        """Drop entries > k. Returns the removed suffix."""
        if k < self.base_idx:
            raise ValueError(f"cannot roll back below committed base {self.base_idx}")
        keep = k - self.base_idx
        removed = self.entries[keep:]
        del self.entries[keep:]
        return removed

    def reset(self, base_idx: int, base_digest: bytes, base_eta: int) -> list[LogEntry]:
        removed = self.entries
        self.entries = []
        self.base_idx = base_idx
        self.base_digest = base_digest
        self.base_eta = base_eta
        return removed


def recompute_chain(crypto: Crypto, requests: list[ClientRequest], start: bytes | None = None) -> list[bytes]:
    """Digests H(0..len-1) computed from scratch."""
    prev = genesis_digest(crypto) if start is None else start
    out = []
    for req in requests:
        prev = chain_digest(crypto, prev, req)
        out.append(prev)
    return out


@dataclass
class QuorumTracker:
    """Votes per key from distinct senders; reports the largest agreeing group."""

    votes: dict[int, object] = field(default_factory=dict)

    def add(self, sender: int, value: object) -> None:
        self.votes[sender] = value

    def __len__(self) -> int:
        return len(self.votes)

    def largest(self) -> tuple[object, list[int]]:
        groups: dict[object, list[int]] = {}
        for sender, value in self.votes.items():
            groups.setdefault(value, []).append(sender)
        if not groups:
            return None, []
        value, senders = max(groups.items(), key=lambda kv: (len(kv[1]), -min(kv[1])))
        return value, sorted(senders)
