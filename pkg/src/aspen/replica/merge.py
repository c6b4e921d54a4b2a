"""Deterministic construction of the repaired log from a proposed history.

The proposed history is a set of n-f LOG reports. The merged log is:

1. the longest run of slots, starting right after the highest committed
   base, on which at least f+p+1 reports agree on (index, chain digest,
   request id) while sharing the same prefix;
2. then every other request reported by at least f+1 distinct replicas, in
   ascending (client, client sequence number, op digest) order.

Everything else is left out and handled by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence


class Item(Protocol):
    k: int
    digest: bytes
    c: int
    s_c: int
    op_digest: bytes
    eta: int

    @property
    def req_id(self) -> tuple[int, int, bytes]: ...


class Report(Protocol):
    replica: int
    base_idx: int
    base_digest: bytes
    entries: Sequence[Item]


class InconsistentHistory(ValueError):
    """Reports disagree on committed state; the proposal must be rejected."""


@dataclass(frozen=True)
class NewLog:
    base_idx: int
    base_digest: bytes
    preserved: tuple[Item, ...]
    appended: tuple[Item, ...]
    excluded: tuple[Item, ...]

    def order(self) -> list[tuple[int, int, bytes]]:
        return [it.req_id for it in self.preserved] + [it.req_id for it in self.appended]


def _base_of(reports: Sequence[Report]) -> tuple[int, bytes]:
    committed: dict[int, bytes] = {}
    for rep in reports:
        seen = committed.setdefault(rep.base_idx, rep.base_digest)
        if seen != rep.base_digest:
            raise InconsistentHistory(f"two committed digests at index {rep.base_idx}")
    top = max(committed)
    return top, committed[top]


def construct_new_log(reports: Sequence[Report], f: int, p: int) -> NewLog:
    if not reports:
        raise InconsistentHistory("empty history")
    senders = [rep.replica for rep in reports]
    if len(set(senders)) != len(senders):
        raise InconsistentHistory("duplicate reporter")
    reports = sorted(reports, key=lambda rep: rep.replica)
    base_idx, base_digest = _base_of(reports)

    slots: list[dict[int, Item]] = [{it.k: it for it in rep.entries} for rep in reports]

    def anchored(pos: int) -> bool:
        rep = reports[pos]
        if rep.base_idx == base_idx:
            return True
        it = slots[pos].get(base_idx)
        return it is not None and it.digest == base_digest

    # rule 1: extend while a consistent group of f+p+1 persists
    need = f + p + 1
    group = [pos for pos in range(len(reports)) if anchored(pos)]
    preserved: list[Item] = []
    k = base_idx + 1
    while len(group) >= need:
        buckets: dict[tuple[bytes, tuple[int, int, bytes]], list[int]] = {}
        for pos in group:
            it = slots[pos].get(k)
            if it is not None:
                buckets.setdefault((it.digest, it.req_id), []).append(pos)
        if not buckets:
            break
        members = max(buckets.values(), key=lambda ps: (len(ps), -ps[0]))
        if len(members) < need:
            break
        preserved.append(slots[members[0]][k])
        group = members
        k += 1

    # rule 2: requests seen by f+1 distinct reporters, ordered by client id
    kept = {it.req_id for it in preserved}
    seen_by: dict[tuple[int, int, bytes], set[int]] = {}
    first: dict[tuple[int, int, bytes], Item] = {}
    for rep in reports:
        for it in rep.entries:
            rid = it.req_id
            seen_by.setdefault(rid, set()).add(rep.replica)
            prev = first.get(rid)
            if prev is None or it.eta > prev.eta:
                first[rid] = it
    appended, excluded = [], []
    for rid in sorted(seen_by):
        if rid in kept:
            continue
        (appended if len(seen_by[rid]) >= f + 1 else excluded).append(first[rid])
    return NewLog(base_idx, base_digest, tuple(preserved), tuple(appended), tuple(excluded))
