"""Independent reference implementations used to freeze expected values."""
from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class Item:
    k: int
    digest: bytes
    c: int
    s_c: int
    op_digest: bytes
    eta: int

    @property
    def req_id(self):
        return (self.c, self.s_c, self.op_digest)


@dataclass(frozen=True)
class Report:
    replica: int
    base_idx: int
    base_digest: bytes
    entries: tuple


GENESIS = hashlib.sha256(b"").digest()


def chained(replica, reqs, base_idx=-1, base_digest=GENESIS, etas=None):
    """Report whose entries hash-chain the (c, s_c, op) triples in ``reqs``."""
    prev, items = base_digest, []
    for pos, (c, s_c, op) in enumerate(reqs):
        prev = hashlib.sha256(repr((c, s_c, op)).encode() + prev).digest()
        eta = etas[pos] if etas else 100 * (c + 1) + s_c
        items.append(Item(base_idx + 1 + pos, prev, c, s_c, op, eta))
    return Report(replica, base_idx, base_digest, tuple(items))


def reference_merge(reports, f, p):
    """Brute force: grow the longest prefix shared by f+p+1 logs, then count appearances."""
    base = max(r.base_idx for r in reports)
    need = f + p + 1
    seqs = []
    for r in reports:
        by_k = {it.k: it for it in r.entries}
        if r.base_idx != base and (base not in by_k):
            continue
        seq, k = [], base + 1
        while k in by_k:
            seq.append((by_k[k].digest, by_k[k].req_id))
            k += 1
        seqs.append(seq)
    length = 0
    while True:
        counts = Counter(tuple(s[: length + 1]) for s in seqs if len(s) > length)
        if not counts or max(counts.values()) < need:
            break
        length += 1
    counts = Counter(tuple(s[:length]) for s in seqs if len(s) >= length)
    prefix = [rid for _, rid in max(counts, key=counts.get)] if length else []
    preserved = [(base + 1 + i, rid) for i, rid in enumerate(prefix)]
    holders: dict = {}
    for r in reports:
        for it in r.entries:
            holders.setdefault(it.req_id, set()).add(r.replica)
    rest = sorted(rid for rid in holders if rid not in set(prefix))
    appended = [rid for rid in rest if len(holders[rid]) >= f + 1]
    excluded = [rid for rid in rest if len(holders[rid]) < f + 1]
    return preserved, appended, excluded


def fast_committed(all_logs, n, p):
    """(index, req_id) pairs holding a consistent history in at least n-p of all n logs."""
    out = set()
    for log in all_logs:
        for pos, it in enumerate(log.entries):
            prefix = tuple(x.req_id for x in log.entries[: pos + 1])
            holders = sum(1 for other in all_logs
                          if tuple(x.req_id for x in other.entries[: pos + 1]) == prefix)
            if holders >= n - p:
                out.add((it.k, it.req_id))
    return out


def random_instance(rng: random.Random, n: int, max_len: int = 8):
    """All n replica logs for a round plus a random n-f subset as the proposed history."""
    f, p = (1, 1) if n == 6 else (1, 0)
    pool = [(c, s, b"op") for c in range(4) for s in range(4)]
    rng.shuffle(pool)
    canonical = pool[:max_len]
    logs = []
    for r in range(n):
        keep = rng.choice([max_len, max_len, rng.randint(0, max_len)])
        reqs = list(canonical[:keep])
        extra = [q for q in pool if q not in reqs]
        rng.shuffle(extra)
        reqs += extra[: rng.randint(0, max(0, max_len - keep))]
        if rng.random() < 0.3 and len(reqs) > 1:
            i = rng.randrange(len(reqs) - 1)
            reqs[i], reqs[i + 1] = reqs[i + 1], reqs[i]
        logs.append(chained(r, reqs[:max_len]))
    chosen = sorted(rng.sample(range(n), n - f))
    return f, p, logs, [logs[r] for r in chosen]
