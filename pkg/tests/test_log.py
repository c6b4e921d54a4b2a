import hashlib
import random

import pytest
from hypothesis import given, strategies as st

from aspen.core.crypto import NullCrypto
from aspen.core.log import HashChainLog, QuorumTracker, chain_digest, genesis_digest, recompute_chain
from aspen.core.messages import ClientRequest


def blake(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def req(c, s, op=b"INC"):
    return ClientRequest(c, s, op)


def test_genesis_is_digest_of_empty_string(crypto):
    assert genesis_digest(crypto) == blake(b"")


def test_first_link(crypto):
    r = req(0, 0)
    assert chain_digest(crypto, genesis_digest(crypto), r) == blake(r.encoded + blake(b""))


def test_chain_is_deterministic(crypto):
    r = req(1, 2)
    g = genesis_digest(crypto)
    assert chain_digest(crypto, g, r) == chain_digest(crypto, g, r)


def test_random_logs_match_recomputation_from_scratch(crypto):
    rng = random.Random(4)
    for _ in range(200):
        reqs = [req(rng.randrange(3), rng.randrange(5), rng.choice([b"INC", b"X"])) for _ in range(4)]
        log = HashChainLog(crypto)
        for r in reqs:
            log.append(r, 0, b"")
        prev = blake(b"")
        for k, r in enumerate(reqs):
            prev = blake(r.encoded + prev)
            assert log.digest_at(k) == prev
        assert [e.digest for e in log] == recompute_chain(crypto, reqs)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 9)), min_size=1, max_size=8), st.data())
def test_changing_any_entry_changes_later_digests(pairs, data):
    crypto = NullCrypto()
    reqs = [req(c, s) for c, s in pairs]
    j = data.draw(st.integers(0, len(reqs) - 1))
    altered = list(reqs)
    altered[j] = req(reqs[j].c, reqs[j].s_c, b"DIFFERENT")
    a, b = recompute_chain(crypto, reqs), recompute_chain(crypto, altered)
    assert a[:j] == b[:j]
    assert all(x != y for x, y in zip(a[j:], b[j:]))


def test_indices_survive_truncation(crypto):
    log = HashChainLog(crypto)
    for s in range(6):
        log.append(req(0, s), eta=10 * s, res=b"")
    d3 = log.digest_at(3)
    dropped = log.truncate_to(3)
    assert [e.k for e in dropped] == [0, 1, 2, 3]
    assert len(log) == 6 and log.base_idx == 3 and log.digest_at(3) == d3
    assert not log.has(3) and log.has(4)
    entry = log.append(req(0, 6), eta=5, res=b"")
    assert entry.k == 6
    assert entry.eta_max == 50


def test_rollback_below_base_refused(crypto):
    log = HashChainLog(crypto)
    for s in range(3):
        log.append(req(0, s), 0, b"")
    log.truncate_to(1)
    with pytest.raises(ValueError):
        log.rollback_to(0)
    assert [e.k for e in log.rollback_to(1)] == [2]


def test_quorum_tracker_counts_each_sender_once():
    qt = QuorumTracker()
    for sender, value in [(0, "a"), (1, "a"), (1, "b"), (2, "b"), (3, "b")]:
        qt.add(sender, value)
    assert len(qt) == 4
    assert qt.largest() == ("b", [1, 2, 3])
