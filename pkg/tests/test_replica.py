import dataclasses

import pytest

from aspen.app import Counter
from aspen.core.config import Config
from aspen.core.crypto import make_crypto
from aspen.core.messages import (
    CheckpointMsg,
    CommittedReply,
    ConflictProof,
    Log,
    SpecReply,
    StateReply,
    StateRequest,
    Sync,
    Timeout,
    TimeoutProof,
)
from aspen.replica import Mode, Replica
from aspen.replica.engine import conflict_detected

from conftest import FakeEnv, stamped

CFG = Config(f=1, p=1, interval=4, sync_timeout_ms=50, chkpt_timeout_ms=100, view_change_timeout_ms=200)
CRYPTO = make_crypto("null")


def make(r=0, cfg=CFG, t=10_000):
    env = FakeEnv(f"r{r}", t=t)
    return Replica(r, cfg, CRYPTO, env, Counter), env


def feed(rep, reqs):
    """Deliver already-due stamped requests, returning the SPEC-REPLYs sent."""
    for c, s, eta in reqs:
        rep.on_message(stamped(CRYPTO, c, s, eta))
    return [m for _, m in rep.env.take(SpecReply)]


def own_sync(rep, k):
    return rep.my_syncs[k][1]


def as_from(msg, r, **changes):
    return dataclasses.replace(msg, replica=r, **changes)


def cluster_syncs(reqs, k, n=6):
    """SYNC at ``k`` from n replicas that all executed ``reqs``."""
    out = []
    for r in range(n):
        rep, _ = make(r)
        feed(rep, reqs)
        if k not in rep.my_syncs:
            rep._send_sync(k)
        out.append(own_sync(rep, k))
    return out


FOUR = [(0, s, 100 * (s + 1)) for s in range(4)]


class TestFastPath:
    def test_first_request(self):
        rep, env = make()
        (reply,) = feed(rep, [(0, 0, 100)])
        assert (reply.k, reply.res, reply.round) == (0, b"1", 0)
        assert rep.log.digest_at(0) == reply.digest

    def test_same_drain_order_same_digest(self):
        a, _ = make(0)
        b, _ = make(1)
        ra = feed(a, [(0, 0, 100), (1, 0, 200)])
        rb = feed(b, [(0, 0, 100), (1, 0, 200)])
        assert ra[1].digest == rb[1].digest

    def test_held_until_eta(self):
        rep, env = make(t=0)
        rep.on_message(stamped(CRYPTO, 0, 0, 500))
        assert env.take(SpecReply) == []
        env.advance(500)
        assert len(env.take(SpecReply)) == 1

    def test_duplicate_re_emits_prior_reply(self):
        rep, env = make()
        (first,) = feed(rep, [(0, 0, 100)])
        (again,) = feed(rep, [(0, 0, 100)])
        assert again == first
        assert rep.counters["executed"] == 1 and rep.counters["duplicates"] == 1

    def test_requests_queue_during_repair(self):
        rep, env = make()
        rep.force_repair()
        assert feed(rep, [(0, 0, 100)]) == []
        assert len(rep.queue) == 1 and rep.mode is Mode.REPAIR


class TestSync:
    def test_interval_hit(self):
        rep, env = make()
        feed(rep, FOUR)
        syncs = env.take(Sync)
        assert len(syncs) == 6 and {m.k for _, m in syncs} == {3}

    def test_timer_syncs_off_interval(self):
        rep, env = make(t=0)
        rep.start()
        feed(rep, [(0, s, 0) for s in range(7)])
        env.take(Sync)
        env.advance(CFG.sync_timeout_us)
        assert {m.k for _, m in env.take(Sync)} == {6}

    def test_empty_log_timer_sends_nothing(self):
        rep, env = make(t=0)
        rep.start()
        env.advance(CFG.sync_timeout_us)
        assert env.take(Sync) == []

    def test_quorum_installs_checkpoint(self):
        syncs = cluster_syncs(FOUR, 3)
        rep, env = make(0)
        feed(rep, FOUR)
        for m in syncs[:5]:
            rep.on_message(m)
        assert rep.chkpt.idx == 3 and rep.log.base_idx == 3
        ckpts = env.take(CheckpointMsg)
        assert len(ckpts) == 6 and ckpts[0][1].k == 3
        assert ("ckpt", {"round": 0, "k": 3, "digest": syncs[0].digest.hex()}) in env.records
        assert [kind for kind, _ in env.records].count("commit") == 4

    def test_mixed_digests_start_timer_without_checkpoint(self):
        syncs = cluster_syncs(FOUR, 3)
        rep, env = make(0)
        feed(rep, FOUR)
        bad = as_from(syncs[4], 4, digest=b"\x01" * 8)
        # own SYNC (syncs[0] is identical to it) plus three agreeing and one divergent
        for m in syncs[:4] + [bad]:
            rep.on_message(m)
        assert rep.chkpt.idx == -1
        assert 3 in rep.chkpt_timers
        assert rep.mode is Mode.NORMAL

    def test_echo_off_interval_sync(self):
        rep, env = make(0)
        feed(rep, [(0, s, 100 + s) for s in range(8)])
        env.take(Sync)
        peer, _ = make(1)
        feed(peer, [(0, s, 100 + s) for s in range(6)])
        peer._send_sync(5)
        rep.on_message(own_sync(peer, 5))
        echoed = [m for _, m in env.take(Sync)]
        assert echoed and all(m.k == 5 and m.replica == 0 for m in echoed)
        assert echoed[0].digest == own_sync(peer, 5).digest

    def test_sync_for_unreached_index_answered_when_log_gets_there(self):
        rep, env = make(0)
        feed(rep, [(0, 0, 100), (0, 1, 101)])
        peer, _ = make(1)
        feed(peer, [(0, s, 100 + s) for s in range(3)])
        peer._send_sync(2)
        rep.on_message(own_sync(peer, 2))
        assert env.take(Sync) == []
        feed(rep, [(0, 2, 102)])
        assert {m.k for _, m in env.take(Sync)} == {2}


@pytest.mark.parametrize("m, c, expected", [(5, 3, True), (4, 4, False), (6, 5, False)])
def test_conflict_inequality(m, c, expected):
    assert conflict_detected(6, 1, m, c) is expected


class TestConflict:
    def test_conflict_proof_enters_repair(self):
        syncs = cluster_syncs(FOUR, 3)
        rep, env = make(0)
        feed(rep, FOUR)
        env.take()
        bad = [as_from(syncs[r], r, digest=bytes([r]) * 8) for r in (3, 4)]
        for m in [own_sync(rep, 3)] + syncs[1:3] + bad:
            rep.on_message(m)
        assert rep.mode is Mode.REPAIR
        proofs = env.take(ConflictProof)
        assert len(proofs) == 5 and len(proofs[0][1].syncs) == 5
        (log_msg,) = env.take(Log)
        assert log_msg[0] == "r0" and len(log_msg[1].entries) == 4

    def test_invalid_conflict_proof_ignored(self):
        syncs = cluster_syncs(FOUR, 3)
        rep, env = make(1)
        rep.on_message(ConflictProof(0, 3, tuple(syncs[:5])))
        assert rep.mode is Mode.NORMAL and rep.counters["bad_proof"] == 1


class TestTimeouts:
    def test_timer_sends_one_timeout_and_waits(self):
        syncs = cluster_syncs(FOUR, 3)
        rep, env = make(0)
        feed(rep, FOUR)
        bad = as_from(syncs[4], 4, digest=b"\x01" * 8)
        for m in [own_sync(rep, 3)] + syncs[1:4] + [bad]:
            rep.on_message(m)
        assert rep.chkpt.idx == -1
        env.take()
        env.advance(env.t + CFG.chkpt_timeout_us)
        timeouts = env.take(Timeout)
        assert len(timeouts) == 6 and rep.mode is Mode.NORMAL

    def test_f_plus_one_timeouts_enter_repair(self):
        rep, env = make(0)
        feed(rep, FOUR)
        env.take()
        rep.on_message(Timeout(0, 3, 1))
        assert rep.mode is Mode.NORMAL
        rep.on_message(Timeout(0, 3, 2))
        assert rep.mode is Mode.REPAIR
        assert len(env.take(TimeoutProof)) == 5

    def test_received_proof_rebroadcast(self):
        rep, env = make(3)
        rep.on_message(TimeoutProof(0, 3, (Timeout(0, 3, 1), Timeout(0, 3, 2))))
        assert rep.mode is Mode.REPAIR
        assert len(env.take(TimeoutProof)) == 5

    def test_short_proof_rejected(self):
        rep, env = make(3)
        rep.on_message(TimeoutProof(0, 3, (Timeout(0, 3, 1), Timeout(0, 3, 1))))
        assert rep.mode is Mode.NORMAL


def quorum_checkpoint(reqs, k):
    """A replica that checkpointed ``reqs`` at ``k`` and the proof it holds."""
    good, genv = make(1)
    feed(good, reqs)
    for m in cluster_syncs(reqs, k):
        good.on_message(m)
    assert good.chkpt.idx == k
    return good, genv


class TestCheckpointMessages:
    def ckpt(self, r, digest, k=3):
        return CheckpointMsg(0, k, digest, b"a" * 8, r)

    def test_divergent_replica_aligns(self):
        rep, env = make(0)
        feed(rep, [(5, s, 100 * (s + 1)) for s in range(4)])
        env.take()
        other = cluster_syncs(FOUR, 3)[1]
        rep.on_message(self.ckpt(1, other.digest))
        assert rep.mode is Mode.NORMAL
        rep.on_message(self.ckpt(2, other.digest))
        assert rep.mode is Mode.ALIGNING
        assert sorted(d for d, _ in env.take(StateRequest)) == ["r1", "r2"]

    def test_matching_replica_only_cancels_timer(self):
        rep, env = make(0)
        feed(rep, FOUR)
        digest = rep.log.digest_at(3)
        rep.on_message(self.ckpt(1, digest))
        rep.on_message(self.ckpt(2, digest))
        assert rep.mode is Mode.NORMAL and env.take(StateRequest) == []

    def test_alignment_disabled(self):
        rep, env = make(0, cfg=CFG.with_(align=False))
        feed(rep, [(5, s, 100) for s in range(4)])
        d = cluster_syncs(FOUR, 3)[1].digest
        rep.on_message(self.ckpt(1, d))
        rep.on_message(self.ckpt(2, d))
        assert rep.mode is Mode.NORMAL


class TestAlign:
    def diverged(self, tail_etas):
        """Replica whose first four entries differ from the quorum's, plus a tail."""
        rep, env = make(0)
        feed(rep, [(7, s, 10 * (s + 1)) for s in range(3)])
        feed(rep, [(8, i, eta) for i, eta in enumerate(tail_etas)])
        env.take()
        return rep, env

    def align(self, rep, good):
        ck = good.chkpt
        rep.on_message(CheckpointMsg(0, ck.idx, ck.digest, CRYPTO.digest(ck.snapshot), 1))
        rep.on_message(CheckpointMsg(0, ck.idx, ck.digest, CRYPTO.digest(ck.snapshot), 2))
        assert rep.mode is Mode.ALIGNING
        rep.on_message(StateReply(ck.idx, ck.snapshot, ck.proof, 1))

    def test_zero_survivors_adopts_quorum_state(self):
        good, _ = quorum_checkpoint(FOUR, 3)
        rep, env = self.diverged([])
        assert rep.state.app.value == 3
        self.align(rep, good)
        assert rep.mode is Mode.NORMAL and rep.state.app.value == 4
        assert len(rep.log) == 4 and rep.log.base_digest == good.chkpt.digest
        assert rep.counters["aligned"] == 1

    def test_cutoff_and_replay_order(self):
        reqs = [(0, 0, 100), (0, 1, 200), (0, 2, 300), (0, 3, 500)]
        good, _ = quorum_checkpoint(reqs, 3)
        assert good.chkpt.eta_star == 500
        rep, env = self.diverged([480, 510, 530])
        self.align(rep, good)
        replies = [m for _, m in env.take(SpecReply)]
        assert [(m.c, m.s_c, m.k, m.res) for m in replies] == [(8, 1, 4, b"5"), (8, 2, 5, b"6")]
        assert rep.counters["discarded_after_align"] == 0
        assert rep.state.executed((8, 0)) is None

    def test_later_checkpoint_accepted(self):
        reqs = [(0, s, 100 * (s + 1)) for s in range(8)]
        good, _ = quorum_checkpoint(reqs[:4], 3)
        later, _ = quorum_checkpoint(reqs, 7)
        rep, env = self.diverged([])
        ck = good.chkpt
        for r in (1, 2):
            rep.on_message(CheckpointMsg(0, 3, ck.digest, CRYPTO.digest(ck.snapshot), r))
        lk = later.chkpt
        rep.on_message(StateReply(lk.idx, lk.snapshot, lk.proof, 1))
        assert rep.mode is Mode.NORMAL and rep.log.base_idx == 7 and rep.state.app.value == 8

    def test_reply_with_wrong_snapshot_ignored(self):
        good, _ = quorum_checkpoint(FOUR, 3)
        rep, env = self.diverged([])
        ck = good.chkpt
        for r in (1, 2):
            rep.on_message(CheckpointMsg(0, 3, ck.digest, CRYPTO.digest(ck.snapshot), r))
        rep.on_message(StateReply(3, ck.snapshot + b"x", ck.proof, 1))
        assert rep.mode is Mode.ALIGNING and rep.counters["bad_state_reply"] == 1

    def test_retry_round_robin_after_timeout(self):
        good, _ = quorum_checkpoint(FOUR, 3)
        rep, env = self.diverged([])
        ck = good.chkpt
        for r in (1, 2):
            rep.on_message(CheckpointMsg(0, 3, ck.digest, CRYPTO.digest(ck.snapshot), r))
        env.take()
        env.advance(env.t + CFG.chkpt_timeout_us)
        assert [d for d, _ in env.take(StateRequest)] == ["r1"]

    def test_state_request_served_from_checkpoint(self):
        good, genv = quorum_checkpoint(FOUR, 3)
        genv.take()
        good.on_message(StateRequest(3, 4))
        ((dst, reply),) = genv.take(StateReply)
        assert dst == "r4" and reply.k == 3 and len(reply.proof) >= 5


def test_duplicate_after_commit_answered_with_committed_reply():
    good, env = quorum_checkpoint(FOUR, 3)
    env.take()
    good.on_message(stamped(CRYPTO, 0, 1, 200))
    ((dst, msg),) = env.take(CommittedReply)
    assert dst == "c0" and msg.res == b"2"
