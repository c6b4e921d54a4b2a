"""Event-driven replica: speculative execution, log synchronization,
alignment, repair and the repair-internal view change.

All handlers run to completion; the runtime (simulator or socket loop)
delivers one message or timer at a time. A replica sends messages to itself
through the runtime like to anyone else, so handlers are never re-entered.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional

from aspen.app import App
from aspen.core.config import Config
from aspen.core.crypto import Crypto
from aspen.core.env import Env
from aspen.core.log import Checkpoint, HashChainLog, LogEntry, chain_digest, genesis_digest
from aspen.core.messages import (
    CheckpointMsg,
    CommittedReply,
    ConflictProof,
    HistoryRequest,
    Log,
    LogItem,
    PrepareCert,
    Probe,
    ProbeReply,
    RepairCommit,
    RepairDone,
    RepairHistory,
    RepairPrepare,
    SpecReply,
    Stamped,
    StateReply,
    StateRequest,
    Sync,
    Timeout,
    TimeoutProof,
    ViewChange,
    client_node,
    proxy_node,
    replica_node,
)
from aspen.core.signing import sign_message, verify_message
from aspen.core.wire import encode
from aspen.replica.merge import InconsistentHistory, NewLog, construct_new_log
from aspen.replica.state import ExecState
from aspen.sequencer import ReleaseQueue

log = logging.getLogger(__name__)

FUTURE_BUFFER_LIMIT = 20000
KEEP_ROUNDS = 16


def conflict_detected(n: int, p: int, m: int, c: int) -> bool:
    """True when m SYNCs whose largest agreeing group has size c can never grow to n-p."""
    return n - m < (n - p) - c


class Mode(Enum):
    NORMAL = "NORMAL"
    ALIGNING = "ALIGNING"
    REPAIR = "REPAIR"
    VIEW_CHANGE = "VIEW-CHANGE"


@dataclass
class AlignTarget:
    k: int
    digest: bytes
    app_digest: bytes
    senders: list[int]
    attempts: int = 0


@dataclass
class RoundRepair:
    """Everything a replica tracks about the repair of one round."""

    logs: dict[int, Log] = field(default_factory=dict)
    own_log: Optional[Log] = None
    entry_proof: Any = None
    proof_sent_to: set[int] = field(default_factory=set)
    accepted: dict[int, tuple[RepairHistory, bytes]] = field(default_factory=dict)
    prepares: dict[int, dict[int, RepairPrepare]] = field(default_factory=dict)
    commits: dict[int, dict[int, RepairCommit]] = field(default_factory=dict)
    commit_sent: set[int] = field(default_factory=set)
    prepared: Optional[PrepareCert] = None
    proposed: set[int] = field(default_factory=set)
    view_changes: dict[int, dict[int, ViewChange]] = field(default_factory=dict)
    dones: dict[tuple[bytes, int], dict[int, RepairDone]] = field(default_factory=dict)
    histories: dict[bytes, RepairHistory] = field(default_factory=dict)
    history_requested_at: Optional[int] = None
    checked: dict[int, Any] = field(default_factory=dict)
    bad_histories: int = 0


@dataclass
class CompletedRound:
    history: RepairHistory
    digest: bytes
    done: RepairDone


class Replica:
    def __init__(self, rid: int, cfg: Config, crypto: Crypto, env: Env,
                 app_factory: Callable[[], App]) -> None:
        self.r = rid
        self.cfg = cfg
        self.n, self.f, self.p = cfg.n, cfg.f, cfg.p
        self.crypto = crypto
        self.env = env
        self.state = ExecState(app_factory)
        self.app_factory = app_factory
        genesis = genesis_digest(crypto)
        self.log = HashChainLog(crypto)
        self.chkpt = Checkpoint(-1, genesis, (), self.state.snapshot(), 0, 0)
        self.i = 0
        self.v = 0
        self.mode = Mode.NORMAL
        self.start_idx = 0
        self.anchor = (-1, genesis)
        self.round_eta = 0
        self.committed_upto = -1
        self.queue = ReleaseQueue(cfg.eta_overwrite_threshold_us)
        self.queued_keys: set[tuple[int, int]] = set()
        self.index_of: dict[tuple[int, int], int] = {}
        self.commit_round: dict[tuple[int, int], int] = {}

        self.sync_q: dict[int, dict[int, Sync]] = {}
        self.my_syncs: dict[int, tuple[bytes, Sync]] = {}
        self.ckpt_q: dict[int, dict[int, tuple[bytes, bytes]]] = {}
        self.ckpt_seen: set[int] = set()
        self.timeout_q: dict[int, dict[int, Timeout]] = {}
        self.chkpt_timers: dict[int, Any] = {}
        self.timed_out: set[int] = set()
        self.last_ckpt_msg: Optional[CheckpointMsg] = None
        self.ckpt_help_sent: set[tuple[int, int]] = set()

        self.sync_timer = None
        self.drain_timer = None
        self.drain_at: Optional[int] = None
        self.align_timer = None
        self.vc_timer = None
        self.align: Optional[AlignTarget] = None

        self.rs = RoundRepair()
        self.completed: dict[int, CompletedRound] = {}
        self.catchup_sent: dict[tuple[int, int], int] = {}
        self.future: list[Any] = []
        self.replay_scheduled = False

        self.counters: Counter[str] = Counter()
        self._handlers: dict[type, Callable[[Any], None]] = {
            Stamped: self.on_stamped,
            Sync: self.on_sync,
            CheckpointMsg: self.on_checkpoint,
            Timeout: self.on_timeout,
            TimeoutProof: self.on_timeout_proof,
            ConflictProof: self.on_conflict_proof,
            StateRequest: self.on_state_request,
            StateReply: self.on_state_reply,
            Log: self.on_log,
            RepairHistory: self.on_repair_history,
            RepairPrepare: self.on_repair_prepare,
            RepairCommit: self.on_repair_commit,
            RepairDone: self.on_repair_done,
            ViewChange: self.on_view_change,
            HistoryRequest: self.on_history_request,
            Probe: self.on_probe,
        }

    # ------------------------------------------------------------------ runtime

    @property
    def node(self) -> str:
        return replica_node(self.r)

    @property
    def leader(self) -> int:
        return self.v % self.n

    def start(self) -> None:
        self._reset_sync_timer()

    def on_message(self, msg: Any) -> None:
        handler = self._handlers.get(type(msg))
        if handler is None:
            self.counters["unknown_message"] += 1
            return
        handler(msg)

    def status(self) -> dict[str, Any]:
        return {
            "replica": self.r,
            "mode": self.mode.value,
            "round": self.i,
            "view": self.v,
            "log_len": len(self.log),
            "chkpt_idx": self.chkpt.idx,
            "start_idx": self.start_idx,
            "queued": len(self.queue),
            "counters": dict(self.counters),
        }

    def _send(self, r: int, msg: Any) -> None:
        self.env.send(replica_node(r), msg)

    def _broadcast(self, msg: Any, include_self: bool = True) -> None:
        for r in range(self.n):
            if include_self or r != self.r:
                self._send(r, msg)

    def _sign(self, msg: Any) -> Any:
        return sign_message(self.crypto, msg)

    def _verify(self, msg: Any) -> bool:
        if verify_message(self.crypto, msg):
            return True
        self.counters["bad_signature"] += 1
        return False

    def _cancel(self, handle: Any) -> None:
        if handle is not None:
            self.env.cancel_timer(handle)

    def _gate(self, rnd: int, msg: Any, sender: int) -> bool:
        """True if ``msg`` belongs to the current round; buffers or helps otherwise."""
        if rnd == self.i:
            return True
        if rnd > self.i:
            if len(self.future) < FUTURE_BUFFER_LIMIT:
                self.future.append(msg)
            else:
                self.counters["future_dropped"] += 1
            return False
        self.counters["stale"] += 1
        self._help_straggler(sender, rnd)
        return False

    def _help_straggler(self, sender: int, rnd: int) -> None:
        done = self.completed.get(rnd)
        if done is None or sender == self.r or not 0 <= sender < self.n:
            return
        now = self.env.now()
        last = self.catchup_sent.get((sender, rnd))
        if last is not None and now - last < self.cfg.chkpt_timeout_us:
            return
        self.catchup_sent[(sender, rnd)] = now
        self._send(sender, done.history)
        self._send(sender, done.done)

    # --------------------------------------------------------------- fast path

    def on_probe(self, msg: Probe) -> None:
        self.env.send(proxy_node(msg.proxy), ProbeReply(self.r, msg.send_ts, self.env.now()))

    def on_stamped(self, msg: Stamped) -> None:
        if not (self._verify(msg) and self._verify(msg.request)):
            return
        key = msg.request.key
        if self.state.executed(key) is not None:
            self.counters["duplicates"] += 1
            self._resend_reply(key)
            return
        if key in self.queued_keys:
            return
        self.queue.enqueue(msg, self.env.now())
        self.queued_keys.add(key)
        self._schedule_drain()

    def _schedule_drain(self) -> None:
        if self.mode is not Mode.NORMAL:
            return
        nxt = self.queue.next_eta()
        if nxt is None:
            return
        now = self.env.now()
        if nxt <= now:
            self._drain()
            return
        if self.drain_at is not None and self.drain_at <= nxt:
            return
        self._cancel(self.drain_timer)
        self.drain_at = nxt
        self.drain_timer = self.env.set_timer(nxt - now, self._on_drain_timer)

    def _on_drain_timer(self) -> None:
        self.drain_timer = None
        self.drain_at = None
        self._drain()

    def _drain(self) -> None:
        if self.mode is not Mode.NORMAL:
            return
        for stamped in self.queue.drain_ready(self.env.now()):
            self.queued_keys.discard(stamped.request.key)
            self._execute(stamped)
        self._schedule_drain()

    def _execute(self, stamped: Stamped) -> None:
        req = stamped.request
        if self.state.executed(req.key) is not None:
            self._resend_reply(req.key)
            return
        res = self.state.execute(req)
        entry = self.log.append(req, stamped.eta, res, self.round_eta, stamped.proxy)
        self.index_of[req.key] = entry.k
        self.counters["executed"] += 1
        self._spec_reply(entry)
        if len(self.log) % self.cfg.interval == 0:
            self._send_sync(entry.k)
        elif entry.k in self.sync_q and entry.k not in self.my_syncs:
            self._send_sync(entry.k)

    def _spec_reply(self, entry: LogEntry) -> None:
        req = entry.request
        reply = SpecReply(self.i, req.c, req.s_c, entry.k, entry.digest, entry.res, self.r)
        self.env.send(client_node(req.c), self._sign(reply))

    def _resend_reply(self, key: tuple[int, int]) -> None:
        k = self.index_of.get(key)
        if k is not None and self.log.has(k) and k > self.committed_upto:
            self._spec_reply(self.log.entry(k))
            return
        rnd = self.commit_round.get(key)
        res = self.state.executed(key)
        if rnd is not None and res is not None:
            reply = CommittedReply(rnd, key[0], key[1], res, self.r)
            self.env.send(client_node(key[0]), self._sign(reply))

    def _state_at(self, k: int) -> ExecState:
        if k == len(self.log) - 1:
            return self.state
        return self._replay_state(k)

    def _replay_state(self, upto: Optional[int] = None) -> ExecState:
        """State after executing the log from the checkpoint through ``upto``."""
        k = len(self.log) - 1 if upto is None else upto
        scratch = ExecState(self.app_factory, self.state.table_window)
        scratch.restore(self.chkpt.snapshot)
        for entry in self.log:
            if entry.k > k:
                break
            scratch.execute(entry.request)
        return scratch

    # ------------------------------------------------------ log synchronization

    def _reset_sync_timer(self) -> None:
        self._cancel(self.sync_timer)
        self.sync_timer = self.env.set_timer(self.cfg.sync_timeout_us, self._on_sync_timer, self.i)

    def _on_sync_timer(self, rnd: int) -> None:
        self.sync_timer = None
        if rnd != self.i or self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            return
        k = len(self.log) - 1
        if k > self.log.base_idx:
            if k in self.my_syncs:
                self._broadcast(self.my_syncs[k][1])
            else:
                self._send_sync(k)
        self._reset_sync_timer()

    def _send_sync(self, k: int) -> None:
        if k in self.my_syncs or not self.log.has(k):
            return
        if self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            return
        snapshot = self._state_at(k).snapshot()
        msg = self._sign(Sync(self.i, k, self.log.digest_at(k), self.log.eta_max_at(k),
                              self.crypto.digest(snapshot), self.r))
        self.my_syncs[k] = (snapshot, msg)
        self._broadcast(msg)
        self._reset_sync_timer()

    def on_sync(self, msg: Sync) -> None:
        if not self._verify(msg) or not self._gate(msg.round, msg, msg.replica):
            return
        if self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            self._relay_entry_proof(msg.replica)
            return
        k = msg.k
        if k <= self.log.base_idx:
            self._help_checkpoint(msg.replica)
            return
        if k < len(self.log) and k not in self.my_syncs:
            self._send_sync(k)
        q = self.sync_q.setdefault(k, {})
        q[msg.replica] = msg
        if len(q) >= self.n - self.f and k not in self.chkpt_timers and k not in self.timed_out:
            self.chkpt_timers[k] = self.env.set_timer(self.cfg.chkpt_timeout_us,
                                                      self._on_chkpt_timeout, k, self.i)
        if self._try_checkpoint(k):
            return
        self._check_conflict(k)

    def _try_checkpoint(self, k: int) -> bool:
        q = self.sync_q.get(k)
        if not q or k not in self.my_syncs:
            return False
        mine = self.my_syncs[k][1]
        agree = [m for m in q.values() if m.digest == mine.digest and m.app_digest == mine.app_digest]
        if len(agree) < self.n - self.p:
            return False
        self._install_checkpoint(k, tuple(sorted(agree, key=lambda m: m.replica)))
        return True

    def _install_checkpoint(self, k: int, proof: tuple[Sync, ...]) -> None:
        snapshot, mine = self.my_syncs[k]
        eta_star = max(m.eta_star for m in proof)
        dropped = self.log.truncate_to(k)
        self._mark_committed(dropped)
        self.chkpt = Checkpoint(k, mine.digest, proof, snapshot, eta_star, self.i)
        self.committed_upto = max(self.committed_upto, k)
        self.counters["checkpoints"] += 1
        self.env.record("ckpt", round=self.i, k=k, digest=mine.digest.hex())
        ck = self._sign(CheckpointMsg(self.i, k, mine.digest, mine.app_digest, self.r))
        self.last_ckpt_msg = ck
        self._broadcast(ck)
        self._gc(k)

    def _mark_committed(self, entries: Iterable[LogEntry]) -> None:
        for e in entries:
            key = e.request.key
            self.commit_round.setdefault(key, self.i)
            if e.k > self.committed_upto:
                self.env.record("commit", k=e.k, digest=e.digest.hex(), c=key[0], s_c=key[1],
                                res=e.res.hex(), round=self.i)

    def _gc(self, k: int) -> None:
        for table in (self.sync_q, self.my_syncs, self.ckpt_q, self.timeout_q):
            for idx in [idx for idx in table if idx <= k]:
                del table[idx]
        for idx in [idx for idx in self.chkpt_timers if idx <= k]:
            self._cancel(self.chkpt_timers.pop(idx))
        self.ckpt_seen = {idx for idx in self.ckpt_seen if idx > k}
        self.timed_out = {idx for idx in self.timed_out if idx > k}

    def _help_checkpoint(self, sender: int) -> None:
        ck = self.last_ckpt_msg
        if ck is None or ck.round != self.i or (sender, ck.k) in self.ckpt_help_sent:
            return
        self.ckpt_help_sent.add((sender, ck.k))
        self._send(sender, ck)

    def _check_conflict(self, k: int) -> None:
        q = self.sync_q.get(k)
        if not q:
            return
        m = len(q)
        c = max(Counter(s.digest for s in q.values()).values())
        if conflict_detected(self.n, self.p, m, c):
            proof = ConflictProof(self.i, k, tuple(sorted(q.values(), key=lambda s: s.replica)))
            self.counters["conflict_proofs"] += 1
            self._broadcast(proof, include_self=False)
            self._enter_repair("conflict", proof)

    def on_checkpoint(self, msg: CheckpointMsg) -> None:
        if not self._verify(msg) or not self._gate(msg.round, msg, msg.replica):
            return
        if self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            self._relay_entry_proof(msg.replica)
            return
        k = msg.k
        if k <= self.log.base_idx or k in self.ckpt_seen:
            return
        q = self.ckpt_q.setdefault(k, {})
        q[msg.replica] = (msg.digest, msg.app_digest)
        value = (msg.digest, msg.app_digest)
        senders = sorted(s for s, v in q.items() if v == value)
        if len(senders) < self.f + 1:
            return
        self.ckpt_seen.add(k)
        for idx in [idx for idx in self.chkpt_timers if idx <= k]:
            self._cancel(self.chkpt_timers.pop(idx))
        if not self.cfg.align or self.mode is not Mode.NORMAL:
            return
        if not self.log.has(k) or self.log.digest_at(k) != msg.digest:
            self._start_align(AlignTarget(k, msg.digest, msg.app_digest, senders))

    # ---------------------------------------------------------------- alignment

    def _start_align(self, target: AlignTarget) -> None:
        self.mode = Mode.ALIGNING
        self.align = target
        self.counters["align_started"] += 1
        self._cancel(self.drain_timer)
        self.drain_timer = self.drain_at = None
        for s in target.senders:
            if s != self.r:
                self._send(s, StateRequest(target.k, self.r))
        self.align_timer = self.env.set_timer(self.cfg.chkpt_timeout_us, self._on_align_timer, self.i)

    def _on_align_timer(self, rnd: int) -> None:
        self.align_timer = None
        if rnd != self.i or self.mode is not Mode.ALIGNING or self.align is None:
            return
        self.align.attempts += 1
        self.counters["align_retries"] += 1
        target = (self.r + self.align.attempts) % self.n
        if target == self.r:
            target = (target + 1) % self.n
        self._send(target, StateRequest(self.align.k, self.r))
        self.align_timer = self.env.set_timer(self.cfg.chkpt_timeout_us, self._on_align_timer, self.i)

    def on_state_request(self, msg: StateRequest) -> None:
        ck = self.chkpt
        if ck.idx < msg.k or not ck.proof or not 0 <= msg.replica < self.n:
            return
        reply = self._sign(StateReply(ck.idx, ck.snapshot, ck.proof, self.r))
        self._send(msg.replica, reply)

    def _valid_ckpt_proof(self, proof: tuple[Sync, ...], k: int, rnd: Optional[int] = None
                          ) -> Optional[tuple[bytes, bytes]]:
        """(digest, app digest) attested by n-p distinct signed SYNCs at k, else None."""
        senders = set()
        value = None
        for s in proof:
            if s.k != k or (rnd is not None and s.round != rnd) or s.replica in senders:
                return None
            if not 0 <= s.replica < self.n or not self._verify(s):
                return None
            if value is None:
                value = (s.digest, s.app_digest)
            elif (s.digest, s.app_digest) != value:
                return None
            senders.add(s.replica)
        if len(senders) < self.n - self.p:
            return None
        return value

    def on_state_reply(self, msg: StateReply) -> None:
        target = self.align
        if self.mode is not Mode.ALIGNING or target is None or not self._verify(msg):
            return
        if msg.k < target.k or msg.k <= self.log.base_idx:
            return
        value = self._valid_ckpt_proof(msg.proof, msg.k, self.i)
        if value is None or self.crypto.digest(msg.snapshot) != value[1]:
            self.counters["bad_state_reply"] += 1
            return
        if msg.k == target.k and value != (target.digest, target.app_digest):
            self.counters["bad_state_reply"] += 1
            return
        self._complete_align(msg.k, value[0], msg.proof, msg.snapshot)

    def _complete_align(self, k: int, digest: bytes, proof: tuple[Sync, ...], snapshot: bytes) -> None:
        eta_star = max(s.eta_star for s in proof)
        survivors = [e for e in self.log if e.eta > eta_star]
        self.state.restore(snapshot)
        self.log.reset(k, digest, eta_star)
        self.chkpt = Checkpoint(k, digest, proof, snapshot, eta_star, self.i)
        self.committed_upto = max(self.committed_upto, k)
        self.index_of.clear()
        self._gc(k)
        self.mode = Mode.NORMAL
        self.align = None
        self._cancel(self.align_timer)
        self.align_timer = None
        for e in survivors:
            self._requeue(e)
        for st in self.queue.discard_upto(eta_star):
            self.queued_keys.discard(st.request.key)
            self.counters["discarded_after_align"] += 1
        self.counters["aligned"] += 1
        self.env.record("align", round=self.i, k=k, digest=digest.hex())
        self.env.record("ckpt", round=self.i, k=k, digest=digest.hex())
        self._drain()

    def _requeue(self, e: LogEntry) -> None:
        key = e.request.key
        if key in self.queued_keys or self.state.executed(key) is not None:
            return
        self.queue.requeue(Stamped(e.request, e.eta, e.proxy))
        self.queued_keys.add(key)

    # ------------------------------------------------------------ repair entry

    def _on_chkpt_timeout(self, k: int, rnd: int) -> None:
        self.chkpt_timers.pop(k, None)
        if rnd != self.i or self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE) or k <= self.log.base_idx:
            return
        self.timed_out.add(k)
        self.counters["timeouts_sent"] += 1
        self._broadcast(self._sign(Timeout(self.i, k, self.r)))

    def on_timeout(self, msg: Timeout) -> None:
        if not self._verify(msg) or not self._gate(msg.round, msg, msg.replica):
            return
        if self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            self._relay_entry_proof(msg.replica)
            return
        if msg.k <= self.log.base_idx:
            return
        q = self.timeout_q.setdefault(msg.k, {})
        q[msg.replica] = msg
        if len(q) >= self.f + 1:
            proof = TimeoutProof(self.i, msg.k, tuple(sorted(q.values(), key=lambda t: t.replica)))
            self._broadcast(proof, include_self=False)
            self._enter_repair("timeout", proof)

    def _valid_timeout_proof(self, msg: TimeoutProof) -> bool:
        senders = set()
        for t in msg.timeouts:
            if t.round != msg.round or t.k != msg.k or t.replica in senders or not self._verify(t):
                return False
            senders.add(t.replica)
        return len(senders) >= self.f + 1

    def on_timeout_proof(self, msg: TimeoutProof) -> None:
        if not self._gate(msg.round, msg, -1):
            return
        if self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            return
        if not self._valid_timeout_proof(msg):
            self.counters["bad_proof"] += 1
            return
        self._broadcast(msg, include_self=False)
        self._enter_repair("timeout-proof", msg)

    def _valid_conflict_proof(self, msg: ConflictProof) -> bool:
        senders = set()
        for s in msg.syncs:
            if s.round != msg.round or s.k != msg.k or s.replica in senders or not self._verify(s):
                return False
            senders.add(s.replica)
        if not senders:
            return False
        m = len(senders)
        c = max(Counter(s.digest for s in msg.syncs).values())
        return conflict_detected(self.n, self.p, m, c)

    def on_conflict_proof(self, msg: ConflictProof) -> None:
        if not self._gate(msg.round, msg, -1):
            return
        if self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            return
        if not self._valid_conflict_proof(msg):
            self.counters["bad_proof"] += 1
            return
        self._broadcast(msg, include_self=False)
        self._enter_repair("conflict-proof", msg)

    def _relay_entry_proof(self, sender: int) -> None:
        # a replica still in NORMAL mode may have missed the proof
        proof = self.rs.entry_proof
        if proof is None or sender in self.rs.proof_sent_to or sender == self.r:
            return
        self.rs.proof_sent_to.add(sender)
        self._send(sender, proof)

    def force_repair(self) -> None:
        self._enter_repair("forced", None)

    def _enter_repair(self, reason: str, proof: Any) -> None:
        if self.mode in (Mode.REPAIR, Mode.VIEW_CHANGE):
            return
        if self.mode is Mode.ALIGNING:
            self.align = None
            self._cancel(self.align_timer)
            self.align_timer = None
        self.mode = Mode.REPAIR
        self.rs.entry_proof = proof
        self._cancel(self.sync_timer)
        self._cancel(self.drain_timer)
        self.sync_timer = self.drain_timer = self.drain_at = None
        for handle in self.chkpt_timers.values():
            self._cancel(handle)
        self.chkpt_timers.clear()
        self.counters["repairs_entered"] += 1
        self.env.record("repair_enter", round=self.i, reason=reason)
        own = self._sign(self._build_log(self.v))
        self.rs.own_log = own
        self._send(self.leader, own)
        self._start_vc_timer()
        self._maybe_propose()

    def _build_log(self, view: int) -> Log:
        ck = self.chkpt
        if ck.proof and ck.idx >= self.start_idx - 1:
            base_idx, base_digest, proof, snapshot = ck.idx, ck.digest, ck.proof, ck.snapshot
        else:
            base_idx, base_digest = self.anchor
            proof, snapshot = (), b""
        items = tuple(
            LogItem(e.k, e.digest, e.request.c, e.request.s_c, self.crypto.digest(e.request.op),
                    e.eta, e.request)
            for e in self.log if e.k > base_idx
        )
        return Log(view, self.i, base_idx, base_digest, proof, snapshot,
                   max(self.log.last_eta_max, self.round_eta), items, self.r)

    # ------------------------------------------------------- history validation

    def _valid_log(self, msg: Log) -> bool:
        cached = self.rs.checked.get(id(msg))
        if cached is not None and cached[0] is msg:
            return cached[1]
        ok = self._check_log(msg)
        self.rs.checked[id(msg)] = (msg, ok)
        return ok

    def _check_log(self, msg: Log) -> bool:
        if msg.round != self.i or not 0 <= msg.replica < self.n or not self._verify(msg):
            return False
        if msg.base_proof:
            value = self._valid_ckpt_proof(msg.base_proof, msg.base_idx)
            if value is None or value[0] != msg.base_digest:
                return False
            if self.crypto.digest(msg.base_snapshot) != value[1]:
                return False
        elif (msg.base_idx, msg.base_digest) != self.anchor:
            return False
        prev = msg.base_digest
        for pos, item in enumerate(msg.entries):
            req = item.request
            if item.k != msg.base_idx + 1 + pos or req is None:
                return False
            if (req.c, req.s_c) != (item.c, item.s_c) or self.crypto.digest(req.op) != item.op_digest:
                return False
            if not self._verify(req):
                return False
            prev = chain_digest(self.crypto, prev, req)
            if prev != item.digest:
                return False
        return True

    def _history_digest(self, logs: tuple[Log, ...]) -> bytes:
        return self.crypto.digest(b"".join(encode(lg) for lg in logs))

    def _valid_logs(self, logs: tuple[Log, ...]) -> bool:
        senders = [lg.replica for lg in logs]
        if len(logs) != self.n - self.f or len(set(senders)) != len(senders):
            return False
        if senders != sorted(senders):
            return False
        if not all(self._valid_log(lg) for lg in logs):
            return False
        try:
            construct_new_log(logs, self.f, self.p)
        except InconsistentHistory:
            return False
        return True

    def _valid_cert(self, cert: PrepareCert) -> bool:
        hist = cert.history
        if hist.round != self.i or hist.view != cert.view or hist.replica != cert.view % self.n:
            return False
        if not self._verify(hist) or not self._valid_logs(hist.logs):
            return False
        h = self._history_digest(hist.logs)
        senders = set()
        for pr in cert.prepares:
            if pr.round != self.i or pr.view != cert.view or pr.history_digest != h:
                return False
            if pr.replica in senders or not self._verify(pr):
                return False
            senders.add(pr.replica)
        return len(senders) >= self.n - self.f

    def _valid_view_change(self, vc: ViewChange) -> bool:
        if vc.round != self.i or not 0 <= vc.replica < self.n or not self._verify(vc):
            return False
        if vc.log is not None and (vc.log.replica != vc.replica or not self._valid_log(vc.log)):
            return False
        if vc.prepared is not None and (vc.prepared.view >= vc.view or not self._valid_cert(vc.prepared)):
            return False
        return True

    def _valid_new_view(self, msg: RepairHistory) -> bool:
        senders = set()
        for vc in msg.view_changes:
            if vc.view != msg.view or vc.replica in senders or not self._valid_view_change(vc):
                return False
            senders.add(vc.replica)
        if len(senders) < self.n - self.f:
            return False
        certs = [vc.prepared for vc in msg.view_changes if vc.prepared is not None]
        if certs:
            best = max(certs, key=lambda c: c.view)
            return self._history_digest(best.history.logs) == self._history_digest(msg.logs)
        return True

    # ------------------------------------------------------------ agreement

    def on_log(self, msg: Log) -> None:
        if not self._gate(msg.round, msg, msg.replica):
            return
        if msg.replica in self.rs.logs or not self._valid_log(msg):
            return
        self.rs.logs[msg.replica] = msg
        self._maybe_propose()

    def _maybe_propose(self) -> None:
        if self.mode is not Mode.REPAIR or self.leader != self.r or self.v != 0 or 0 in self.rs.proposed:
            return
        if len(self.rs.logs) < self.n - self.f:
            return
        chosen = list(self.rs.logs.values())[: self.n - self.f]
        logs = tuple(sorted(chosen, key=lambda lg: lg.replica))
        self.rs.proposed.add(0)
        self.counters["histories_proposed"] += 1
        self._broadcast(self._sign(RepairHistory(self.i, 0, logs, (), self.r)))

    def on_repair_history(self, msg: RepairHistory) -> None:
        if not self._gate(msg.round, msg, msg.replica):
            return
        if not self._verify(msg) or not self._valid_logs(msg.logs):
            self.rs.bad_histories += 1
            return
        h = self._history_digest(msg.logs)
        self.rs.histories.setdefault(h, msg)
        if self._try_finish_from_done():
            return
        if msg.replica != msg.view % self.n or msg.view < self.v or msg.view in self.rs.accepted:
            return
        if msg.view > 0 and not self._valid_new_view(msg):
            self.rs.bad_histories += 1
            return
        if self.mode in (Mode.NORMAL, Mode.ALIGNING):
            self._enter_repair("history", None)
        if msg.view > self.v:
            self.v = msg.view
        self.mode = Mode.REPAIR
        self.rs.accepted[msg.view] = (msg, h)
        self._broadcast(self._sign(RepairPrepare(self.i, msg.view, h, self.r)))
        self._check_prepared(msg.view)

    def on_repair_prepare(self, msg: RepairPrepare) -> None:
        if not self._verify(msg) or not self._gate(msg.round, msg, msg.replica):
            return
        self.rs.prepares.setdefault(msg.view, {})[msg.replica] = msg
        self._check_prepared(msg.view)

    def _check_prepared(self, view: int) -> None:
        accepted = self.rs.accepted.get(view)
        if accepted is None or view in self.rs.commit_sent:
            return
        hist, h = accepted
        matching = [m for m in self.rs.prepares.get(view, {}).values() if m.history_digest == h]
        if len(matching) < self.n - self.f:
            return
        prepares = tuple(sorted(matching, key=lambda m: m.replica)[: self.n - self.f])
        if self.rs.prepared is None or self.rs.prepared.view < view:
            self.rs.prepared = PrepareCert(view, hist, prepares)
        self.rs.commit_sent.add(view)
        self._broadcast(self._sign(RepairCommit(self.i, view, h, self.r)))
        self._check_committed(view)

    def on_repair_commit(self, msg: RepairCommit) -> None:
        if not self._verify(msg) or not self._gate(msg.round, msg, msg.replica):
            return
        self.rs.commits.setdefault(msg.view, {})[msg.replica] = msg
        self._check_committed(msg.view)

    def _check_committed(self, view: int) -> None:
        accepted = self.rs.accepted.get(view)
        if accepted is None or view not in self.rs.commit_sent:
            return
        hist, h = accepted
        matching = [m for m in self.rs.commits.get(view, {}).values() if m.history_digest == h]
        if len(matching) >= self.n - self.f:
            self._finish_round(hist, h, view)

    def on_repair_done(self, msg: RepairDone) -> None:
        if not self._verify(msg) or not self._gate(msg.round, msg, msg.replica):
            return
        self.rs.dones.setdefault((msg.history_digest, msg.k), {})[msg.replica] = msg
        self._try_finish_from_done()

    def _try_finish_from_done(self) -> bool:
        for (h, _k), dones in self.rs.dones.items():
            if len(dones) < self.f + 1:
                continue
            hist = self.rs.histories.get(h)
            if hist is not None:
                self.counters["caught_up"] += 1
                self._finish_round(hist, h, hist.view)
                return True
            now = self.env.now()
            last = self.rs.history_requested_at
            if last is None or now - last >= self.cfg.chkpt_timeout_us:
                self.rs.history_requested_at = now
                for s in sorted(dones):
                    self._send(s, HistoryRequest(self.i, self.r))
        return False

    def on_history_request(self, msg: HistoryRequest) -> None:
        if msg.round < self.i:
            self._help_straggler(msg.replica, msg.round)

    # ----------------------------------------------------------- view change

    def _start_vc_timer(self) -> None:
        self._cancel(self.vc_timer)
        delay = self.cfg.view_change_timeout_us * (2 ** min(self.v, 6))
        self.vc_timer = self.env.set_timer(delay, self._on_vc_timer, self.i, self.v)

    def _on_vc_timer(self, rnd: int, view: int) -> None:
        self.vc_timer = None
        if rnd != self.i or view != self.v or self.mode not in (Mode.REPAIR, Mode.VIEW_CHANGE):
            return
        self._move_to_view(self.v + 1)

    def _move_to_view(self, view: int) -> None:
        self.v = view
        self.mode = Mode.VIEW_CHANGE
        self.counters["view_changes"] += 1
        self.env.record("view_change", round=self.i, view=view)
        own = self.rs.own_log
        if own is None:
            own = self.rs.own_log = self._sign(self._build_log(view))
        vc = self._sign(ViewChange(self.i, view, self.rs.prepared, own, self.r))
        self._broadcast(vc)
        self._start_vc_timer()

    def on_view_change(self, msg: ViewChange) -> None:
        if not self._gate(msg.round, msg, msg.replica):
            return
        if msg.view <= 0 or not self._valid_view_change(msg):
            return
        self.rs.view_changes.setdefault(msg.view, {})[msg.replica] = msg
        higher = {s for view, vcs in self.rs.view_changes.items() if view > self.v for s in vcs}
        if len(higher) >= self.f + 1:
            if self.mode in (Mode.NORMAL, Mode.ALIGNING):
                self._enter_repair("view-change", None)
            target = min(view for view in self.rs.view_changes if view > self.v)
            self._move_to_view(target)
        self._maybe_new_view(msg.view)

    def _maybe_new_view(self, view: int) -> None:
        if view != self.v or view % self.n != self.r or view in self.rs.proposed:
            return
        vcs = self.rs.view_changes.get(view, {})
        if len(vcs) < self.n - self.f:
            return
        chosen = tuple(sorted(vcs.values(), key=lambda vc: vc.replica)[: self.n - self.f])
        certs = [vc.prepared for vc in chosen if vc.prepared is not None]
        if certs:
            logs = max(certs, key=lambda c: c.view).history.logs
        else:
            logs = tuple(vc.log for vc in chosen if vc.log is not None)
            if len(logs) < self.n - self.f:
                return
        self.rs.proposed.add(view)
        self.counters["histories_proposed"] += 1
        self._broadcast(self._sign(RepairHistory(self.i, view, logs, chosen, self.r)))

    # ------------------------------------------------------ applying the repair

    def _finish_round(self, hist: RepairHistory, h: bytes, view: int) -> None:
        old = self.i
        new_log = construct_new_log(hist.logs, self.f, self.p)
        k_end = self._apply_new_log(new_log, hist)
        eta_star = max(lg.eta_star for lg in hist.logs)
        done = self._sign(RepairDone(old, view, k_end, h, self.r))
        self.completed[old] = CompletedRound(hist, h, done)
        for rnd in [rnd for rnd in self.completed if rnd < old - KEEP_ROUNDS]:
            del self.completed[rnd]
        self.counters["repairs_completed"] += 1
        self.env.record("round", round=old + 1, k_end=k_end, view=view)
        self._start_round(old + 1, eta_star)
        self._broadcast(done)

    def _apply_new_log(self, nl: NewLog, hist: RepairHistory) -> int:
        base, base_digest = nl.base_idx, nl.base_digest
        target = list(nl.preserved) + list(nl.appended)
        own_base = self.log.base_idx
        if own_base > base:
            skip = own_base - base
            if skip > len(nl.preserved) or nl.preserved[skip - 1].digest != self.log.base_digest:
                self._base_conflict()
                self._install_base(nl, hist)
                pending = target
            else:
                pending = target[skip:]
        elif own_base == base:
            if self.log.base_digest != base_digest:
                self._base_conflict()
                self._install_base(nl, hist)
            pending = target
        elif self.log.digest_at(base) == base_digest:
            pending = target
        else:
            self._install_base(nl, hist)
            pending = target

        # keep the longest own prefix that already matches
        agreed = max(base, self.log.base_idx)
        own = [e for e in self.log if e.k > agreed]
        matched = 0
        while matched < len(own) and matched < len(pending):
            item, entry = pending[matched], own[matched]
            if (item.c, item.s_c) != entry.request.key or item.request.op != entry.request.op:
                break
            matched += 1
        removed = self.log.rollback_to(agreed + matched)
        if removed:
            self.state = self._replay_state()
            for e in removed:
                self.index_of.pop(e.request.key, None)
        before = len(self.log) - 1
        for item in pending[matched:]:
            req = item.request
            if self.state.executed(req.key) is not None:
                self.counters["repair_duplicates"] += 1
                continue
            res = self.state.execute(req)
            entry = self.log.append(req, item.eta, res, self.round_eta)
            self.index_of[req.key] = entry.k
        k_end = len(self.log) - 1
        if nl.preserved and self.log.digest_at(nl.preserved[-1].k) not in (None, nl.preserved[-1].digest):
            self.counters["preserved_digest_mismatch"] += 1
        for e in removed:
            self._requeue(e)
        self.counters["repair_reexecuted"] += k_end - before
        self.counters["repair_rolled_back"] += len(removed)

        # every entry above the base is now committed in this round
        self._mark_committed(e for e in self.log if e.k > self.committed_upto)
        for item in nl.preserved[: max(0, self.log.base_idx - base)]:
            self.commit_round.setdefault((item.c, item.s_c), self.i)
        for e in self.log:
            if e.k <= base:
                continue
            key = e.request.key
            self.commit_round.setdefault(key, self.i)
            reply = CommittedReply(self.i, key[0], key[1], e.res, self.r)
            self.env.send(client_node(key[0]), self._sign(reply))
        self.committed_upto = max(self.committed_upto, k_end)
        return k_end

    def _base_conflict(self) -> None:
        self.counters["base_conflicts"] += 1
        log.warning("replica %d: committed base disagrees with repaired history", self.r)

    def _install_base(self, nl: NewLog, hist: RepairHistory) -> None:
        for lg in hist.logs:
            if lg.base_idx == nl.base_idx and lg.base_proof:
                eta = max(s.eta_star for s in lg.base_proof)
                self.state.restore(lg.base_snapshot)
                self.log.reset(lg.base_idx, lg.base_digest, eta)
                self.chkpt = Checkpoint(lg.base_idx, lg.base_digest, lg.base_proof,
                                        lg.base_snapshot, eta, self.i)
                self.index_of.clear()
                self.committed_upto = max(self.committed_upto, lg.base_idx)
                self.env.record("ckpt", round=self.i, k=lg.base_idx, digest=lg.base_digest.hex())
                return
        self.counters["missing_base_snapshot"] += 1

    def _start_round(self, rnd: int, eta_star: int) -> None:
        self.i = rnd
        self.v = 0
        self.mode = Mode.NORMAL
        self.start_idx = len(self.log)
        self.anchor = (len(self.log) - 1, self.log.last_digest)
        self.round_eta = max(self.round_eta, eta_star)
        self._cancel(self.vc_timer)
        self.vc_timer = None
        self.rs = RoundRepair()
        for handle in self.chkpt_timers.values():
            self._cancel(handle)
        self.chkpt_timers.clear()
        self.sync_q.clear()
        self.my_syncs.clear()
        self.ckpt_q.clear()
        self.ckpt_seen.clear()
        self.timeout_q.clear()
        self.timed_out.clear()
        for st in self.queue.discard_upto(self.round_eta):
            self.queued_keys.discard(st.request.key)
            self.counters["discarded_after_repair"] += 1
        self._reset_sync_timer()
        self._drain()
        if self.future and not self.replay_scheduled:
            self.replay_scheduled = True
            self.env.set_timer(0, self._replay_future)

    def _replay_future(self) -> None:
        self.replay_scheduled = False
        pending, self.future = self.future, []
        for msg in pending:
            self.on_message(msg)
