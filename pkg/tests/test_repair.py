import dataclasses

from aspen.core.messages import (
    Log,
    RepairCommit,
    RepairDone,
    RepairHistory,
    RepairPrepare,
    ViewChange,
    tag_name,
)
from aspen.harness import scenarios
from aspen.harness.runner import run_scenario
from aspen.replica import Mode
from aspen.simnet import FaultKind, FaultSpec


def repair_scenario(faults=(), at_ms=400, **kw):
    scn = scenarios.baseline(clients=3, requests=40, warmup_ms=100, interval=8, sync_timeout_ms=40,
                             chkpt_timeout_ms=80, view_change_timeout_ms=150, **kw)
    scn.faults = [FaultSpec(FaultKind.FORCE_REPAIR, at_us=at_ms * 1000), *faults]
    return scn


class Tap:
    """Records (time, src, dst, message) for chosen tags; may drop some of them."""

    def __init__(self, tags, drop=lambda out: False):
        self.tags = set(tags)
        self.drop = drop
        self.seen = []

    def intercept(self, sim, out):
        if tag_name(out.msg) in self.tags:
            self.seen.append((sim.t, out.src, out.dst, out.msg))
            if self.drop(out):
                return None
        return out


def run_with(scn, *taps):
    return run_scenario(scn, setup=lambda cl: cl.sim.interceptors.extend(taps))


def correct_rounds(result):
    return [r.i for r in result.cluster.replicas if r.node not in result.cluster.sim.crashed]


def test_leader_proposes_once_from_n_minus_f_logs():
    tap = Tap({"LOG", "REPAIR-HISTORY"})
    result = run_with(repair_scenario(), tap)
    assert result.ok and correct_rounds(result) == [1] * 6
    sent = [(t, m) for t, src, _, m in tap.seen if isinstance(m, RepairHistory) and src == "r0"]
    first = [m for t, m in sent if t == sent[0][0]]
    histories = [m for _, m in sent]
    assert len(first) == 6 and len(set(histories)) == 1
    assert len(histories[0].logs) == 5
    assert all(isinstance(lg, Log) for lg in histories[0].logs)


def test_all_replicas_report_done():
    tap = Tap({"REPAIR-DONE"})
    result = run_with(repair_scenario(), tap)
    senders = {src for _, src, _, m in tap.seen if isinstance(m, RepairDone) and m.round == 0}
    assert senders == {f"r{r}" for r in range(6)}
    assert {r.counters["repairs_completed"] for r in result.cluster.replicas} == {1}


def test_leader_crash_before_history_moves_to_view_one():
    scn = repair_scenario([FaultSpec(FaultKind.CRASH_ON_SEND, node="r0", tag="REPAIR-HISTORY")])
    tap = Tap({"REPAIR-HISTORY", "VIEW-CHANGE"})
    result = run_with(scn, tap)
    assert result.ok and correct_rounds(result) == [1] * 5
    proposals = {(m.replica, m.view) for _, _, _, m in tap.seen if isinstance(m, RepairHistory)}
    assert proposals == {(1, 1)}
    assert all(r.counters["view_changes"] >= 1 for r in result.cluster.replicas[1:])
    assert result.summary.committed == result.submitted


def test_prepared_history_survives_view_change():
    # everyone prepares in view 0 but no REPAIR-COMMIT gets through
    drop_commits = Tap({"REPAIR-COMMIT", "REPAIR-PREPARE", "REPAIR-HISTORY"},
                       drop=lambda out: isinstance(out.msg, RepairCommit) and out.msg.view == 0)
    result = run_with(repair_scenario(), drop_commits)
    assert result.ok and correct_rounds(result) == [1] * 6
    prepared = {m.history_digest for _, _, _, m in drop_commits.seen
                if isinstance(m, RepairPrepare) and m.view == 0}
    assert len(prepared) == 1
    reproposed = [m for _, _, _, m in drop_commits.seen if isinstance(m, RepairHistory) and m.view == 1]
    assert reproposed and reproposed[0].replica == 1
    rep = result.cluster.replicas[2]
    finished = rep.completed[0]
    assert finished.history.view == 1 and finished.digest == prepared.pop()


def test_straggler_catches_up_from_done_messages():
    # r5 misses the proposal and all votes, so it only learns of the outcome through DONEs
    cut_off = Tap({"REPAIR-HISTORY", "REPAIR-PREPARE", "REPAIR-COMMIT"},
                  drop=lambda out: out.dst == "r5" and (out.src == "r0" or not isinstance(out.msg, RepairHistory)))
    result = run_with(repair_scenario(), cut_off)
    assert result.ok and correct_rounds(result) == [1] * 6
    straggler = result.cluster.replicas[5]
    assert straggler.counters["repairs_completed"] == 1
    assert straggler.counters["caught_up"] == 1
    assert straggler.mode is Mode.NORMAL


def test_finished_replica_answers_old_view_change_without_rolling_back():
    result = run_with(repair_scenario())
    rep = result.cluster.replicas[3]
    before = (rep.i, len(rep.log), rep.state.snapshot())
    sim = result.cluster.sim
    own = rep.completed[0].history.logs[0]
    stale = ViewChange(0, 1, None, dataclasses.replace(own, view=1), 4)
    tap = Tap({"REPAIR-HISTORY", "REPAIR-DONE"})
    sim.interceptors.append(tap)
    rep.on_message(stale)
    sent = [(dst, tag_name(m)) for _, src, dst, m in tap.seen if src == "r3"]
    assert ("r4", "REPAIR-HISTORY") in sent and ("r4", "REPAIR-DONE") in sent
    assert (rep.i, len(rep.log), rep.state.snapshot()) == before


def test_queued_requests_run_after_the_round():
    result = run_with(repair_scenario(at_ms=300))
    assert result.ok and result.summary.committed == result.submitted
    assert all(r.mode is Mode.NORMAL and len(r.queue) == 0 for r in result.cluster.replicas)
