"""Acceptance criteria, one test each. Run with ``pytest tests/test_acceptance.py -s`` to see the verdicts."""
import random
import statistics
import time
from pathlib import Path

from aspen.core.config import ms_to_us
from aspen.harness import scenarios
from aspen.harness.runner import run_scenario
from aspen.replica.merge import construct_new_log
from aspen.simnet import FaultKind, FaultSpec
from aspen.simnet.scenario import load_scenario

from oracles import chained, fast_committed, random_instance, reference_merge

ROOT = Path(__file__).resolve().parent.parent


def verdict(number, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


def test_01_randomized_safety():
    started = time.perf_counter()
    failed = []
    for seed in range(500):
        result = run_scenario(scenarios.random_safety(seed))
        if not result.ok:
            failed.append((seed, result.report.violations[0].message))
    elapsed = time.perf_counter() - started
    verdict(1, not failed and elapsed < 600,
            f"500 randomized fault runs, {500 - len(failed)} passed the checker, {elapsed:.0f}s"
            + (f", first failure {failed[0]}" if failed else ""))


def test_02_fast_path_latency():
    cases = [(10, 0.25), (10, 0.0), (10, 1.0), (5, 0.25), (20, 0.5)]
    ok = True
    parts = []
    for one_way_ms, gamma in cases:
        # clients start once proxy probes have filled the delay estimator
        result = run_scenario(scenarios.baseline(one_way_ms=one_way_ms, gamma=gamma, warmup_ms=300))
        expected = 2 * one_way_ms + gamma * one_way_ms
        lat = [r.latency_us / 1000 for r in result.records]
        worst = max(abs(x - expected) for x in lat)
        ok &= (result.ok and len(lat) == result.submitted and worst <= 1.0
               and all(r.path == "FAST" for r in result.records))
        parts.append(f"D={one_way_ms} g={gamma}: {statistics.median(lat):.2f}/{expected:.2f} ms (max dev {worst:.3f})")
    verdict(2, ok, "measured/expected fast latency, " + "; ".join(parts))


def fast_commits_survive(result):
    """Independent of the checker: FAST client commits vs. what correct replicas committed."""
    byz = result.cluster.byzantine
    committed = {}
    for ev in result.cluster.trace.events:
        if ev["type"] == "commit" and ev["node"] not in byz:
            committed.setdefault(ev["k"], set()).add((ev["c"], ev["s_c"], ev["res"]))
    bad = 0
    for ev in result.cluster.trace.events:
        if ev["type"] == "client_commit" and ev["path"] == "FAST":
            if committed.get(ev["k"]) != {(ev["c"], ev["s_c"], ev["res"])}:
                bad += 1
    return bad


def test_03_fast_path_durability():
    violations = pending = interleaved = fast = 0
    runs = 100
    for seed in range(runs):
        result = run_scenario(scenarios.durability(seed))
        events = result.cluster.trace.events
        last_round = max(ev["t"] for ev in events if ev["type"] == "round")
        fast += result.summary.fast_commits
        interleaved += any(ev["type"] == "client_commit" and ev["path"] == "FAST" and ev["t"] < last_round
                           for ev in events)
        violations += fast_commits_survive(result) + len(result.report.violations)
        pending += result.report.pending + (result.submitted - result.summary.committed)
    verdict(3, violations == 0 and pending == 0 and interleaved == runs,
            f"{runs} runs with forced repairs, {fast} fast commits, {interleaved} runs with fast commits "
            f"before a repair, {violations} violations, {pending} undecided")


def test_04_merge_oracle_equivalence():
    a, b, c, d, e, f_, g = [(cid, 0, b"op") for cid in range(7)]
    history = [chained(0, [a, b, c, d, e]), chained(2, [a, b, c, d, f_]), chained(3, [a, b, c, e, d]),
               chained(4, [a, b, f_, e]), chained(5, [a, b, g, d])]
    nl = construct_new_log(history, f=1, p=1)
    example_ok = ([it.c for it in nl.preserved] == [0, 1, 2] and [it.c for it in nl.appended] == [3, 4, 5]
                  and [it.c for it in nl.excluded] == [6])
    mismatches = 0
    total = 0
    for n in (4, 6):
        rng = random.Random(1000 + n)
        for _ in range(5000):
            f, p, logs, hist = random_instance(rng, n)
            nl = construct_new_log(hist, f, p)
            got = ([(it.k, it.req_id) for it in nl.preserved], [it.req_id for it in nl.appended],
                   [it.req_id for it in nl.excluded])
            kept = {(it.k, it.req_id) for it in nl.preserved}
            if got != reference_merge(hist, f, p) or not fast_committed(logs, n, p) <= kept:
                mismatches += 1
            total += 1
    verdict(4, example_ok and mismatches == 0,
            f"example instance {'matches' if example_ok else 'differs'}; "
            f"{total} random instances, {mismatches} disagreements with the brute-force reference")


def jitter_totals(seeds=range(5), **kw):
    fast = committed = rounds = 0
    for seed in seeds:
        result = run_scenario(scenarios.jitter(seed, **kw))
        assert result.ok and result.summary.committed == result.submitted
        fast += result.summary.fast_commits
        committed += result.summary.committed
        rounds += result.summary.repair_rounds
    return fast / committed, rounds


def test_05_extra_replicas():
    prop6, rounds6 = jitter_totals()
    prop4, rounds4 = jitter_totals(p=0)
    verdict(5, prop6 > prop4 and rounds6 < rounds4,
            f"n=6 fast {prop6:.3f} / {rounds6} repair rounds vs n=4 fast {prop4:.3f} / {rounds4} repair rounds")


def test_06_alignment():
    _, with_align = jitter_totals()
    _, without = jitter_totals(align=False)
    verdict(6, without > with_align, f"repair rounds with alignment {with_align}, without {without}")


def test_07_gamma_sweep():
    gammas = [0.0, 0.1, 0.25, 0.5, 1.0]
    props, lats = [], []
    for gamma in gammas:
        fast = committed = 0
        lat = []
        for seed in range(6):
            result = run_scenario(scenarios.gamma_sweep(seed, gamma))
            assert result.ok and result.summary.committed == result.submitted
            fast += result.summary.fast_commits
            committed += result.summary.committed
            lat += [r.latency_us for r in result.records if r.path == "FAST"]
        props.append(fast / committed)
        lats.append(statistics.median(lat) / 1000)
    prop_ok = all(x <= y for x, y in zip(props, props[1:]))
    tail = lats[gammas.index(0.25):]
    lat_ok = all(x <= y for x, y in zip(tail, tail[1:]))
    rows = ", ".join(f"g={g}: {p:.3f}/{m:.1f}ms" for g, p, m in zip(gammas, props, lats))
    verdict(7, prop_ok and lat_ok, f"fast proportion / median fast latency: {rows}")


def test_08_burst_recovery():
    at_ms, dur_ms = 1000, 100
    result = run_scenario(scenarios.burst(at_ms=at_ms, duration_ms=dur_ms))
    steady = run_scenario(scenarios.baseline(requests=10)).summary.fast_median_ms
    recs = result.records
    before = [r for r in recs if r.submit_us < ms_to_us(at_ms)]
    during = [r for r in recs if ms_to_us(at_ms) <= r.submit_us < ms_to_us(at_ms + dur_ms)]
    after = [r for r in recs if r.submit_us >= ms_to_us(at_ms + 3 * dur_ms)]

    def mean_ms(rows):
        return statistics.fmean(r.latency_us for r in rows) / 1000

    after_fast = sum(r.path == "FAST" for r in after) / len(after)
    ok = (result.ok and result.summary.committed == result.submitted and result.summary.repair_rounds == 1
          and mean_ms(during) > 1.5 * mean_ms(before) and after_fast == 1.0
          and abs(mean_ms(after) - steady) <= 1.0)
    verdict(8, ok, f"{result.summary.repair_rounds} repair round(s); mean latency before {mean_ms(before):.1f} ms, "
                   f"during burst {mean_ms(during):.1f} ms, after {mean_ms(after):.1f} ms "
                   f"(steady state {steady:.1f} ms); fast proportion after {after_fast:.3f}")


def test_09_leader_crash_liveness():
    force_ms, bound_ms = 300, 1000
    steps = [("before REPAIR-HISTORY", "REPAIR-HISTORY", False), ("after REPAIR-HISTORY", "REPAIR-HISTORY", True),
             ("after REPAIR-PREPARE", "REPAIR-PREPARE", True), ("after REPAIR-COMMIT", "REPAIR-COMMIT", True)]
    ok = True
    parts = []
    for step, tag, after in steps:
        scn = scenarios.baseline(seed=5, requests=40, interval=8, sync_timeout_ms=40, chkpt_timeout_ms=80,
                                 view_change_timeout_ms=150)
        scn.faults = [FaultSpec(FaultKind.FORCE_REPAIR, at_us=ms_to_us(force_ms)),
                      FaultSpec(FaultKind.CRASH_ON_SEND, node="r0", tag=tag, after=after)]
        result = run_scenario(scn)
        crashed = result.cluster.sim.crashed
        correct = [r.node for r in result.cluster.replicas if r.node not in crashed]
        entered = {ev["node"]: ev["t"] for ev in result.cluster.trace.events
                   if ev["type"] == "round" and ev["round"] == 1 and ev["node"] in correct}
        slowest = max(entered.values(), default=0) / 1000
        ok &= (crashed == {"r0"} and set(entered) == set(correct) and slowest <= force_ms + bound_ms
               and result.ok and result.summary.committed == result.submitted)
        parts.append(f"{step}: {len(entered)}/{len(correct)} by {slowest:.0f} ms")
    verdict(9, ok, f"leader r0 crashed, repair forced at {force_ms} ms; round 1 reached " + "; ".join(parts))


def test_10_determinism():
    builds = {
        "baseline.ini": lambda: load_scenario(ROOT / "scenarios" / "baseline.ini"),
        "faulty.ini": lambda: load_scenario(ROOT / "scenarios" / "faulty.ini"),
        "safety-7": lambda: scenarios.random_safety(7),
        "burst": lambda: scenarios.burst(),
    }
    same = []
    for name, build in builds.items():
        if run_scenario(build()).digest() == run_scenario(build()).digest():
            same.append(name)
    verdict(10, len(same) == len(builds), f"identical metrics digests on repeat for {len(same)}/{len(builds)} "
                                          f"scenarios ({', '.join(same)})")
