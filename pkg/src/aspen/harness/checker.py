"""Safety checker over execution traces.

Reads only the trace schema, never protocol objects, and checks:

a. correct replicas never commit different digests at the same index;
b. every client-committed result matches the replica-committed log
   (fast commits also match the index and digest);
c. no fast-committed request disappears from a committed log that has
   grown past its index;
d. each (client, sequence number) is committed at exactly one index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    event: dict[str, Any]
    line: int


@dataclass
class CheckReport:
    violations: list[Violation] = field(default_factory=list)
    committed_indices: int = 0
    client_commits: int = 0
    fast_commits: int = 0
    pending: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return (f"PASS: {self.committed_indices} committed indices, {self.client_commits} client "
                    f"commits ({self.fast_commits} fast), {self.pending} undecided at end of trace")
        lines = [f"FAIL: {len(self.violations)} violation(s)"]
        for v in self.violations[:20]:
            lines.append(f"  ({v.rule}) {v.message} [line {v.line}, t={v.event.get('t')}, "
                         f"node={v.event.get('node')}]")
        return "\n".join(lines)


def check_trace(header: dict[str, Any], events: list[dict[str, Any]]) -> CheckReport:
    report = CheckReport()
    excluded = set(header.get("byzantine", []))
    seen_rules: set[tuple[str, Any]] = set()

    def fail(rule: str, key: Any, message: str, ev: dict[str, Any], line: int) -> None:
        if (rule, key) in seen_rules:
            return
        seen_rules.add((rule, key))
        report.violations.append(Violation(rule, message, ev, line))

    # index -> (digest, first event, line); index -> (c, s_c, res) from commit events
    digest_at: dict[int, tuple[str, dict[str, Any], int]] = {}
    entry_at: dict[int, tuple[int, int, str]] = {}
    index_of: dict[tuple[int, int], tuple[int, dict[str, Any], int]] = {}
    top = -1
    client_events = []
    for line, ev in enumerate(events, start=2):
        kind = ev.get("type")
        if kind == "client_commit":
            client_events.append((line, ev))
            continue
        if kind not in ("commit", "ckpt") or ev.get("node") in excluded:
            continue
        k, digest = ev["k"], ev["digest"]
        top = max(top, k)
        first = digest_at.get(k)
        if first is None:
            digest_at[k] = (digest, ev, line)
        elif first[0] != digest:
            fail("a", k, f"index {k}: {first[1]['node']} committed {first[0]} but "
                         f"{ev['node']} committed {digest}", ev, line)
        if kind != "commit":
            continue
        key = (ev["c"], ev["s_c"])
        entry = (ev["c"], ev["s_c"], ev["res"])
        prev_entry = entry_at.setdefault(k, entry)
        if prev_entry != entry:
            fail("a", ("entry", k), f"index {k}: entries {prev_entry} and {entry} differ", ev, line)
        prev = index_of.get(key)
        if prev is None:
            index_of[key] = (k, ev, line)
        elif prev[0] != k:
            fail("d", key, f"request {key} committed at indices {prev[0]} and {k}", ev, line)

    report.committed_indices = len(digest_at)
    for line, ev in client_events:
        report.client_commits += 1
        key = (ev["c"], ev["s_c"])
        committed = index_of.get(key)
        if ev.get("path") == "FAST":
            report.fast_commits += 1
            k = ev["k"]
            found = digest_at.get(k)
            if found is None:
                if k <= top:
                    fail("c", key, f"fast-committed {key} at index {k} missing from committed log",
                         ev, line)
                else:
                    report.pending += 1
                continue
            if found[0] != ev["digest"]:
                fail("c", key, f"fast-committed {key} at index {k} with digest {ev['digest']} "
                               f"but committed log has {found[0]}", ev, line)
                continue
            entry = entry_at.get(k)
            if entry is not None and entry[:2] != key:
                fail("c", key, f"fast-committed {key} at index {k} but committed log holds "
                               f"{entry[:2]} there", ev, line)
            elif entry is not None and entry[2] != ev["res"]:
                fail("b", key, f"fast-committed {key} result {ev['res']} != committed {entry[2]}", ev, line)
        else:
            if committed is None:
                report.pending += 1
                continue
            k = committed[0]
            entry = entry_at[k]
            if entry[2] != ev["res"]:
                fail("b", key, f"client saw result {ev['res']} for {key} but index {k} holds "
                               f"{entry[2]}", ev, line)
    report.violations.sort(key=lambda v: (v.event.get("t", 0), v.line))
    return report


def first_violation(report: CheckReport) -> Optional[Violation]:
    return report.violations[0] if report.violations else None
