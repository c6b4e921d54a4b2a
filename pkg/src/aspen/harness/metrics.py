"""Per-request and per-run metrics with a fixed CSV schema."""
from __future__ import annotations

import csv
import hashlib
import io
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable


@dataclass(frozen=True)
class RequestRecord:
    c: int
    s_c: int
    submit_us: int
    commit_us: int
    latency_us: int
    path: str


@dataclass(frozen=True)
class RunSummary:
    scenario: str
    seed: int
    n: int
    f: int
    p: int
    gamma: float
    align: bool
    submitted: int
    committed: int
    fast_commits: int
    fast_path_proportion: float
    repair_rounds: int
    repairs_entered: int
    view_changes: int
    align_total: int
    align_per_replica: str
    fast_median_ms: float
    fast_mean_ms: float
    repair_median_ms: float
    repair_mean_ms: float
    throughput_rps: float
    byzantine_evidence: int
    checker: str


def request_records(events: Iterable[dict[str, Any]]) -> list[RequestRecord]:
    rows = []
    for ev in events:
        if ev.get("type") == "client_commit":
            rows.append(RequestRecord(ev["c"], ev["s_c"], ev["submit_ts"],
                                      ev["submit_ts"] + ev["latency_us"], ev["latency_us"], ev["path"]))
    rows.sort(key=lambda r: (r.commit_us, r.c, r.s_c))
    return rows


def _ms(values: list[int], fn) -> float:
    return round(fn(values) / 1000.0, 3) if values else 0.0


def summarize(name: str, seed: int, cfg: Any, submitted: int, rows: list[RequestRecord],
              replica_status: list[dict[str, Any]], evidence: int, checker_ok: bool,
              correct: Iterable[int]) -> RunSummary:
    fast = [r.latency_us for r in rows if r.path == "FAST"]
    slow = [r.latency_us for r in rows if r.path != "FAST"]
    correct = set(correct)
    live = [s for s in replica_status if s["replica"] in correct]
    rounds = max((s["round"] for s in live), default=0)
    aligns = {s["replica"]: s["counters"].get("aligned", 0) for s in replica_status}
    entered = max((s["counters"].get("repairs_entered", 0) for s in live), default=0)
    vcs = max((s["counters"].get("view_changes", 0) for s in live), default=0)
    if rows:
        span = max(r.commit_us for r in rows) - min(r.submit_us for r in rows)
        throughput = round(len(rows) / (span / 1e6), 3) if span > 0 else 0.0
    else:
        throughput = 0.0
    return RunSummary(
        scenario=name, seed=seed, n=cfg.n, f=cfg.f, p=cfg.p, gamma=cfg.gamma, align=cfg.align,
        submitted=submitted, committed=len(rows), fast_commits=len(fast),
        fast_path_proportion=round(len(fast) / len(rows), 6) if rows else 0.0,
        repair_rounds=rounds, repairs_entered=entered, view_changes=vcs,
        align_total=sum(aligns.values()),
        align_per_replica=";".join(f"r{r}:{a}" for r, a in sorted(aligns.items())),
        fast_median_ms=_ms(fast, statistics.median), fast_mean_ms=_ms(fast, statistics.fmean),
        repair_median_ms=_ms(slow, statistics.median), repair_mean_ms=_ms(slow, statistics.fmean),
        throughput_rps=throughput, byzantine_evidence=evidence,
        checker="pass" if checker_ok else "fail",
    )


def _csv_text(cls: type, rows: Iterable[Any]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in fields(cls)])
    for row in rows:
        writer.writerow(list(asdict(row).values()))
    return buf.getvalue()


def requests_csv(rows: list[RequestRecord]) -> str:
    return _csv_text(RequestRecord, rows)


def summary_csv(summaries: list[RunSummary]) -> str:
    return _csv_text(RunSummary, summaries)


def csv_digest(*texts: str) -> str:
    h = hashlib.sha256()
    for text in texts:
        h.update(text.encode())
    return h.hexdigest()


def write_csv(path: str | Path, text: str) -> None:
    Path(path).write_text(text)
