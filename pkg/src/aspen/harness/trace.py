"""Execution traces: one JSON object per line, a header first.

Header: ``{"type": "header", "n", "f", "p", "byzantine": [...], ...}``.
Events: ``{"t": <µs>, "node": "r0", "type": <kind>, ...fields}`` where kind is
one of ``commit``, ``ckpt``, ``client_commit``, ``round``, ``align``,
``repair_enter``, ``view_change``, ``crash`` and optionally ``msg``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator


class TraceRecorder:
    def __init__(self, header: dict[str, Any]) -> None:
        self.header = {"type": "header", **header}
        self.events: list[dict[str, Any]] = []

    def __call__(self, t: int, node: str, kind: str, fields: dict[str, Any]) -> None:
        self.events.append({"t": t, "node": node, "type": kind, **fields})

    def lines(self) -> Iterator[str]:
        yield json.dumps(self.header, sort_keys=True)
        for ev in self.events:
            yield json.dumps(ev, sort_keys=True)

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")


def read_trace(path: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    with open(path) as fh:
        return parse_trace(fh)


def parse_trace(lines: Iterable[str]) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    header: dict[str, Any] | None = None
    events = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if obj.get("type") == "header":
            if header is not None:
                raise ValueError("trace has two headers")
            header = obj
        else:
            events.append(obj)
    if header is None:
        raise ValueError("trace has no header")
    return header, events
