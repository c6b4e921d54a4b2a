"""Replicated execution state: the application plus the client table.

The client table maps each client to the results of its most recent
requests. It is part of the replicated state (and of every snapshot) so that
duplicate suppression is itself deterministic: two replicas that executed the
same log agree on which requests are duplicates.
"""
from __future__ import annotations

import struct
from typing import Callable

from aspen.app import App
from aspen.core.messages import ClientRequest

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")


class ExecState:
    def __init__(self, app_factory: Callable[[], App], table_window: int = 256) -> None:
        self.app_factory = app_factory
        self.app = app_factory()
        self.table: dict[int, dict[int, bytes]] = {}
        self.table_window = table_window

    def executed(self, key: tuple[int, int]) -> bytes | None:
        results = self.table.get(key[0])
        return None if results is None else results.get(key[1])

    def execute(self, request: ClientRequest) -> bytes:
        res = self.app.execute(request.op)
        results = self.table.setdefault(request.c, {})
        results[request.s_c] = res
        if len(results) > 2 * self.table_window:
            # prune in bulk; depends only on the executed sequence
            for s in sorted(results)[: len(results) - self.table_window]:
                del results[s]
        return res

    def snapshot(self) -> bytes:
        app = self.app.snapshot()
        parts = [_U32.pack(len(app)), app, _U32.pack(len(self.table))]
        for c in sorted(self.table):
            results = self.table[c]
            parts += [_I64.pack(c), _U32.pack(len(results))]
            for s in sorted(results):
                res = results[s]
                parts += [_I64.pack(s), _U32.pack(len(res)), res]
        return b"".join(parts)

    def restore(self, data: bytes) -> None:
        (alen,) = _U32.unpack_from(data, 0)
        app = self.app_factory()
        app.restore(data[4 : 4 + alen])
        pos = 4 + alen
        (nclients,) = _U32.unpack_from(data, pos)
        pos += 4
        table: dict[int, dict[int, bytes]] = {}
        for _ in range(nclients):
            (c,) = _I64.unpack_from(data, pos)
            (count,) = _U32.unpack_from(data, pos + 8)
            pos += 12
            results = table[c] = {}
            for _ in range(count):
                (s,) = _I64.unpack_from(data, pos)
                (rlen,) = _U32.unpack_from(data, pos + 8)
                results[s] = data[pos + 12 : pos + 12 + rlen]
                pos += 12 + rlen
        self.app = app
        self.table = table

    def copy(self) -> "ExecState":
        other = ExecState(self.app_factory, self.table_window)
        other.restore(self.snapshot())
        return other
