"""Replicated applications.

Both reference state machines use deterministic byte encodings so that the
digest of a snapshot is identical on every replica holding the same state.

Counter
    op ``b"INC"`` increments and returns the new value as ASCII decimal.
    Any other op returns ``b"ERR:unknown-op"`` and leaves the value alone.
    Snapshot: the value as 8-byte big-endian.

Key-value store
    op: kind byte (``G``/``P``/``D``), u32 key length, key, then for ``P`` a
    u32 value length and the value. Results: GET -> ``b"\\x01" + value`` or
    ``b"\\x00"`` when absent; PUT -> ``b"OK"``; DELETE -> ``b"\\x01"`` if the
    key existed else ``b"\\x00"``; malformed -> ``b"ERR:malformed"``.
    Snapshot: u32 count then (key, value) pairs sorted by key, each
    u32-length-prefixed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

ERR_UNKNOWN = b"ERR:unknown-op"
ERR_MALFORMED = b"ERR:malformed"
ABSENT = b"\x00"


class App(Protocol):
    def execute(self, op: bytes) -> bytes: ...

    def snapshot(self) -> bytes: ...

    def restore(self, data: bytes) -> None: ...


def rollback_to(app: App, snapshot: bytes) -> None:
    # rollback is snapshot restore; callers replay the suffix they keep
    app.restore(snapshot)


class Counter:
    INC = b"INC"

    def __init__(self) -> None:
        self.value = 0

    def execute(self, op: bytes) -> bytes:
        if op != self.INC:
            return ERR_UNKNOWN
        self.value += 1
        return str(self.value).encode()

    def snapshot(self) -> bytes:
        return _U64.pack(self.value)

    def restore(self, data: bytes) -> None:
        (self.value,) = _U64.unpack(data)


class KvKind(Enum):
    GET = b"G"
    PUT = b"P"
    DELETE = b"D"


class MalformedOp(ValueError):
    pass


@dataclass(frozen=True)
class KvOp:
    kind: KvKind
    key: bytes
    value: bytes | None = None

    def __post_init__(self) -> None:
        if (self.kind is KvKind.PUT) != (self.value is not None):
            raise MalformedOp("only PUT carries a value")

    def encode(self) -> bytes:
        out = self.kind.value + _U32.pack(len(self.key)) + self.key
        if self.value is not None:
            out += _U32.pack(len(self.value)) + self.value
        return out

    @classmethod
    def decode(cls, data: bytes) -> "KvOp":
        if len(data) < 5:
            raise MalformedOp("short op")
        try:
            kind = KvKind(data[:1])
        except ValueError:
            raise MalformedOp(f"unknown kind {data[:1]!r}") from None
        (klen,) = _U32.unpack_from(data, 1)
        end = 5 + klen
        if end > len(data):
            raise MalformedOp("truncated key")
        key = data[5:end]
        value = None
        if kind is KvKind.PUT:
            if end + 4 > len(data):
                raise MalformedOp("missing value")
            (vlen,) = _U32.unpack_from(data, end)
            value = data[end + 4 : end + 4 + vlen]
            if len(value) != vlen:
                raise MalformedOp("truncated value")
            end += 4 + vlen
        if end != len(data):
            raise MalformedOp("trailing bytes")
        return cls(kind, key, value)


def put(key: bytes, value: bytes) -> bytes:
    return KvOp(KvKind.PUT, key, value).encode()


def get(key: bytes) -> bytes:
    return KvOp(KvKind.GET, key).encode()


def delete(key: bytes) -> bytes:
    return KvOp(KvKind.DELETE, key).encode()


class KVStore:
    def __init__(self) -> None:
        self.data: dict[bytes, bytes] = {}

    def execute(self, op: bytes) -> bytes:
        try:
            kv = KvOp.decode(op)
        except MalformedOp:
            return ERR_MALFORMED
        if kv.kind is KvKind.GET:
            value = self.data.get(kv.key)
            return ABSENT if value is None else b"\x01" + value
        if kv.kind is KvKind.PUT:
            self.data[kv.key] = kv.value  # type: ignore[assignment]
            return b"OK"
        return b"\x01" if self.data.pop(kv.key, None) is not None else ABSENT

    def snapshot(self) -> bytes:
        parts = [_U32.pack(len(self.data))]
        for key in sorted(self.data):
            value = self.data[key]
            parts += [_U32.pack(len(key)), key, _U32.pack(len(value)), value]
        return b"".join(parts)

    def restore(self, data: bytes) -> None:
        (count,) = _U32.unpack_from(data, 0)
        pos = 4
        restored = {}
        for _ in range(count):
            (klen,) = _U32.unpack_from(data, pos)
            key = data[pos + 4 : pos + 4 + klen]
            pos += 4 + klen
            (vlen,) = _U32.unpack_from(data, pos)
            restored[key] = data[pos + 4 : pos + 4 + vlen]
            pos += 4 + vlen
        self.data = restored


APPS: dict[str, Callable[[], App]] = {"counter": Counter, "kv": KVStore}


def make_app(name: str) -> App:
    try:
        return APPS[name]()
    except KeyError:
        raise ValueError(f"unknown application {name!r}") from None
