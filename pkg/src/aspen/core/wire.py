"""Canonical binary encoding.

Layout: one tag byte, then the fields in declaration order. Integers are
signed 64-bit big-endian, byte strings and text are u32-length-prefixed,
optionals carry a presence byte, tuples a u32 count. Nested dataclasses are
encoded inline without a tag, since their type is fixed by the schema.
"""
from __future__ import annotations

import dataclasses
import struct
import types
import typing
from typing import Any, Callable

from aspen.core.messages import MESSAGE_TYPES

_I64 = struct.Struct(">q")
_U32 = struct.Struct(">I")

_TAG_OF: dict[type, int] = {cls: tag for tag, _, cls in MESSAGE_TYPES}
_CLS_OF: dict[int, type] = {tag: cls for tag, _, cls in MESSAGE_TYPES}


class WireError(ValueError):
    pass


Encoder = Callable[[Any, list], None]
Decoder = Callable[[memoryview, int], tuple[Any, int]]

_enc_cache: dict[Any, Encoder] = {}
_dec_cache: dict[Any, Decoder] = {}


def _enc_int(v: int, out: list) -> None:
    out.append(_I64.pack(v))


def _dec_int(buf: memoryview, pos: int) -> tuple[int, int]:
    if pos + 8 > len(buf):
        raise WireError("truncated int")
    return _I64.unpack_from(buf, pos)[0], pos + 8


def _enc_bytes(v: bytes, out: list) -> None:
    out.append(_U32.pack(len(v)))
    out.append(v)


def _dec_bytes(buf: memoryview, pos: int) -> tuple[bytes, int]:
    if pos + 4 > len(buf):
        raise WireError("truncated length")
    (size,) = _U32.unpack_from(buf, pos)
    pos += 4
    if pos + size > len(buf):
        raise WireError("truncated bytes")
    return bytes(buf[pos : pos + size]), pos + size


def _enc_str(v: str, out: list) -> None:
    _enc_bytes(v.encode(), out)


def _dec_str(buf: memoryview, pos: int) -> tuple[str, int]:
    raw, pos = _dec_bytes(buf, pos)
    return raw.decode(), pos


def _enc_bool(v: bool, out: list) -> None:
    out.append(b"\x01" if v else b"\x00")


def _dec_bool(buf: memoryview, pos: int) -> tuple[bool, int]:
    if pos >= len(buf):
        raise WireError("truncated bool")
    return buf[pos] == 1, pos + 1


def _encoder(tp: Any) -> Encoder:
    enc = _enc_cache.get(tp)
    if enc is not None:
        return enc
    if tp is int:
        enc = _enc_int
    elif tp is bytes:
        enc = _enc_bytes
    elif tp is str:
        enc = _enc_str
    elif tp is bool:
        enc = _enc_bool
    elif dataclasses.is_dataclass(tp):
        enc = _struct_encoder(tp)
    else:
        origin = typing.get_origin(tp)
        args = typing.get_args(tp)
        if origin in (typing.Union, types.UnionType) and type(None) in args:
            inner_tp = next(a for a in args if a is not type(None))

            def enc(v: Any, out: list, _inner_tp: Any = inner_tp) -> None:
                if v is None:
                    out.append(b"\x00")
                else:
                    out.append(b"\x01")
                    _encoder(_inner_tp)(v, out)

        elif origin is tuple and len(args) == 2 and args[1] is Ellipsis:
            item_tp = args[0]

            def enc(v: Any, out: list, _item_tp: Any = item_tp) -> None:
                out.append(_U32.pack(len(v)))
                item = _encoder(_item_tp)
                for x in v:
                    item(x, out)

        else:
            raise WireError(f"unsupported field type {tp!r}")
    _enc_cache[tp] = enc
    return enc


def _decoder(tp: Any) -> Decoder:
    dec = _dec_cache.get(tp)
    if dec is not None:
        return dec
    if tp is int:
        dec = _dec_int
    elif tp is bytes:
        dec = _dec_bytes
    elif tp is str:
        dec = _dec_str
    elif tp is bool:
        dec = _dec_bool
    elif dataclasses.is_dataclass(tp):
        dec = _struct_decoder(tp)
    else:
        origin = typing.get_origin(tp)
        args = typing.get_args(tp)
        if origin in (typing.Union, types.UnionType) and type(None) in args:
            inner_tp = next(a for a in args if a is not type(None))

            def dec(buf: memoryview, pos: int, _inner_tp: Any = inner_tp) -> tuple[Any, int]:
                flag, pos = _dec_bool(buf, pos)
                if not flag:
                    return None, pos
                return _decoder(_inner_tp)(buf, pos)

        elif origin is tuple and len(args) == 2 and args[1] is Ellipsis:
            item_tp = args[0]

            def dec(buf: memoryview, pos: int, _item_tp: Any = item_tp) -> tuple[Any, int]:
                if pos + 4 > len(buf):
                    raise WireError("truncated count")
                (count,) = _U32.unpack_from(buf, pos)
                pos += 4
                item = _decoder(_item_tp)
                items = []
                for _ in range(count):
                    x, pos = item(buf, pos)
                    items.append(x)
                return tuple(items), pos

        else:
            raise WireError(f"unsupported field type {tp!r}")
    _dec_cache[tp] = dec
    return dec


def _schema(cls: type) -> list[tuple[str, Any]]:
    hints = typing.get_type_hints(cls)
    return [(f.name, hints[f.name]) for f in dataclasses.fields(cls)]


def _struct_encoder(cls: type) -> Encoder:
    schema: list[tuple[str, Encoder]] | None = None

    def enc(v: Any, out: list) -> None:
        nonlocal schema
        if schema is None:
            schema = [(name, _encoder(tp)) for name, tp in _schema(cls)]
        for name, field_enc in schema:
            field_enc(getattr(v, name), out)

    return enc


def _struct_decoder(cls: type) -> Decoder:
    schema: list[tuple[str, Decoder]] | None = None

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        nonlocal schema
        if schema is None:
            schema = [(name, _decoder(tp)) for name, tp in _schema(cls)]
        values = {}
        for name, field_dec in schema:
            values[name], pos = field_dec(buf, pos)
        return cls(**values), pos

    return dec


def encode(msg: Any) -> bytes:
    tag = _TAG_OF.get(type(msg))
    if tag is None:
        raise WireError(f"not a wire message: {type(msg).__name__}")
    out: list[bytes] = [bytes((tag,))]
    _encoder(type(msg))(msg, out)
    return b"".join(out)


def decode(data: bytes) -> Any:
    if not data:
        raise WireError("empty frame")
    cls = _CLS_OF.get(data[0])
    if cls is None:
        raise WireError(f"unknown tag {data[0]}")
    buf = memoryview(data)
    msg, pos = _decoder(cls)(buf, 1)
    if pos != len(buf):
        raise WireError(f"{len(buf) - pos} trailing bytes")
    return msg


def signing_payload(msg: Any) -> bytes:
    """Encoding of ``msg`` with its signature field cleared."""
    if getattr(msg, "sig", b"") != b"":
        msg = dataclasses.replace(msg, sig=b"")
    return encode(msg)
