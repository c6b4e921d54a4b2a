from __future__ import annotations

import dataclasses
from typing import TypeVar

from aspen.core.crypto import Crypto
from aspen.core.wire import signing_payload

M = TypeVar("M")


def sign_message(crypto: Crypto, msg: M) -> M:
    if not crypto.signs:
        return msg
    sig = crypto.sign(msg.signer, signing_payload(msg))  # type: ignore[attr-defined]
    return dataclasses.replace(msg, sig=sig)


def verify_message(crypto: Crypto, msg: object) -> bool:
    if not crypto.signs:
        return True
    signer = getattr(msg, "signer", None)
    if signer is None:
        return False
    return crypto.verify(signer, signing_payload(msg), msg.sig)  # type: ignore[attr-defined]
