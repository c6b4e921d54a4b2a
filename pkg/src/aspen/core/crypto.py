"""Digest and signature primitives.

Two interchangeable backends share one interface so the protocol code never
branches on the mode:

* ``NullCrypto``: 8-byte BLAKE2b digests, empty signatures, verification
  always succeeds. Used by the simulator, where only message authenticity of
  *correct* senders matters and speed dominates.
* ``Ed25519Crypto``: SHA-256 digests and Ed25519 signatures.

Keys for the real backend are derived from a shared cluster seed and the node
name. That is a stand-in for key distribution, which is out of scope.
"""
from __future__ import annotations

import hashlib
from typing import Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)


class NullCrypto:
    mode = "null"
    digest_size = 8
    signature_size = 0

    def digest(self, data: bytes) -> bytes:
        return hashlib.blake2b(data, digest_size=8).digest()

    def sign(self, node: str, data: bytes) -> bytes:
        return b""

    def verify(self, node: str, data: bytes, sig: bytes) -> bool:
        return True

    @property
    def signs(self) -> bool:
        return False


class Ed25519Crypto:
    mode = "ed25519"
    digest_size = 32
    signature_size = 64

    def __init__(self, seed: bytes | str, nodes: Iterable[str] = ()) -> None:
        self._seed = seed.encode() if isinstance(seed, str) else seed
        self._private: dict[str, Ed25519PrivateKey] = {}
        self._public: dict[str, Ed25519PublicKey] = {}
        for node in nodes:
            self.add_node(node)

    def add_node(self, node: str) -> None:
        raw = hashlib.sha256(self._seed + b"/" + node.encode()).digest()
        key = Ed25519PrivateKey.from_private_bytes(raw)
        self._private[node] = key
        self._public[node] = key.public_key()

    def digest(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    def sign(self, node: str, data: bytes) -> bytes:
        key = self._private.get(node)
        if key is None:
            raise KeyError(f"no signing key for {node!r}")
        return key.sign(data)

    def verify(self, node: str, data: bytes, sig: bytes) -> bool:
        pub = self._public.get(node)
        if pub is None:
            return False
        try:
            pub.verify(sig, data)
        except InvalidSignature:
            return False
        return True

    @property
    def signs(self) -> bool:
        return True


Crypto = NullCrypto | Ed25519Crypto


def make_crypto(mode: str, seed: bytes | str = b"aspen", nodes: Iterable[str] = ()) -> Crypto:
    if mode == "null":
        return NullCrypto()
    if mode == "ed25519":
        return Ed25519Crypto(seed, nodes)
    raise ValueError(f"unknown crypto mode {mode!r}")
