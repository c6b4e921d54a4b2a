from aspen.core.config import Config, ConfigError, fast_quorum_size, ms_to_us
from aspen.core.crypto import Ed25519Crypto, NullCrypto, make_crypto
from aspen.core.log import (
    Checkpoint,
    HashChainLog,
    LogEntry,
    QuorumTracker,
    chain_digest,
    genesis_digest,
    recompute_chain,
)
from aspen.core.signing import sign_message, verify_message
from aspen.core.wire import WireError, decode, encode

__all__ = [
    "Checkpoint",
    "Config",
    "ConfigError",
    "Ed25519Crypto",
    "HashChainLog",
    "LogEntry",
    "NullCrypto",
    "QuorumTracker",
    "WireError",
    "chain_digest",
    "decode",
    "encode",
    "fast_quorum_size",
    "genesis_digest",
    "make_crypto",
    "ms_to_us",
    "recompute_chain",
    "sign_message",
    "verify_message",
]
