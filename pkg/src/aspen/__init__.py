"""Byzantine fault tolerant state machine replication with a clock-ordered fast path."""

__version__ = "0.1.0"
