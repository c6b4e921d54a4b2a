from __future__ import annotations

from typing import Any, Callable, Protocol


class Env(Protocol):
    """What a protocol node needs from its runtime (simulator or sockets)."""

    node: str

    def now(self) -> int:
        """Local clock reading in microseconds."""

    def send(self, dst: str, msg: Any) -> None: ...

    def set_timer(self, delay_us: int, fn: Callable[..., None], *args: Any) -> Any: ...

    def cancel_timer(self, handle: Any) -> None: ...

    def record(self, kind: str, **fields: Any) -> None:
        """Append a structured event to the run trace."""
