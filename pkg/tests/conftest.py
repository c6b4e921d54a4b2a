from __future__ import annotations

from typing import Any, Callable

import pytest

from aspen.core.config import Config
from aspen.core.crypto import make_crypto
from aspen.core.messages import ClientRequest, Stamped, client_node, proxy_node, replica_node
from aspen.core.signing import sign_message


class FakeEnv:
    """Env that records sends and timers; time only moves when a test says so."""

    def __init__(self, node: str, t: int = 0) -> None:
        self.node = node
        self.t = t
        self.sent: list[tuple[str, Any]] = []
        self.timers: list[list[Any]] = []
        self.records: list[tuple[str, dict]] = []

    def now(self) -> int:
        return self.t

    def send(self, dst: str, msg: Any) -> None:
        self.sent.append((dst, msg))

    def set_timer(self, delay_us: int, fn: Callable[..., None], *args: Any) -> list[Any]:
        handle = [self.t + delay_us, fn, args, False]
        self.timers.append(handle)
        return handle

    def cancel_timer(self, handle: list[Any]) -> None:
        handle[3] = True

    def record(self, kind: str, **fields: Any) -> None:
        self.records.append((kind, fields))

    def advance(self, to: int) -> None:
        """Move the clock to ``to`` and fire due timers in order."""
        while True:
            due = [h for h in self.timers if not h[3] and h[0] <= to]
            if not due:
                break
            h = min(due, key=lambda x: x[0])
            h[3] = True
            self.t = max(self.t, h[0])
            h[1](*h[2])
        self.t = to

    def take(self, kind: type | None = None) -> list[tuple[str, Any]]:
        out = [(d, m) for d, m in self.sent if kind is None or isinstance(m, kind)]
        self.sent = [(d, m) for d, m in self.sent if not (kind is None or isinstance(m, kind))]
        return out


def all_nodes(cfg: Config, proxies: int = 1, clients: int = 4) -> list[str]:
    return ([replica_node(r) for r in range(cfg.n)] + [proxy_node(p) for p in range(proxies)]
            + [client_node(c) for c in range(clients)])


def stamped(crypto, c: int, s_c: int, eta: int, op: bytes = b"INC", proxy: int = 0) -> Stamped:
    req = sign_message(crypto, ClientRequest(c, s_c, op))
    return sign_message(crypto, Stamped(req, eta, proxy))


@pytest.fixture
def cfg() -> Config:
    return Config(f=1, p=1, interval=4)


@pytest.fixture
def crypto():
    return make_crypto("null")
