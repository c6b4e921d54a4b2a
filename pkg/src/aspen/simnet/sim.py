"""Deterministic discrete-event fabric for running a whole cluster in-process.

One global heap orders events by (virtual time, sequence number). Each node
reads a local clock derived from virtual time with a fixed offset and drift,
and schedules timers in local-clock units. All randomness comes from one
seeded generator, so (seed, configuration) fixes every delivery time.
"""
from __future__ import annotations

import fnmatch
import heapq
import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional, Protocol

from aspen.core.messages import tag_name


class DelayKind(Enum):
    CONSTANT = "constant"
    UNIFORM = "uniform"
    LOGNORMAL = "lognormal"
    SPIKE = "spike"


@dataclass(frozen=True)
class LinkModel:
    """One-way delay model: ``base`` plus a jitter term, all in microseconds.

    uniform adds U(a, b); lognormal adds exp(N(mu, sigma)) milliseconds;
    spike adds ``extra`` with probability ``spike_prob``.
    """

    kind: DelayKind = DelayKind.CONSTANT
    base: int = 0
    a: int = 0
    b: int = 0
    mu: float = 0.0
    sigma: float = 0.0
    spike_prob: float = 0.0
    extra: int = 0
    drop: float = 0.0

    def __post_init__(self) -> None:
        if self.base < 0 or self.a < 0 or self.b < self.a or self.extra < 0:
            raise ValueError("delays must be nonnegative and a <= b")
        for prob in (self.spike_prob, self.drop):
            if not 0.0 <= prob <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    def sample(self, rng: random.Random) -> int:
        if self.kind is DelayKind.CONSTANT:
            return self.base
        if self.kind is DelayKind.UNIFORM:
            return self.base + rng.randint(self.a, self.b)
        if self.kind is DelayKind.LOGNORMAL:
            return self.base + int(1000 * math.exp(rng.gauss(self.mu, self.sigma)))
        extra = self.extra if rng.random() < self.spike_prob else 0
        return self.base + extra


@dataclass(frozen=True)
class ClockSkew:
    offset_us: int = 0
    drift_ppm: float = 0.0


class Node(Protocol):
    def on_message(self, msg: Any) -> None: ...


@dataclass
class Outgoing:
    """A message leaving a node; interceptors may drop, rewrite or delay it."""

    src: str
    dst: str
    msg: Any
    extra_delay: int = 0


class Interceptor(Protocol):
    def intercept(self, sim: "Simulator", out: Outgoing) -> Optional[Outgoing]: ...


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False


TraceSink = Callable[[int, str, str, dict], None]


class Simulator:
    def __init__(self, seed: int, default_link: LinkModel = LinkModel(), gst_us: int = 0,
                 trace_sink: Optional[TraceSink] = None, trace_messages: bool = False) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.t = 0
        self._seq = 0
        self._heap: list[tuple[int, int, Callable[..., None], tuple]] = []
        self.nodes: dict[str, Node] = {}
        self.skew: dict[str, ClockSkew] = {}
        self.default_link = default_link
        self.links: list[tuple[str, LinkModel]] = []
        self._link_cache: dict[tuple[str, str], LinkModel] = {}
        self.gst_us = gst_us
        self.interceptors: list[Interceptor] = []
        self.crashed: set[str] = set()
        self.trace_sink = trace_sink
        self.trace_messages = trace_messages
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    # -- topology

    def add_node(self, name: str, node: Node, skew: ClockSkew = ClockSkew()) -> None:
        self.nodes[name] = node
        self.skew[name] = skew

    def set_link(self, pattern: str, model: LinkModel) -> None:
        """Route ``src->dst`` pairs matching the glob ``pattern`` through ``model``.

        Patterns are checked in the order they were added; the first match wins.
        """
        self.links.append((pattern, model))
        self._link_cache.clear()

    def link(self, src: str, dst: str) -> LinkModel:
        key = (src, dst)
        model = self._link_cache.get(key)
        if model is None:
            name = f"{src}->{dst}"
            model = next((m for pat, m in self.links if fnmatch.fnmatchcase(name, pat)), self.default_link)
            self._link_cache[key] = model
        return model

    # -- clocks

    def local_time(self, node: str, t: Optional[int] = None) -> int:
        t = self.t if t is None else t
        sk = self.skew.get(node)
        if sk is None:
            return t
        return t + sk.offset_us + int(t * sk.drift_ppm / 1e6)

    def _global_delay(self, node: str, local_delay: int) -> int:
        sk = self.skew.get(node)
        if sk is None or not sk.drift_ppm:
            return local_delay
        return int(math.ceil(local_delay / (1.0 + sk.drift_ppm / 1e6)))

    # -- scheduling

    def schedule(self, at: int, fn: Callable[..., None], *args: Any) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (max(at, self.t), self._seq, fn, args))

    def set_timer(self, node: str, local_delay: int, fn: Callable[..., None], *args: Any) -> TimerHandle:
        handle = TimerHandle()
        self.schedule(self.t + self._global_delay(node, max(0, local_delay)), self._fire, node, handle, fn, args)
        return handle

    def _fire(self, node: str, handle: TimerHandle, fn: Callable[..., None], args: tuple) -> None:
        if handle.cancelled or node in self.crashed:
            return
        fn(*args)

    def send(self, src: str, dst: str, msg: Any) -> None:
        if src in self.crashed:
            return
        out: Optional[Outgoing] = Outgoing(src, dst, msg)
        for icp in self.interceptors:
            out = icp.intercept(self, out)
            if out is None:
                self.dropped += 1
                return
        self.sent += 1
        if out.src == out.dst:
            delay = 0
        else:
            model = self.link(out.src, out.dst)
            if self.t < self.gst_us and model.drop and self.rng.random() < model.drop:
                self.dropped += 1
                return
            delay = model.sample(self.rng)
        self.schedule(self.t + delay + out.extra_delay, self._deliver, out.src, out.dst, out.msg)

    def _deliver(self, src: str, dst: str, msg: Any) -> None:
        node = self.nodes.get(dst)
        if node is None or dst in self.crashed:
            return
        self.delivered += 1
        if self.trace_messages and self.trace_sink is not None:
            self.trace_sink(self.t, dst, "msg", {"src": src, "tag": tag_name(msg)})
        node.on_message(msg)

    def crash(self, node: str) -> None:
        if node not in self.crashed:
            self.crashed.add(node)
            self.record(node, "crash", {})

    def record(self, node: str, kind: str, fields: dict) -> None:
        if self.trace_sink is not None:
            self.trace_sink(self.t, node, kind, fields)

    # -- running

    def step(self) -> bool:
        if not self._heap:
            return False
        at, _, fn, args = heapq.heappop(self._heap)
        self.t = at
        fn(*args)
        return True

    def run_until(self, t_end: int, stop: Optional[Callable[[], bool]] = None) -> None:
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            self.step()
            if stop is not None and stop():
                return
        self.t = max(self.t, t_end)

    def env(self, node: str) -> "SimEnv":
        return SimEnv(self, node)


class SimEnv:
    """The :class:`aspen.core.env.Env` a node sees inside the simulator."""

    def __init__(self, sim: Simulator, node: str) -> None:
        self.sim = sim
        self.node = node

    def now(self) -> int:
        return self.sim.local_time(self.node)

    def send(self, dst: str, msg: Any) -> None:
        self.sim.send(self.node, dst, msg)

    def set_timer(self, delay_us: int, fn: Callable[..., None], *args: Any) -> TimerHandle:
        return self.sim.set_timer(self.node, delay_us, fn, *args)

    def cancel_timer(self, handle: TimerHandle) -> None:
        handle.cancelled = True

    def record(self, kind: str, **fields: Any) -> None:
        self.sim.record(self.node, kind, fields)
