"""Fault injection as interceptors around correct nodes.

Byzantine behaviour is modelled by rewriting or dropping what a correct
replica sends, never by forking the replica code.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from aspen.core.messages import SpecReply, Stamped, tag_name
from aspen.simnet.sim import Outgoing, Simulator


class FaultKind(Enum):
    CRASH = "crash"
    CRASH_ON_SEND = "crash-on-send"
    SILENT_TO = "silent-to"
    EQUIVOCATE_SPEC_REPLY = "equivocate-spec-reply"
    PROXY_WITHHOLD = "proxy-withhold"
    DELAY_BURST = "delay-burst"
    FORCE_REPAIR = "force-repair"


# behaviours that make a replica Byzantine (count against f)
BYZANTINE_KINDS = {FaultKind.SILENT_TO, FaultKind.EQUIVOCATE_SPEC_REPLY}


class FaultConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    node: str = ""
    at_us: int = 0
    duration_us: int = 0
    extra_us: int = 0
    targets: tuple[str, ...] = ()
    tag: str = ""
    after: bool = False
    occurrence: int = 1


def faulty_replicas(specs: list[FaultSpec]) -> tuple[set[str], set[str]]:
    """(Byzantine replicas, crashed replicas) named by ``specs``."""
    byz = {s.node for s in specs if s.kind in BYZANTINE_KINDS and s.node.startswith("r")}
    crashed = {s.node for s in specs
               if s.kind in (FaultKind.CRASH, FaultKind.CRASH_ON_SEND) and s.node.startswith("r")}
    return byz, crashed


def validate_faults(specs: list[FaultSpec], f: int) -> None:
    byz, crashed = faulty_replicas(specs)
    if len(byz | crashed) > f:
        raise FaultConfigError(f"{len(byz | crashed)} faulty replicas configured but f={f}")
    for s in specs:
        if s.kind is FaultKind.PROXY_WITHHOLD and not s.node.startswith("p"):
            raise FaultConfigError("proxy-withhold must target a proxy")
        if s.kind in BYZANTINE_KINDS and not s.node.startswith("r"):
            raise FaultConfigError(f"{s.kind.value} must target a replica")


@dataclass
class SilentTo:
    node: str
    targets: tuple[str, ...] = ()

    def intercept(self, sim: Simulator, out: Outgoing) -> Optional[Outgoing]:
        if out.src == self.node and out.src != out.dst and (not self.targets or out.dst in self.targets):
            return None
        return out


@dataclass
class EquivocateSpecReply:
    """Send a different (digest, result) to every other client."""

    node: str
    rewritten: int = 0

    def intercept(self, sim: Simulator, out: Outgoing) -> Optional[Outgoing]:
        msg = out.msg
        if out.src == self.node and isinstance(msg, SpecReply) and msg.c % 2 == 1:
            self.rewritten += 1
            forged = dataclasses.replace(msg, digest=bytes(b ^ 0xFF for b in msg.digest),
                                         res=msg.res + b"'")
            return Outgoing(out.src, out.dst, forged, out.extra_delay)
        return out


@dataclass
class ProxyWithhold:
    node: str
    targets: tuple[str, ...]
    start_us: int = 0
    end_us: int = 0

    def intercept(self, sim: Simulator, out: Outgoing) -> Optional[Outgoing]:
        if out.src != self.node or out.dst not in self.targets or not isinstance(out.msg, Stamped):
            return out
        if sim.t < self.start_us or (self.end_us and sim.t >= self.end_us):
            return out
        return None


@dataclass
class DelayBurst:
    """Messages sent inside the window to ``targets`` (all nodes if empty) get extra delay."""

    start_us: int
    duration_us: int
    extra_us: int
    targets: tuple[str, ...] = ()

    def intercept(self, sim: Simulator, out: Outgoing) -> Optional[Outgoing]:
        if self.start_us <= sim.t < self.start_us + self.duration_us and out.src != out.dst:
            if not self.targets or out.dst in self.targets:
                out.extra_delay += self.extra_us
        return out


@dataclass
class CrashOnSend:
    """Crash ``node`` at its ``occurrence``-th send of a message with wire tag ``tag``.

    With ``after`` the triggering handler finishes sending first (a broadcast
    goes out in full); otherwise the triggering message is lost.
    """

    node: str
    tag: str
    after: bool = False
    occurrence: int = 1
    seen: int = 0
    fired: bool = False
    _last_t: int = field(default=-1, repr=False)

    def intercept(self, sim: Simulator, out: Outgoing) -> Optional[Outgoing]:
        if out.src != self.node or self.fired or tag_name(out.msg) != self.tag:
            return out
        if sim.t != self._last_t:
            # count one occurrence per handler invocation, not per recipient
            self._last_t = sim.t
            self.seen += 1
        if self.seen < self.occurrence:
            return out
        self.fired = True
        if self.after:
            sim.schedule(sim.t, sim.crash, self.node)
            return out
        sim.crash(self.node)
        return None


def install_faults(sim: Simulator, specs: list[FaultSpec],
                   force_repair: Callable[[], None]) -> list[Any]:
    installed: list[Any] = []
    for s in specs:
        if s.kind is FaultKind.CRASH:
            sim.schedule(s.at_us, sim.crash, s.node)
        elif s.kind is FaultKind.FORCE_REPAIR:
            sim.schedule(s.at_us, force_repair)
        else:
            icp: Any
            if s.kind is FaultKind.CRASH_ON_SEND:
                icp = CrashOnSend(s.node, s.tag, s.after, s.occurrence)
            elif s.kind is FaultKind.SILENT_TO:
                icp = SilentTo(s.node, s.targets)
            elif s.kind is FaultKind.EQUIVOCATE_SPEC_REPLY:
                icp = EquivocateSpecReply(s.node)
            elif s.kind is FaultKind.PROXY_WITHHOLD:
                end = s.at_us + s.duration_us if s.duration_us else 0
                icp = ProxyWithhold(s.node, s.targets, s.at_us, end)
            else:
                icp = DelayBurst(s.at_us, s.duration_us, s.extra_us, s.targets)
            sim.interceptors.append(icp)
            installed.append(icp)
    return installed
