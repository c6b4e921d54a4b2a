"""Scenario files: INI text that maps one-to-one onto :class:`Scenario`.

Example::

    [cluster]
    f = 1
    p = 1
    gamma = 0.25
    delta_ms = 40

    [sim]
    seed = 7
    drain_ms = 1500

    [workload]
    clients = 4
    requests = 50

    [link.c*->p*]
    model = constant
    base_ms = 0

    [link.default]
    model = uniform
    base_ms = 10
    a_ms = 0
    b_ms = 4
    drop = 0.01

    [node r2]
    offset_ms = 0.3
    drift_ppm = 15

    [fault.1]
    kind = force-repair
    at_ms = 400
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from aspen.core.config import Config, ConfigError, ms_to_us
from aspen.simnet.faults import FaultKind, FaultSpec, validate_faults
from aspen.simnet.sim import ClockSkew, DelayKind, LinkModel


@dataclass(frozen=True)
class WorkloadSpec:
    clients: int = 4
    proxies: int = 1
    mode: str = "closed"
    requests: int = 50
    rate: float = 100.0
    outstanding: int = 1
    start_ms: float = 0.0


@dataclass
class Scenario:
    cluster: Config = field(default_factory=Config)
    app: str = "counter"
    seed: int = 0
    gst_ms: float = 0.0
    max_time_ms: float = 60_000.0
    drain_ms: float = 1_500.0
    trace_messages: bool = False
    default_link: LinkModel = field(default_factory=lambda: LinkModel(DelayKind.CONSTANT, ms_to_us(10)))
    links: list[tuple[str, LinkModel]] = field(default_factory=list)
    skews: dict[str, ClockSkew] = field(default_factory=dict)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    faults: list[FaultSpec] = field(default_factory=list)
    name: str = "scenario"

    def validate(self) -> None:
        if self.workload.clients < 1 or self.workload.proxies < 1:
            raise ConfigError("need at least one client and one proxy")
        if self.workload.mode not in ("closed", "open"):
            raise ConfigError(f"unknown workload mode {self.workload.mode!r}")
        validate_faults(self.faults, self.cluster.f)


def _link_from(section: configparser.SectionProxy) -> LinkModel:
    return LinkModel(
        kind=DelayKind(section.get("model", "constant").strip()),
        base=ms_to_us(section.getfloat("base_ms", 0.0)),
        a=ms_to_us(section.getfloat("a_ms", 0.0)),
        b=ms_to_us(section.getfloat("b_ms", 0.0)),
        mu=section.getfloat("mu", 0.0),
        sigma=section.getfloat("sigma", 0.0),
        spike_prob=section.getfloat("spike_prob", 0.0),
        extra=ms_to_us(section.getfloat("extra_ms", 0.0)),
        drop=section.getfloat("drop", 0.0),
    )


def _fault_from(section: configparser.SectionProxy) -> FaultSpec:
    targets = tuple(t.strip() for t in section.get("targets", "").split(",") if t.strip())
    return FaultSpec(
        kind=FaultKind(section["kind"].strip()),
        node=section.get("node", "").strip(),
        at_us=ms_to_us(section.getfloat("at_ms", 0.0)),
        duration_us=ms_to_us(section.getfloat("duration_ms", 0.0)),
        extra_us=ms_to_us(section.getfloat("extra_ms", 0.0)),
        targets=targets,
        tag=section.get("tag", "").strip(),
        after=section.getboolean("after", False),
        occurrence=section.getint("occurrence", 1),
    )


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # type: ignore[assignment]
    cp.read_string(text)
    scn = Scenario(name=name)
    if cp.has_section("cluster"):
        values: dict[str, Any] = dict(cp["cluster"])
        scn.app = values.pop("app", scn.app).strip()
        scn.cluster = Config.from_mapping(values)
    if cp.has_section("sim"):
        sim = cp["sim"]
        scn.seed = sim.getint("seed", scn.seed)
        scn.gst_ms = sim.getfloat("gst_ms", scn.gst_ms)
        scn.max_time_ms = sim.getfloat("max_time_ms", scn.max_time_ms)
        scn.drain_ms = sim.getfloat("drain_ms", scn.drain_ms)
        scn.trace_messages = sim.getboolean("trace_messages", scn.trace_messages)
    if cp.has_section("workload"):
        wl = cp["workload"]
        scn.workload = WorkloadSpec(
            clients=wl.getint("clients", 4),
            proxies=wl.getint("proxies", 1),
            mode=wl.get("mode", "closed").strip(),
            requests=wl.getint("requests", 50),
            rate=wl.getfloat("rate", 100.0),
            outstanding=wl.getint("outstanding", 1),
            start_ms=wl.getfloat("start_ms", 0.0),
        )
    for sec in cp.sections():
        if sec == "link.default":
            scn.default_link = _link_from(cp[sec])
        elif sec.startswith("link."):
            scn.links.append((sec[len("link."):], _link_from(cp[sec])))
        elif sec.startswith("node "):
            node = cp[sec]
            scn.skews[sec[len("node "):].strip()] = ClockSkew(
                ms_to_us(node.getfloat("offset_ms", 0.0)), node.getfloat("drift_ppm", 0.0))
        elif sec.startswith("fault."):
            scn.faults.append(_fault_from(cp[sec]))
        elif sec not in ("cluster", "sim", "workload"):
            raise ConfigError(f"unknown scenario section [{sec}]")
    scn.validate()
    return scn


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)
