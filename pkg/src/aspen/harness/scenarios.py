"""Scenario builders used by the acceptance suite and the CLI."""
from __future__ import annotations

import random
from typing import Optional

from aspen.core.config import Config, ms_to_us
from aspen.simnet.faults import FaultKind, FaultSpec
from aspen.simnet.scenario import Scenario, WorkloadSpec
from aspen.simnet.sim import ClockSkew, DelayKind, LinkModel

# clients sit next to their proxy
COLOCATED = [
    ("c*->p*", LinkModel(DelayKind.CONSTANT, 0)),
    ("p*->c*", LinkModel(DelayKind.CONSTANT, 0)),
]


def baseline(seed: int = 1, one_way_ms: float = 10.0, gamma: float = 0.25, delta_ms: float = 50.0,
             clients: int = 4, requests: int = 50, warmup_ms: float = 0.0, **cluster: object) -> Scenario:
    """Zero-jitter network with a constant one-way delay between all nodes."""
    return Scenario(
        cluster=Config(gamma=gamma, delta_ms=delta_ms, **cluster),  # type: ignore[arg-type]
        seed=seed,
        default_link=LinkModel(DelayKind.CONSTANT, ms_to_us(one_way_ms)),
        links=list(COLOCATED),
        workload=WorkloadSpec(clients=clients, requests=requests, start_ms=warmup_ms),
        name="baseline",
    )


def random_safety(seed: int, requests: int = 25, clients: int = 3) -> Scenario:
    """f=1, p=1 with jitter, drops, skew, one Byzantine replica and forced repairs."""
    rng = random.Random(seed)
    byz = f"r{rng.randrange(6)}"
    behaviour = rng.choice([FaultKind.EQUIVOCATE_SPEC_REPLY, FaultKind.SILENT_TO])
    faults = [FaultSpec(behaviour, node=byz)]
    for _ in range(rng.randint(1, 3)):
        faults.append(FaultSpec(FaultKind.FORCE_REPAIR, at_us=ms_to_us(rng.uniform(50, 900))))
    link = LinkModel(DelayKind.UNIFORM, ms_to_us(rng.uniform(2, 10)), 0,
                     ms_to_us(rng.uniform(1, 20)), drop=rng.uniform(0, 0.05))
    skews = {f"r{r}": ClockSkew(ms_to_us(rng.uniform(-1, 1)), rng.uniform(-50, 50)) for r in range(6)}
    cfg = Config(f=1, p=1, interval=rng.choice([4, 8, 16, 32]), gamma=rng.choice([0.0, 0.1, 0.25, 0.5]),
                 delta_ms=rng.uniform(20, 60), sync_timeout_ms=40, chkpt_timeout_ms=80,
                 view_change_timeout_ms=150)
    return Scenario(
        cluster=cfg,
        app=rng.choice(["counter", "kv"]),
        seed=seed,
        gst_ms=1500,
        max_time_ms=30_000,
        drain_ms=1_000,
        default_link=link,
        links=list(COLOCATED),
        skews=skews,
        workload=WorkloadSpec(clients=clients, requests=requests, outstanding=rng.choice([1, 2])),
        faults=faults,
        name=f"safety-{seed}",
    )


def jitter(seed: int, f: int = 1, p: int = 1, gamma: float = 0.25, align: bool = True,
           requests: int = 60, clients: int = 4, spike_prob: float = 0.02, extra_ms: float = 20.0,
           base_ms: float = 10.0, jitter_ms: float = 4.0, delta_ms: float = 50.0,
           duration_ms: Optional[float] = None) -> Scenario:
    """Uniform base jitter plus occasional per-message delay spikes on proxy links."""
    cfg = Config(f=f, p=p, gamma=gamma, align=align, delta_ms=delta_ms, interval=8,
                 sync_timeout_ms=40, chkpt_timeout_ms=80, view_change_timeout_ms=150)
    links = list(COLOCATED)
    links.append(("p*->r*", LinkModel(DelayKind.SPIKE, ms_to_us(base_ms), spike_prob=spike_prob,
                                      extra=ms_to_us(extra_ms))))
    return Scenario(
        cluster=cfg,
        seed=seed,
        default_link=LinkModel(DelayKind.UNIFORM, ms_to_us(base_ms), 0, ms_to_us(jitter_ms)),
        links=links,
        workload=WorkloadSpec(clients=clients, requests=requests, start_ms=300),
        max_time_ms=duration_ms or 60_000,
        name=f"jitter-n{cfg.n}-g{gamma}-{'align' if align else 'noalign'}-{seed}",
    )


def gamma_sweep(seed: int, gamma: float, requests: int = 60, clients: int = 4) -> Scenario:
    """Proxy-to-replica delays with a lognormal tail, so the ETA margin matters."""
    cfg = Config(f=1, p=1, gamma=gamma, delta_ms=80, interval=8, sync_timeout_ms=40,
                 chkpt_timeout_ms=80, view_change_timeout_ms=150)
    links = list(COLOCATED)
    links.append(("p*->r*", LinkModel(DelayKind.LOGNORMAL, ms_to_us(8), mu=1.0, sigma=1.0)))
    return Scenario(
        cluster=cfg,
        seed=seed,
        default_link=LinkModel(DelayKind.UNIFORM, ms_to_us(10), 0, ms_to_us(2)),
        links=links,
        workload=WorkloadSpec(clients=clients, requests=requests, start_ms=600),
        name=f"gamma-{gamma}-{seed}",
    )


def burst(seed: int = 1, extra_ms: float = 40.0, duration_ms: float = 100.0, at_ms: float = 1000.0,
          targets: tuple[str, ...] = ("r4", "r5"), rate: float = 100.0, requests: int = 200) -> Scenario:
    """Steady open-loop load with a short delay burst on the links into two replicas."""
    scn = baseline(seed=seed, clients=4, requests=requests, warmup_ms=300)
    scn.cluster = scn.cluster.with_(interval=8, sync_timeout_ms=40, chkpt_timeout_ms=80,
                                    view_change_timeout_ms=150)
    scn.workload = WorkloadSpec(clients=4, requests=requests, mode="open", rate=rate, start_ms=300)
    scn.faults = [FaultSpec(FaultKind.DELAY_BURST, at_us=ms_to_us(at_ms), duration_us=ms_to_us(duration_ms),
                            extra_us=ms_to_us(extra_ms), targets=targets)]
    scn.name = f"burst-{seed}"
    return scn


def durability(seed: int, requests: int = 40, clients: int = 4) -> Scenario:
    """Open-loop load over a jittery network with repairs forced while requests are in flight."""
    rng = random.Random(seed)
    cfg = Config(f=1, p=1, interval=rng.choice([4, 8, 16]), gamma=0.25, delta_ms=40, sync_timeout_ms=40,
                 chkpt_timeout_ms=80, view_change_timeout_ms=150)
    start_ms = 200.0
    rate = rng.uniform(50, 200)
    span_ms = requests / rate * 1000
    faults = [FaultSpec(FaultKind.FORCE_REPAIR, at_us=ms_to_us(start_ms + rng.uniform(0.1, 0.9) * span_ms))
              for _ in range(rng.randint(1, 3))]
    return Scenario(
        cluster=cfg,
        app=rng.choice(["counter", "kv"]),
        seed=seed,
        default_link=LinkModel(DelayKind.UNIFORM, ms_to_us(rng.uniform(3, 10)), 0, ms_to_us(rng.uniform(1, 6))),
        links=list(COLOCATED),
        workload=WorkloadSpec(clients=clients, requests=requests, mode="open", rate=rate, start_ms=start_ms),
        faults=faults,
        max_time_ms=30_000,
        name=f"durability-{seed}",
    )
