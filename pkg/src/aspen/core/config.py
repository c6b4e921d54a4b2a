from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any


def ms_to_us(ms: float) -> int:
    return int(round(ms * 1000))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    """Cluster-wide protocol parameters.

    Durations are given in milliseconds (matching how operators think about
    them) and converted to integer microseconds by the ``*_us`` properties,
    which is the unit every clock and timer in the package uses.
    """

    f: int = 1
    p: int = 1
    n: int = field(default=0)
    interval: int = 32
    sync_timeout_ms: float = 50.0
    chkpt_timeout_ms: float = 100.0
    view_change_timeout_ms: float = 200.0
    gamma: float = 0.25
    delta_ms: float = 100.0
    q: float = 90.0
    window_size: int = 50
    eta_overwrite_threshold_ms: float = 0.0
    probe_interval_ms: float = 100.0
    retransmit_ms: float = 0.0
    align: bool = True
    crypto: str = "null"

    def __post_init__(self) -> None:
        if self.n == 0:
            object.__setattr__(self, "n", 3 * self.f + 2 * self.p + 1)
        if self.eta_overwrite_threshold_ms <= 0:
            object.__setattr__(self, "eta_overwrite_threshold_ms", 2 * self.delta_ms)
        if self.retransmit_ms <= 0:
            object.__setattr__(self, "retransmit_ms", 4 * self.delta_ms)
        self.validate()

    def validate(self) -> None:
        if self.f < 0 or self.p < 0:
            raise ConfigError("f and p must be nonnegative")
        if self.n != 3 * self.f + 2 * self.p + 1:
            raise ConfigError(f"n={self.n} but 3f+2p+1={3 * self.f + 2 * self.p + 1}")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if not 0 < self.q <= 100:
            raise ConfigError("q must lie in (0, 100]")
        if self.interval < 1:
            raise ConfigError("checkpoint interval must be >= 1")
        if self.window_size < 1:
            raise ConfigError("window_size must be >= 1")
        if self.crypto not in ("null", "ed25519"):
            raise ConfigError(f"unknown crypto mode {self.crypto!r}")

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "Config":
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(known[name].type, raw)
        return cls(**kwargs)

    def with_(self, **changes: Any) -> "Config":
        # n and the derived defaults must be recomputed when f/p/delta change
        base = {"n": 0} if ("f" in changes or "p" in changes) and "n" not in changes else {}
        if "delta_ms" in changes:
            base.setdefault("eta_overwrite_threshold_ms", 0.0)
            base.setdefault("retransmit_ms", 0.0)
        return replace(self, **{**base, **changes})

    @property
    def fast_quorum(self) -> int:
        return fast_quorum_size(self)

    @property
    def repair_quorum(self) -> int:
        return self.n - self.f

    @property
    def sync_timeout_us(self) -> int:
        return ms_to_us(self.sync_timeout_ms)

    @property
    def chkpt_timeout_us(self) -> int:
        return ms_to_us(self.chkpt_timeout_ms)

    @property
    def view_change_timeout_us(self) -> int:
        return ms_to_us(self.view_change_timeout_ms)

    @property
    def delta_us(self) -> int:
        return ms_to_us(self.delta_ms)

    @property
    def eta_overwrite_threshold_us(self) -> int:
        return ms_to_us(self.eta_overwrite_threshold_ms)

    @property
    def probe_interval_us(self) -> int:
        return ms_to_us(self.probe_interval_ms)

    @property
    def retransmit_us(self) -> int:
        return ms_to_us(self.retransmit_ms)


def _coerce(typ: Any, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    t = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if t == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw.strip()


def fast_quorum_size(cfg: Config) -> int:
    return cfg.n - cfg.p
