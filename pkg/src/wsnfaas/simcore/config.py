"""Scenario configuration: device counts, time base, radio, energy and signals.

A scenario file is a YAML mapping; every key is optional and falls back to
the defaults below (the 10/40/100 smart-city deployment at 100 ms ticks).
See ``docs/schema.md`` for the full schema.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigError

MS_PER_MINUTE = 60_000


@dataclass(frozen=True)
class SensorSignal:
    baseline: float
    amplitude: float
    period_s: float
    noise: float


DEFAULT_SIGNALS = {
    "temperature": SensorSignal(20.0, 5.0, 86_400.0, 0.3),
    "pm25": SensorSignal(35.0, 15.0, 3_600.0, 2.0),
    "humidity": SensorSignal(55.0, 10.0, 86_400.0, 1.0),
}


@dataclass(frozen=True)
class EnergyConfig:
    budget_j: float = 1000.0
    per_acquisition_j: float = 0.001
    per_transmit_hop_j: float = 0.002
    idle_per_tick_j: float = 0.000001


@dataclass(frozen=True)
class MonitorConfig:
    silent_after: int = 3
    loss_window_s: float = 3600.0
    confirmation_periods: int = 2
    min_loss_samples: int = 20
    interval_s: float = 60.0


@dataclass
class ScenarioConfig:
    seed: int = 42
    tick_millis: int = 100
    edge: int = 10
    infrastructure: int = 40
    constrained: int = 100
    gateways: int | None = None
    # W per device class (acquisitions per minute)
    capacity: dict[str, int] = field(
        default_factory=lambda: {"constrained": 600, "infrastructure": 600, "edge": 600}
    )
    channel_count: int = 4
    interference: list[float] | None = None
    interference_seed: int | None = None
    loss_rates: list[float] | None = None
    initial_channel: int = 0
    scan_on_deploy: bool = True
    relay_fraction: float = 0.3
    node_sensors: list[str] = field(default_factory=lambda: ["temperature", "pm25", "humidity"])
    infrastructure_actuators: list[str] = field(default_factory=lambda: ["lane_signal"])
    signals: dict[str, SensorSignal] = field(default_factory=lambda: dict(DEFAULT_SIGNALS))
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    tiers: dict[int, dict[str, Any]] = field(default_factory=dict)
    limits: dict[str, int] = field(default_factory=dict)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    deferral_bound_ticks: int = 10
    faults: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    # -- derived quantities -------------------------------------------------

    @property
    def ticks_per_minute(self) -> int:
        return MS_PER_MINUTE // self.tick_millis

    @property
    def gateway_count(self) -> int:
        if self.gateways is not None:
            return self.gateways
        return max(1, self.infrastructure // 10) if self.infrastructure else 0

    def seconds_to_ticks(self, seconds: float) -> int:
        return max(1, round(seconds * 1000 / self.tick_millis))

    def channel_interference(self) -> list[float]:
        if self.interference is not None:
            return list(self.interference)
        if self.interference_seed is not None:
            import random

            rng = random.Random(self.interference_seed)
            return [rng.random() for _ in range(self.channel_count)]
        return [0.0] * self.channel_count

    def channel_loss_rates(self) -> list[float]:
        """Per-hop loss probability per channel; defaults to the interference level."""
        if self.loss_rates is None:
            return self.channel_interference()
        return list(self.loss_rates)

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        if self.tick_millis < 1 or MS_PER_MINUTE % self.tick_millis:
            raise ConfigError("tick_millis must be a positive divisor of 60000")
        for cls in ("constrained", "infrastructure", "edge"):
            w = self.capacity.get(cls)
            if w is None or int(w) < 1:
                raise ConfigError(f"capacity for {cls} must be >= 1")
            if self.tick_millis * int(w) > MS_PER_MINUTE:
                raise ConfigError(
                    f"capacity {w}/min for {cls} exceeds one acquisition per {self.tick_millis} ms tick"
                )
        if self.channel_count < 1:
            raise ConfigError("channel_count must be >= 1")
        for name, vec in (("interference", self.interference), ("loss_rates", self.loss_rates)):
            if vec is None:
                continue
            if len(vec) != self.channel_count:
                raise ConfigError(f"{name} must list {self.channel_count} values")
            if any(not 0.0 <= float(v) <= 1.0 for v in vec):
                raise ConfigError(f"{name} values must lie in [0, 1]")
        if not 0 <= self.initial_channel < self.channel_count:
            raise ConfigError("initial_channel out of range")
        if not 0.0 <= self.relay_fraction <= 1.0:
            raise ConfigError("relay_fraction must lie in [0, 1]")
        missing = [s for s in self.node_sensors if s not in self.signals]
        if missing:
            raise ConfigError(f"no signal parameters for sensors {missing}")
        if self.deferral_bound_ticks < 1:
            raise ConfigError("deferral_bound_ticks must be >= 1")

    # -- (de)serialisation --------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict[str, Any] | None) -> "ScenarioConfig":
        raw = copy.deepcopy(raw or {})
        if not isinstance(raw, dict):
            raise ConfigError("scenario must be a mapping")
        kwargs: dict[str, Any] = {}
        try:
            devices = raw.pop("devices", {}) or {}
            for key in ("edge", "infrastructure", "constrained", "gateways"):
                if key in devices:
                    kwargs[key] = int(devices.pop(key))
            if devices:
                raise ConfigError(f"unknown device keys {sorted(devices)}")

            channels = raw.pop("channels", {}) or {}
            mapping = {
                "count": "channel_count",
                "interference": "interference",
                "interference_seed": "interference_seed",
                "loss_rates": "loss_rates",
                "initial": "initial_channel",
                "scan_on_deploy": "scan_on_deploy",
            }
            for key, value in channels.items():
                if key not in mapping:
                    raise ConfigError(f"unknown channel key {key!r}")
                kwargs[mapping[key]] = value
            lr = kwargs.get("loss_rates")
            if isinstance(lr, (int, float)):
                kwargs["loss_rates"] = [float(lr)] * int(kwargs.get("channel_count", 4))

            if "energy" in raw:
                kwargs["energy"] = EnergyConfig(**raw.pop("energy"))
            if "monitor" in raw:
                kwargs["monitor"] = MonitorConfig(**raw.pop("monitor"))
            if "signals" in raw:
                signals = dict(DEFAULT_SIGNALS)
                for name, params in raw.pop("signals").items():
                    signals[name] = SensorSignal(**params)
                kwargs["signals"] = signals
            if "capacity" in raw:
                capacity = {"constrained": 600, "infrastructure": 600, "edge": 600}
                capacity.update({k: int(v) for k, v in raw.pop("capacity").items()})
                kwargs["capacity"] = capacity
            if "tiers" in raw:
                kwargs["tiers"] = {int(k): dict(v) for k, v in raw.pop("tiers").items()}

            known = set(cls.__dataclass_fields__)
            for key, value in raw.items():
                if key not in known:
                    raise ConfigError(f"unknown scenario key {key!r}")
                kwargs[key] = value
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"scenario {path} is not valid YAML: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "seed": self.seed,
            "tick_millis": self.tick_millis,
            "devices": {
                "edge": self.edge,
                "infrastructure": self.infrastructure,
                "constrained": self.constrained,
                "gateways": self.gateway_count,
            },
            "capacity": dict(self.capacity),
            "channels": {
                "count": self.channel_count,
                "interference": self.channel_interference(),
                "loss_rates": self.channel_loss_rates(),
                "initial": self.initial_channel,
                "scan_on_deploy": self.scan_on_deploy,
            },
            "relay_fraction": self.relay_fraction,
            "node_sensors": list(self.node_sensors),
            "infrastructure_actuators": list(self.infrastructure_actuators),
            "signals": {k: vars(v).copy() for k, v in sorted(self.signals.items())},
            "energy": vars(self.energy).copy(),
            "tiers": {k: dict(v) for k, v in sorted(self.tiers.items())},
            "limits": dict(self.limits),
            "monitor": vars(self.monitor).copy(),
            "deferral_bound_ticks": self.deferral_bound_ticks,
            "faults": [dict(f) for f in self.faults],
        }
        return out
