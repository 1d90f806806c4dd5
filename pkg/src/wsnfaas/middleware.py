"""Merge per-user subscriptions into physical schedules and split results back.

For every (node, sensor) the node acquires at the *union* of its
subscribers' ticks, not at the gcd of their periods: the union is the
smallest acquisition set that still serves every subscriber.  Trigger
thresholds are pushed down to the node so it can tag which ones fired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import HyperperiodOverflow, OrphanReading
from .functions import Subscription
from .simcore.engine import Instruction, Reading, SetSchedule, SetThreshold
from .simcore.program import TickProgram

MAX_TICK = 2**63 - 1

Key = tuple[str, str]


def hyperperiod(periods: Iterable[int]) -> int:
    periods = list(periods)
    if not periods:
        raise ValueError("hyperperiod of no periods")
    out = 1
    for p in periods:
        if p < 1:
            raise ValueError(f"period must be >= 1, got {p}")
        out = math.lcm(out, p)
        if out > MAX_TICK:
            raise HyperperiodOverflow(f"lcm of {periods} exceeds {MAX_TICK}")
    return out


def union_offsets(subscriptions: Iterable[Subscription], length: int) -> tuple[int, ...]:
    ticks: set[int] = set()
    for sub in subscriptions:
        ticks.update(range(sub.anchor % sub.period, length, sub.period))
    return tuple(sorted(ticks))


@dataclass(frozen=True)
class MergedSchedule:
    node: str
    resource: str
    hyperperiod: int
    offsets: tuple[int, ...]
    contributors: tuple[Subscription, ...]
    pushed_thresholds: frozenset[tuple[str, float]] = frozenset()

    @property
    def key(self) -> Key:
        return (self.node, self.resource)

    @property
    def program(self) -> TickProgram:
        return TickProgram.of(c.term for c in self.contributors)

    @property
    def tier(self) -> int:
        return min((c.tier for c in self.contributors), default=3)

    def demanders(self, tick: int) -> list[Subscription]:
        return [c for c in self.contributors if c.demands(tick)]

    def naive_count(self) -> int:
        """Acquisitions per hyperperiod if every subscriber sampled on its own."""
        return sum(self.hyperperiod // c.period for c in self.contributors)


def merge_key(node: str, resource: str, subscriptions: Iterable[Subscription]) -> MergedSchedule:
    subs = tuple(sorted(subscriptions))
    if not subs:
        return MergedSchedule(node, resource, 1, (), ())
    length = hyperperiod(s.period for s in subs)
    pushed = frozenset(t for s in subs if s.deliver_only_on_trigger for t in s.trigger)
    return MergedSchedule(node, resource, length, union_offsets(subs, length), subs, pushed)


def aggregate(subscriptions: Iterable[Subscription]) -> dict[Key, MergedSchedule]:
    groups: dict[Key, list[Subscription]] = {}
    for sub in subscriptions:
        groups.setdefault((sub.node, sub.resource), []).append(sub)
    return {key: merge_key(key[0], key[1], subs) for key, subs in sorted(groups.items())}


def reaggregate(schedules: Mapping[Key, MergedSchedule], subscriptions: Iterable[Subscription],
                keys: Iterable[Key]) -> dict[Key, MergedSchedule]:
    """Recompute only ``keys`` from the full subscription table.

    Keys left with no contributors map to an empty schedule so that the
    replacement can still be emitted (and clears the node).
    """
    wanted = set(keys)
    groups: dict[Key, list[Subscription]] = {k: [] for k in wanted}
    for sub in subscriptions:
        key = (sub.node, sub.resource)
        if key in wanted:
            groups[key].append(sub)
    out = dict(schedules)
    for key, subs in groups.items():
        out[key] = merge_key(key[0], key[1], subs)
    return out


def emit_instructions(schedules: Mapping[Key, MergedSchedule],
                      keys: Iterable[Key] | None = None) -> list[Instruction]:
    """One SetSchedule per key, followed by SetThreshold when thresholds are pushed.

    SetSchedule replaces whatever the node held for that key, so re-emitting
    is idempotent.
    """
    selected = sorted(schedules if keys is None else set(keys))
    out: list[Instruction] = []
    for key in selected:
        sched = schedules[key]
        out.append(SetSchedule(sched.node, sched.resource, sched.program))
        if sched.pushed_thresholds:
            out.append(SetThreshold(sched.node, sched.resource,
                                    tuple(sorted(sched.pushed_thresholds))))
    return out


@dataclass(frozen=True)
class DeliveryRecord:
    function_id: str
    user: str
    tier: int
    node: str
    sensor: str
    tick: int
    delivered_tick: int
    value: float | None
    kind: str = "sample"
    billed_units: int = 1

    @property
    def alert(self) -> bool:
        return self.kind in ("alert", "control")

    def to_dict(self) -> dict:
        out = {
            "tick": self.tick,
            "deliveredTick": self.delivered_tick,
            "user": self.user,
            "functionId": self.function_id,
            "tier": self.tier,
            "node": self.node,
            "sensor": self.sensor,
            "kind": self.kind,
            "billedUnits": self.billed_units,
        }
        if self.alert:
            out["alert"] = True
        out["value"] = self.value
        return out


_RECORD_KIND = {"periodic_collect": "sample", "threshold_alert": "alert",
                "control_rule": "control", "edge_compute": "compute"}


def fan_out(readings: Iterable[Reading], schedules: Mapping[Key, MergedSchedule],
            tick_millis: int = 100) -> list[DeliveryRecord]:
    """Split readings into per-subscriber delivery records.

    A subscriber gets a record only for ticks in its own schedule, and
    trigger-only subscribers only when their comparator held.
    """
    out: list[DeliveryRecord] = []
    for reading in readings:
        sched = schedules.get((reading.node, reading.sensor))
        tick = reading.demand_tick
        demanders = sched.demanders(tick) if sched is not None else []
        if not demanders:
            raise OrphanReading(reading.node, reading.sensor, tick)
        for sub in demanders:
            if sub.deliver_only_on_trigger and not sub.triggered(
                reading.value, tick, tick_millis, reading.fired
            ):
                continue
            out.append(DeliveryRecord(sub.function_id, sub.user, sub.tier, reading.node,
                                      reading.sensor, tick, reading.tick, reading.value,
                                      _RECORD_KIND[sub.kind]))
    return out
