"""Sniffer: compare the packets the network should send with what arrived.

The expected timeline comes straight from the schedules the middleware
emitted; the observed log is the set of packets that reached a gateway,
keyed by the tick at which they were demanded.  Differences become
anomalies, and anomalies become maintenance actions: a restart first, a
field replacement only when the restart did not bring the node back.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import WindowMismatch
from .lifecycle import LifecycleLedger
from .simcore.config import MonitorConfig
from .simcore.engine import SetSchedule
from .simcore.program import TickProgram
from .simcore.topology import COMPUTE

Key = tuple[str, str]
Window = tuple[int, int]

NODE_SILENT = "NodeSilent"
EXCESS_LOSS = "ExcessLoss"
UNEXPECTED_PACKET = "UnexpectedPacket"

RESTART = "Restart"
FIELD_REPLACE = "FieldReplace"
CHANNEL_RESCAN = "ChannelRescan"
ACTION_LEVELS = {RESTART: 1, FIELD_REPLACE: 3}

DEFAULT_TOLERATED = {1: 0.01, 2: 0.05, 3: 0.10}


# -- expected behaviour -----------------------------------------------------

@dataclass(frozen=True)
class DispatchEntry:
    """A schedule the middleware sent, effective from ``tick`` until replaced."""

    tick: int
    instruction: SetSchedule
    tier: int = 3


@dataclass(frozen=True)
class ExpectedTimeline:
    window: Window
    ticks: Mapping[Key, tuple[int, ...]]
    periods: Mapping[Key, int] = field(default_factory=dict)
    tiers: Mapping[Key, int] = field(default_factory=dict)

    def count(self) -> int:
        return sum(len(t) for t in self.ticks.values())


def _segments(dispatch_log: Iterable[DispatchEntry | SetSchedule]):
    per_key: dict[Key, list[DispatchEntry]] = {}
    for entry in dispatch_log:
        if isinstance(entry, SetSchedule):
            entry = DispatchEntry(0, entry)
        ins = entry.instruction
        per_key.setdefault((ins.node, ins.sensor), []).append(entry)
    return per_key


def expected_behavior(dispatch_log: Iterable[DispatchEntry | SetSchedule],
                      window: Window) -> ExpectedTimeline:
    """Union-schedule ticks per (node, sensor) inside the half-open window.

    Each schedule holds from its dispatch tick until the next one for the
    same key, so cancelled subscriptions stop contributing at once.
    """
    start, end = window
    ticks: dict[Key, tuple[int, ...]] = {}
    periods: dict[Key, int] = {}
    tiers: dict[Key, int] = {}
    for key, entries in sorted(_segments(dispatch_log).items()):
        if key[1] == COMPUTE:
            continue
        entries = sorted(entries, key=lambda e: e.tick)
        found: list[int] = []
        for i, entry in enumerate(entries):
            seg_end = entries[i + 1].tick if i + 1 < len(entries) else end
            lo, hi = max(start, entry.tick), min(end, seg_end)
            program: TickProgram = entry.instruction.program
            if lo < hi and program:
                found.extend(program.ticks_in(lo, hi))
        last = entries[-1]
        if found:
            ticks[key] = tuple(found)
            periods[key] = min(t.period for t in last.instruction.program.terms) \
                if last.instruction.program else 1
            tiers[key] = last.tier
    return ExpectedTimeline((start, end), ticks, periods, tiers)


# -- observations -----------------------------------------------------------

@dataclass(frozen=True)
class Packet:
    node: str
    sensor: str
    tick: int
    delivered_tick: int | None = None


@dataclass(frozen=True)
class ObservedLog:
    window: Window
    packets: tuple[Packet, ...] = ()

    @classmethod
    def of(cls, window: Window, packets: Iterable[Packet]) -> "ObservedLog":
        lo, hi = window
        return cls(window, tuple(p for p in packets if lo <= p.tick < hi))

    @classmethod
    def from_timeline(cls, timeline: ExpectedTimeline) -> "ObservedLog":
        return cls(timeline.window, tuple(Packet(n, s, t) for (n, s), ts in
                                          sorted(timeline.ticks.items()) for t in ts))


# -- anomalies --------------------------------------------------------------

@dataclass(frozen=True)
class MonitorThresholds:
    silent_after: int = 3
    loss_window_ticks: int = 36_000
    confirmation_periods: int = 2
    min_loss_samples: int = 20
    tolerated_failure: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_TOLERATED))

    @classmethod
    def from_config(cls, monitor: MonitorConfig, ticks_per_second: float,
                    tolerated: Mapping[int, float] | None = None) -> "MonitorThresholds":
        return cls(
            silent_after=monitor.silent_after,
            loss_window_ticks=max(1, round(monitor.loss_window_s * ticks_per_second)),
            confirmation_periods=monitor.confirmation_periods,
            min_loss_samples=monitor.min_loss_samples,
            tolerated_failure=dict(tolerated or DEFAULT_TOLERATED),
        )


@dataclass(frozen=True)
class Anomaly:
    kind: str
    node: str
    first_tick: int
    evidence: Mapping = field(default_factory=dict)

    @property
    def consecutive_misses(self) -> int | None:
        return self.evidence.get("consecutiveMisses")

    @property
    def rate(self) -> float | None:
        return self.evidence.get("rate")

    def sort_key(self) -> tuple:
        return (self.first_tick, self.node, self.kind, json.dumps(self.evidence, sort_keys=True))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "node": self.node, "firstTick": self.first_tick,
                "evidence": dict(self.evidence)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _silences(node: str, expected: Sequence[int], delivered: set[int], seen: Sequence[int],
              k: int, periods: int) -> list[Anomaly]:
    """k consecutive missed node ticks raise one NodeSilent; the count restarts after."""
    out = []
    run: list[int] = []
    last_delivery: int | None = None
    events = sorted({(t, 0) for t in expected} | {(t, 1) for t in seen})
    for tick, is_seen in events:
        if is_seen or tick in delivered:
            if is_seen:
                last_delivery = tick
                run = []
            continue
        run.append(tick)
        if len(run) == k:
            out.append(Anomaly(NODE_SILENT, node, tick, {
                "consecutiveMisses": k, "missedTicks": list(run), "period": periods,
                "lastDelivery": last_delivery,
            }))
            run = []
    return out


def _losses(key: Key, expected: Sequence[int], delivered: set[int], tolerated: float,
            th: MonitorThresholds) -> list[Anomaly]:
    """Windowed miss rate, judged at each delivered tick (the node is then known alive)."""
    out = []
    window: deque[tuple[int, bool]] = deque()
    missed = 0
    open_episode = False
    for tick in expected:
        hit = tick in delivered
        window.append((tick, hit))
        missed += not hit
        while window[0][0] <= tick - th.loss_window_ticks:
            missed -= not window.popleft()[1]
        if not hit:
            continue
        n = len(window)
        rate = missed / n
        if n >= th.min_loss_samples and rate > tolerated:
            if not open_episode:
                out.append(Anomaly(EXCESS_LOSS, key[0], tick, {
                    "sensor": key[1], "rate": rate, "expected": n, "missed": missed,
                    "tolerated": tolerated,
                }))
                open_episode = True
        else:
            open_episode = False
    return out


def diff(expected: ExpectedTimeline, observed: ObservedLog,
         thresholds: MonitorThresholds = MonitorThresholds()) -> list[Anomaly]:
    if tuple(expected.window) != tuple(observed.window):
        raise WindowMismatch(f"expected covers {expected.window}, observed {observed.window}")
    seen_by_key: dict[Key, set[int]] = {}
    for p in observed.packets:
        seen_by_key.setdefault((p.node, p.sensor), set()).add(p.tick)

    anomalies: list[Anomaly] = []
    for key in sorted(seen_by_key):
        allowed = set(expected.ticks.get(key, ()))
        for tick in sorted(seen_by_key[key] - allowed):
            anomalies.append(Anomaly(UNEXPECTED_PACKET, key[0], tick, {"sensor": key[1],
                                                                         "tick": tick}))

    node_expected: dict[str, set[int]] = {}
    node_seen: dict[str, set[int]] = {}
    node_period: dict[str, int] = {}
    for key, ticks in expected.ticks.items():
        node_expected.setdefault(key[0], set()).update(ticks)
        node_period[key[0]] = min(node_period.get(key[0], expected.periods.get(key, 1)),
                                  expected.periods.get(key, 1))
    for key, ticks in seen_by_key.items():
        node_seen.setdefault(key[0], set()).update(ticks)

    for node in sorted(node_expected):
        seen = node_seen.get(node, set())
        exp = sorted(node_expected[node])
        anomalies.extend(_silences(node, exp, seen, sorted(seen), thresholds.silent_after,
                                   node_period[node]))

    for key in sorted(expected.ticks):
        tier = expected.tiers.get(key, 3)
        tolerated = thresholds.tolerated_failure.get(tier, DEFAULT_TOLERATED[3])
        anomalies.extend(_losses(key, expected.ticks[key], seen_by_key.get(key, set()),
                                 tolerated, thresholds))
    return sorted(anomalies, key=Anomaly.sort_key)


# -- maintenance ------------------------------------------------------------

@dataclass(frozen=True)
class MaintenanceAction:
    kind: str
    node: str
    tick: int
    reason: str = ""

    @property
    def cost_level(self) -> int | None:
        return ACTION_LEVELS.get(self.kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "node": self.node, "tick": self.tick,
                "costLevel": self.cost_level, "reason": self.reason}


def maintenance_action(anomaly: Anomaly, history: Sequence[MaintenanceAction],
                       ledger: LifecycleLedger | None = None,
                       thresholds: MonitorThresholds = MonitorThresholds(),
                       tick: int | None = None) -> MaintenanceAction | None:
    """Choose the response to one anomaly and post its cost.

    NodeSilent gets a Restart unless the previous action on the node was a
    Restart that the node never answered: no delivery since, and the new run
    of misses began inside the confirmation window.  That case escalates to
    FieldReplace.  ExcessLoss only recommends a channel rescan.
    """
    when = anomaly.first_tick if tick is None else tick
    if anomaly.kind == EXCESS_LOSS:
        return MaintenanceAction(CHANNEL_RESCAN, anomaly.node, when, EXCESS_LOSS)
    if anomaly.kind != NODE_SILENT:
        return None
    previous = [a for a in history if a.node == anomaly.node and a.kind in ACTION_LEVELS]
    kind = RESTART
    if previous and previous[-1].kind == RESTART:
        restart_tick = previous[-1].tick
        ev = anomaly.evidence
        last_delivery = ev.get("lastDelivery")
        first_miss = ev.get("missedTicks", [anomaly.first_tick])[0]
        confirm = thresholds.confirmation_periods * ev.get("period", 1)
        silent_since = last_delivery is None or last_delivery < restart_tick
        if silent_since and first_miss <= restart_tick + confirm:
            kind = FIELD_REPLACE
    action = MaintenanceAction(kind, anomaly.node, when, NODE_SILENT)
    if ledger is not None:
        ledger.post(when, anomaly.node, kind, ACTION_LEVELS[kind])
    return action


def escalation_ok(history: Iterable[MaintenanceAction]) -> bool:
    """Every FieldReplace follows a Restart of the same node with nothing between."""
    last: dict[str, str] = {}
    for action in history:
        if action.kind not in ACTION_LEVELS:
            continue
        if action.kind == FIELD_REPLACE and last.get(action.node) != RESTART:
            return False
        last[action.node] = action.kind
    return True
