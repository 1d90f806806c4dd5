"""Admission control, tiered dispatch and retry accounting.

Capacity is a node's W: acquisitions per minute.  Admission re-merges a
candidate with everything already committed on the node and counts the
union exactly, taking the busiest one-minute sliding window over the merged
hyperperiod.  Dispatch gives each node one slot per tick; lower tiers wait.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Iterable, Mapping

import numpy as np

from .functions import Subscription
from .simcore.engine import Delivered, Lost

TIERS = (1, 2, 3)
DEFAULT_MAX_WINDOW = 10_000_000


# -- tier policy ------------------------------------------------------------

@dataclass(frozen=True)
class TierPolicy:
    tier: int
    target_success_rate: float
    max_retries: int
    rate_per_acquisition: Decimal
    preempts: frozenset[int] = frozenset()

    @property
    def tolerated_failure_rate(self) -> float:
        return 1.0 - self.target_success_rate


_DEFAULTS = {
    1: dict(target_success_rate=0.99, max_retries=2, rate_per_acquisition="0.01"),
    2: dict(target_success_rate=0.95, max_retries=1, rate_per_acquisition="0.002"),
    3: dict(target_success_rate=0.90, max_retries=0, rate_per_acquisition="0.0005"),
}


def tier_policies(overrides: Mapping[int, Mapping] | None = None) -> dict[int, TierPolicy]:
    """Default policies with per-tier overrides; checks the ordering rules."""
    out = {}
    for tier in TIERS:
        params = dict(_DEFAULTS[tier])
        params.update((overrides or {}).get(tier, {}))
        out[tier] = TierPolicy(
            tier=tier,
            target_success_rate=float(params["target_success_rate"]),
            max_retries=int(params["max_retries"]),
            rate_per_acquisition=Decimal(str(params["rate_per_acquisition"])),
            preempts=frozenset(t for t in TIERS if t > tier),
        )
    if out[1].target_success_rate < 0.99:
        raise ValueError("tier 1 target success rate must be >= 0.99")
    rates = [out[t].rate_per_acquisition for t in TIERS]
    if not rates[0] > rates[1] > rates[2]:
        raise ValueError("rates must strictly decrease from tier 1 to tier 3")
    for p in out.values():
        if p.max_retries < 0 or not 0.0 <= p.target_success_rate <= 1.0:
            raise ValueError(f"invalid policy for tier {p.tier}")
    return out


# -- admission --------------------------------------------------------------

@dataclass(frozen=True)
class Accepted:
    node: str
    added_load: int
    committed: int


@dataclass(frozen=True)
class Rejected:
    reason: str
    node: str
    would_be: int | None = None
    capacity: int | None = None


def minute_load(subscriptions: Iterable[Subscription], ticks_per_minute: int,
                max_window: int = DEFAULT_MAX_WINDOW) -> int:
    """Busiest one-minute sliding window of merged acquisitions on one node.

    Each (resource, tick) pair is one acquisition; subscribers sharing a tick
    on the same resource share it.
    """
    by_resource: dict[str, list[Subscription]] = {}
    for sub in subscriptions:
        by_resource.setdefault(sub.resource, []).append(sub)
    if not by_resource:
        return 0
    length = ticks_per_minute
    for subs in by_resource.values():
        for sub in subs:
            length = math.lcm(length, sub.period)
            if length > max_window:
                raise OverflowError(f"load window {length} exceeds {max_window} ticks")
    counts = np.zeros(length, dtype=np.int64)
    for subs in by_resource.values():
        hit = np.zeros(length, dtype=bool)
        for sub in subs:
            hit[sub.anchor % sub.period::sub.period] = True
        counts += hit
    # cyclic sliding window of ticks_per_minute
    extended = np.concatenate([counts, counts[: ticks_per_minute - 1]])
    csum = np.concatenate([[0], np.cumsum(extended)])
    windows = csum[ticks_per_minute:ticks_per_minute + length] - csum[:length]
    return int(windows.max())


@dataclass
class LoadBook:
    capacity: dict[str, int]
    ticks_per_minute: int
    committed: dict[str, list[Subscription]] = field(default_factory=dict)
    max_window: int = DEFAULT_MAX_WINDOW

    def subscriptions(self, node: str) -> list[Subscription]:
        return self.committed.get(node, [])

    def load(self, node: str) -> int:
        return minute_load(self.subscriptions(node), self.ticks_per_minute, self.max_window)

    def release(self, function_id: str) -> set[str]:
        touched = set()
        for node, subs in self.committed.items():
            kept = [s for s in subs if s.function_id != function_id]
            if len(kept) != len(subs):
                touched.add(node)
                self.committed[node] = kept
        return touched

    def copy(self) -> "LoadBook":
        return LoadBook(dict(self.capacity), self.ticks_per_minute,
                        {n: list(s) for n, s in self.committed.items()}, self.max_window)

    def snapshot(self) -> dict[str, tuple[Subscription, ...]]:
        return {n: tuple(s) for n, s in sorted(self.committed.items()) if s}


def admit(subscription: Subscription, book: LoadBook) -> Accepted | Rejected:
    node = subscription.node
    capacity = book.capacity.get(node)
    if capacity is None:
        return Rejected("UnknownNode", node)
    current = book.subscriptions(node)
    try:
        before = minute_load(current, book.ticks_per_minute, book.max_window)
        after = minute_load([*current, subscription], book.ticks_per_minute, book.max_window)
    except OverflowError:
        return Rejected("HyperperiodTooLarge", node)
    if after > capacity:
        return Rejected("CapacityExceeded", node, after, capacity)
    book.committed.setdefault(node, []).append(subscription)
    return Accepted(node, after - before, after)


# -- dispatch ---------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    node: str
    tier: int
    due_tick: int
    arrival: int
    kind: str = "collect"
    resource: str = ""
    payload: tuple = ()

    def sort_key(self) -> tuple[int, int, int]:
        return (self.tier, self.due_tick, self.arrival)


@dataclass(frozen=True)
class StarvationAlarm:
    task: Task
    tick: int
    waited: int


@dataclass
class DispatchResult:
    executions: list[Task] = field(default_factory=list)
    deferrals: list[Task] = field(default_factory=list)
    alarms: list[StarvationAlarm] = field(default_factory=list)


def dispatch(tick: int, due_tasks: Iterable[Task], node_slots: Mapping[str, int] | int = 1,
             deferral_bound: int = 10) -> DispatchResult:
    """Pick what runs at ``tick`` on each node.

    Candidates are ordered by tier, then by original due tick, then by
    arrival; the first ``slots`` run and the rest are deferred to the next
    tick.  A deferred task raises one StarvationAlarm when its wait first
    exceeds ``deferral_bound``; it is never dropped.
    """
    by_node: dict[str, list[Task]] = {}
    for task in due_tasks:
        by_node.setdefault(task.node, []).append(task)
    result = DispatchResult()
    for node in sorted(by_node):
        tasks = sorted(by_node[node], key=Task.sort_key)
        slots = node_slots if isinstance(node_slots, int) else node_slots.get(node, 1)
        slots = max(0, slots)
        result.executions.extend(tasks[:slots])
        for task in tasks[slots:]:
            result.deferrals.append(task)
            waited = tick + 1 - task.due_tick
            if waited == deferral_bound + 1:
                result.alarms.append(StarvationAlarm(task, tick, waited))
    return result


# -- retries and success accounting -----------------------------------------

@dataclass(frozen=True)
class Success:
    attempts: int


@dataclass(frozen=True)
class Failure:
    after_attempts: int


@dataclass
class SuccessStats:
    attempted: dict[int, int] = field(default_factory=lambda: {t: 0 for t in TIERS})
    succeeded: dict[int, int] = field(default_factory=lambda: {t: 0 for t in TIERS})

    def record(self, tier: int, ok: bool) -> None:
        self.attempted[tier] += 1
        if ok:
            self.succeeded[tier] += 1

    def measured_rate(self, tier: int) -> float | None:
        n = self.attempted[tier]
        return self.succeeded[tier] / n if n else None

    def to_dict(self) -> dict:
        return {str(t): {"attempted": self.attempted[t], "succeeded": self.succeeded[t]}
                for t in TIERS}


def execute_with_retries(policy: TierPolicy, transmit: Callable[[], object],
                         stats: SuccessStats | None = None) -> Success | Failure:
    """Up to 1 + max_retries independent transmits; stop at the first delivery."""
    attempts = 0
    for _ in range(policy.max_retries + 1):
        attempts += 1
        outcome = transmit()
        if isinstance(outcome, Delivered) or outcome is True:
            if stats is not None:
                stats.record(policy.tier, True)
            return Success(attempts)
        if not isinstance(outcome, (Lost, bool)):
            raise TypeError(f"transmit returned {outcome!r}")
    if stats is not None:
        stats.record(policy.tier, False)
    return Failure(attempts)


def analytic_success(loss: float, max_retries: int, hops: int = 1) -> float:
    per_attempt_fail = 1.0 - (1.0 - loss) ** hops
    return 1.0 - per_attempt_fail ** (max_retries + 1)


@dataclass(frozen=True)
class ReportRow:
    tier: int
    attempted: int
    succeeded: int
    rate: float | None
    target: float
    verdict: str

    def to_dict(self) -> dict:
        return {"tier": self.tier, "attempted": self.attempted, "succeeded": self.succeeded,
                "rate": self.rate, "target": self.target, "verdict": self.verdict}


def success_report(stats: SuccessStats, policies: Mapping[int, TierPolicy] | None = None,
                   min_samples: int = 1000) -> list[ReportRow]:
    policies = policies or tier_policies()
    rows = []
    for tier in TIERS:
        n, ok = stats.attempted[tier], stats.succeeded[tier]
        rate = ok / n if n else None
        target = policies[tier].target_success_rate
        if n == 0 or n < min_samples:
            verdict = "INSUFFICIENT_DATA"
        elif rate < target:
            verdict = "FAIL"
        else:
            verdict = "PASS"
        rows.append(ReportRow(tier, n, ok, rate, target, verdict))
    return rows


def format_report(rows: Iterable[ReportRow]) -> str:
    lines = [f"{'tier':>4} {'attempted':>10} {'succeeded':>10} {'rate':>8} {'target':>7}  verdict"]
    for r in rows:
        rate = f"{r.rate:.4f}" if r.rate is not None else "-"
        lines.append(f"{r.tier:>4} {r.attempted:>10} {r.succeeded:>10} {rate:>8} "
                     f"{r.target:>7.3f}  {r.verdict}")
    return "\n".join(lines) + "\n"
