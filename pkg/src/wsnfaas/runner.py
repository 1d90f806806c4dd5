"""One scenario run: merged schedules in, deliveries, ledger and anomalies out.

The run rebuilds the network from the scenario, installs the emitted
instructions at tick 0 and then advances from one interesting tick to the
next: scheduled acquisitions, deferred tasks, injected faults and monitor
checkpoints.  Nothing here reads a clock or an unseeded random source.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping

from .billing import Ledger, format_amount, meter
from .errors import DeadNode, DeviceBusy
from .lifecycle import LifecycleLedger
from .middleware import DeliveryRecord, Key, MergedSchedule, emit_instructions, fan_out
from .monitor import (
    CHANNEL_RESCAN,
    FIELD_REPLACE,
    RESTART,
    Anomaly,
    DispatchEntry,
    MaintenanceAction,
    MonitorThresholds,
    ObservedLog,
    Packet,
    diff,
    expected_behavior,
    maintenance_action,
)
from .scheduler import (
    DispatchResult,
    StarvationAlarm,
    Success,
    SuccessStats,
    Task,
    TierPolicy,
    dispatch,
    execute_with_retries,
    success_report,
)
from .simcore import (
    COMPUTE,
    ComputeTask,
    Collect,
    Control,
    DeviceClass,
    EventRecord,
    FieldReplace,
    Restart,
    ScanChannels,
    Reading,
    ScenarioConfig,
    SetSchedule,
    SimState,
    execute_instruction,
    inject_fault,
    new_state,
    next_event_time,
    step,
    transmit,
)

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    until: int
    deliveries: list[DeliveryRecord] = field(default_factory=list)
    ledger: Ledger = field(default_factory=Ledger)
    stats: SuccessStats = field(default_factory=SuccessStats)
    anomalies: list[Anomaly] = field(default_factory=list)
    actions: list[MaintenanceAction] = field(default_factory=list)
    alarms: list[StarvationAlarm] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)
    packets: list[Packet] = field(default_factory=list)
    dispatch_log: list[DispatchEntry] = field(default_factory=list)
    maintenance: LifecycleLedger = field(default_factory=LifecycleLedger)
    physical_acquisitions: int = 0

    @property
    def billed_units(self) -> int:
        return sum(e.units for e in self.ledger)

    def summary(self, policies: Mapping[int, TierPolicy] | None = None,
                min_samples: int = 1000) -> dict:
        per_user: dict[str, int] = {}
        for e in self.ledger:
            per_user[e.user] = per_user.get(e.user, 0) + e.units
        return {
            "window": {"startTick": 0, "endTick": self.until},
            "physicalAcquisitions": self.physical_acquisitions,
            "billedUnits": self.billed_units,
            "margin": self.billed_units - self.physical_acquisitions,
            "revenue": format_amount(self.ledger.total()),
            "unitsByUser": dict(sorted(per_user.items())),
            "deliveries": len(self.deliveries),
            "anomalies": len(self.anomalies),
            "maintenanceActions": [a.to_dict() for a in self.actions],
            "starvationAlarms": len(self.alarms),
            "tierSuccess": [r.to_dict() for r in success_report(self.stats, policies, min_samples)],
        }


def _checkpoint_ticks(config: ScenarioConfig) -> int:
    return config.seconds_to_ticks(config.monitor.interval_s)


class _Run:
    def __init__(self, config: ScenarioConfig, schedules: Mapping[Key, MergedSchedule],
                 policies: Mapping[int, TierPolicy], until: int, monitor: bool):
        self.config = config
        self.schedules = dict(schedules)
        self.policies = policies
        self.until = until
        self.monitor = monitor
        self.state: SimState = new_state(config)
        self.result = RunResult(until)
        self.pending: list[Task] = []
        self.arrivals = 0
        self.actions_by_fid = {s.function_id: s.action for sched in self.schedules.values()
                               for s in sched.contributors if s.action is not None}
        tps = 1000 / config.tick_millis
        self.thresholds = MonitorThresholds.from_config(
            config.monitor, tps, {t: p.tolerated_failure_rate for t, p in policies.items()})
        self.checkpoint_every = _checkpoint_ticks(config)
        self.grace = config.deferral_bound_ticks + 1
        self.next_checkpoint = self.checkpoint_every if monitor else None
        self.faults = sorted((int(f["tick"]), str(f["device"]), str(f.get("kind", "crash")))
                             for f in config.faults)
        self.seen_anomalies: set[str] = set()

    # -- setup --------------------------------------------------------------

    def install(self, keys=None) -> None:
        for ins in emit_instructions(self.schedules, keys):
            execute_instruction(self.state, ins)
            if isinstance(ins, SetSchedule):
                tier = self.schedules[(ins.node, ins.sensor)].tier
                self.result.dispatch_log.append(DispatchEntry(self.state.tick, ins, tier))

    def start(self) -> None:
        if self.config.scan_on_deploy and self.state.topology.gateways:
            gateway = sorted(self.state.topology.gateways)[0]
            execute_instruction(self.state, ScanChannels(gateway))
        self.install()

    # -- main loop ----------------------------------------------------------

    def next_tick(self, current: int | None) -> int | None:
        candidates = [next_event_time(self.state)]
        if self.pending and current is not None:
            candidates.append(current + 1)
        if self.faults:
            candidates.append(self.faults[0][0])
        if self.next_checkpoint is not None:
            candidates.append(self.next_checkpoint)
        ticks = [c for c in candidates if c is not None and c >= self.state.tick]
        return min(ticks) if ticks else None

    def run(self) -> RunResult:
        self.start()
        current = None
        while True:
            tick = self.next_tick(current)
            if tick is None or tick >= self.until:
                break
            if current is not None and tick == current:
                tick += 1
                if tick >= self.until:
                    break
            current = tick
            self.advance_to(tick)
        if self.until - 1 > self.state.tick:
            step(self.state, self.until - 1, on_due=lambda _s, _ev: None)
        self.finish()
        return self.result

    def advance_to(self, tick: int) -> None:
        while self.faults and self.faults[0][0] <= tick:
            _, device, kind = self.faults.pop(0)
            # every event before ``tick`` has already been handled
            self.state.tick = max(self.state.tick, tick)
            inject_fault(self.state, device, kind)
        due: list = []
        step(self.state, tick, on_due=lambda _s, ev: due.append(ev))
        for ev in due:
            sched = self.schedules.get((ev.device, ev.payload["sensor"]))
            if sched is None:
                continue
            self.arrivals += 1
            kind = "compute" if ev.payload["sensor"] == COMPUTE else "collect"
            self.pending.append(Task(ev.device, sched.tier, ev.time, self.arrivals, kind,
                                     ev.payload["sensor"]))
        if self.pending:
            self.dispatch(tick)
        if self.next_checkpoint is not None and tick >= self.next_checkpoint:
            self.checkpoint(tick)
            self.next_checkpoint += self.checkpoint_every

    def dispatch(self, tick: int) -> None:
        slots = {}
        for task in self.pending:
            dev = self.state.topology.device(task.node)
            busy = dev.kind is DeviceClass.EDGE_COMPUTE and self.state.busy_until.get(task.node, 0) > tick
            slots[task.node] = 0 if busy else 1
        res: DispatchResult = dispatch(tick, self.pending, slots, self.config.deferral_bound_ticks)
        self.result.alarms.extend(res.alarms)
        for alarm in res.alarms:
            self.state.log("starvation", alarm.task.node, due=alarm.task.due_tick,
                           tier=alarm.task.tier, waited=alarm.waited)
        self.pending = res.deferrals
        for task in res.executions:
            self.execute(task, tick)

    # -- task execution -----------------------------------------------------

    def execute(self, task: Task, tick: int) -> None:
        if task.kind == "control":
            node, actuator, value = task.payload
            try:
                execute_instruction(self.state, Control(node, actuator, value))
            except DeadNode:
                self.state.log("dead", node, actuator=actuator)
            return
        policy = self.policies[task.tier]
        sched = self.schedules[(task.node, task.resource)]
        if task.kind == "compute":
            duration = max(s.duration_ticks or 1 for s in sched.demanders(task.due_tick))
            try:
                execute_instruction(self.state, ComputeTask(task.node, duration))
            except (DeadNode, DeviceBusy):
                self.result.stats.record(task.tier, False)
                return
            self.result.stats.record(task.tier, True)
            self.deliver([Reading(task.node, COMPUTE, tick, float(duration), None, task.due_tick)],
                         tick)
            return
        try:
            (reading,) = execute_instruction(self.state, Collect(task.node, task.resource))
        except DeadNode:
            self.state.log("dead", task.node, sensor=task.resource)
            self.result.stats.record(task.tier, False)
            return
        self.result.physical_acquisitions += 1
        reading = dataclasses.replace(reading, due_tick=task.due_tick)
        path = self.state.topology.path_to_gateway(task.node)
        outcome = execute_with_retries(policy, lambda: transmit(self.state, path),
                                       self.result.stats)
        if not isinstance(outcome, Success):
            return
        self.result.packets.append(Packet(task.node, task.resource, task.due_tick, tick))
        self.deliver([reading], tick)

    def deliver(self, readings, tick: int) -> None:
        records = fan_out(readings, self.schedules, self.config.tick_millis)
        for rec in records:
            self.result.deliveries.append(rec)
            self.result.ledger.append(meter(rec, self.policies))
            if rec.kind == "control":
                action = self.actions_by_fid.get(rec.function_id)
                if action is not None:
                    self.arrivals += 1
                    self.pending.append(Task(action[0], rec.tier, tick + 1, self.arrivals,
                                             "control", action[1], action))

    # -- monitoring ---------------------------------------------------------

    def checkpoint(self, tick: int) -> None:
        horizon = tick - self.grace
        if horizon <= 0:
            return
        window = (0, horizon)
        expected = expected_behavior(self.result.dispatch_log, window)
        observed = ObservedLog.of(window, (p for p in self.result.packets
                                           if p.delivered_tick is None or p.delivered_tick <= tick))
        for anomaly in diff(expected, observed, self.thresholds):
            ident = anomaly.to_json()
            if ident in self.seen_anomalies:
                continue
            self.seen_anomalies.add(ident)
            action = maintenance_action(anomaly, self.result.actions, self.result.maintenance,
                                        self.thresholds, tick=tick)
            if action is not None:
                self.apply(action)

    def apply(self, action: MaintenanceAction) -> None:
        self.result.actions.append(action)
        node = action.node
        if action.kind == CHANNEL_RESCAN:
            gateway = self.state.topology.gateway_of(node)
            execute_instruction(self.state, ScanChannels(gateway))
            return
        ins = Restart(node) if action.kind == RESTART else FieldReplace(node)
        assert action.kind in (RESTART, FIELD_REPLACE)
        execute_instruction(self.state, ins)
        # the node lost its schedules either way; resend them
        keys = [k for k in self.schedules if k[0] == node]
        for ins in emit_instructions(self.schedules, keys):
            execute_instruction(self.state, ins)

    def finish(self) -> None:
        window = (0, self.until)
        expected = expected_behavior(self.result.dispatch_log, window)
        observed = ObservedLog.of(window, self.result.packets)
        self.result.anomalies = diff(expected, observed, self.thresholds)
        self.result.events = list(self.state.logs)


def run_schedules(config: ScenarioConfig, schedules: Mapping[Key, MergedSchedule],
                  policies: Mapping[int, TierPolicy], until: int,
                  monitor: bool = True) -> RunResult:
    """Simulate ticks [0, until) of ``config`` executing ``schedules``."""
    if until < 0:
        raise ValueError("until must be >= 0")
    run = _Run(config, schedules, policies, until, monitor)
    result = run.run()
    log.info("run to %d: %d acquisitions, %d deliveries, %d anomalies", until,
             result.physical_acquisitions, len(result.deliveries), len(result.anomalies))
    return result
