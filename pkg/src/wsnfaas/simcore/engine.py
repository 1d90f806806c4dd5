"""Deterministic event engine for the sensor network.

All randomness comes from the scenario seed: link outcomes from one seeded
stream consumed in event order, sensor values from a hash of the reading key.
Simultaneous events run in insertion order, so a fixed (scenario, seed,
instruction stream) always yields the same log.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Union

from ..errors import (
    DeadNode,
    DeviceBusy,
    DisconnectedPath,
    InvalidTarget,
    UnknownDevice,
    UnknownSensor,
)
from .config import ScenarioConfig
from .program import TickProgram, compare
from .signals import signal_value
from .topology import COMPUTE, DeviceClass, Topology, build_topology

NJ_PER_J = 1_000_000_000


def joules_to_nj(joules: float) -> int:
    return round(joules * NJ_PER_J)


# -- instructions -----------------------------------------------------------

@dataclass(frozen=True)
class Collect:
    node: str
    sensor: str


@dataclass(frozen=True)
class SetSchedule:
    node: str
    sensor: str
    program: TickProgram


@dataclass(frozen=True)
class SetThreshold:
    node: str
    sensor: str
    thresholds: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class Control:
    node: str
    actuator: str
    value: float


@dataclass(frozen=True)
class ComputeTask:
    node: str
    duration_ticks: int


@dataclass(frozen=True)
class Restart:
    node: str


@dataclass(frozen=True)
class FieldReplace:
    node: str


@dataclass(frozen=True)
class Reconfigure:
    delta: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class ScanChannels:
    gateway: str


Instruction = Union[
    Collect, SetSchedule, SetThreshold, Control, ComputeTask,
    Restart, FieldReplace, Reconfigure, ScanChannels,
]


# -- records ----------------------------------------------------------------

@dataclass(frozen=True)
class Reading:
    node: str
    sensor: str
    tick: int
    value: float
    fired: frozenset[tuple[str, float]] | None = None
    due_tick: int | None = None

    @property
    def demand_tick(self) -> int:
        return self.tick if self.due_tick is None else self.due_tick


@dataclass(frozen=True)
class EventRecord:
    tick: int
    kind: str
    device: str | None
    payload: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"tick": self.tick, "kind": self.kind, "device": self.device,
             "payload": dict(self.payload)},
            sort_keys=True, separators=(",", ":"),
        )


@dataclass(frozen=True)
class Delivered:
    hops: int


@dataclass(frozen=True)
class Lost:
    hop_index: int


@dataclass(frozen=True, order=True)
class Event:
    time: int
    seq: int
    kind: str = field(compare=False)
    device: str | None = field(compare=False, default=None)
    payload: Mapping[str, Any] = field(compare=False, default_factory=dict)


# -- state ------------------------------------------------------------------

@dataclass
class SimState:
    config: ScenarioConfig
    topology: Topology
    tick: int = 0
    energy_nj: dict[str, int] = field(default_factory=dict)
    channel_interference: list[float] = field(default_factory=list)
    loss_rates: list[float] = field(default_factory=list)
    active_channel: int = 0
    rng_seed: int = 0
    logs: list[EventRecord] = field(default_factory=list)
    faults: dict[str, str] = field(default_factory=dict)
    schedules: dict[tuple[str, str], TickProgram] = field(default_factory=dict)
    thresholds: dict[tuple[str, str], tuple[tuple[str, float], ...]] = field(default_factory=dict)
    actuators: dict[tuple[str, str], float] = field(default_factory=dict)
    busy_until: dict[str, int] = field(default_factory=dict)
    _queue: list[Event] = field(default_factory=list, repr=False)
    _seq: Any = field(default_factory=itertools.count, repr=False)
    _generation: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    _settled: dict[str, int] = field(default_factory=dict, repr=False)
    _last_due: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    rng: random.Random = field(default_factory=random.Random, repr=False)

    @property
    def per_acquisition_nj(self) -> int:
        return joules_to_nj(self.config.energy.per_acquisition_j)

    @property
    def per_hop_nj(self) -> int:
        return joules_to_nj(self.config.energy.per_transmit_hop_j)

    @property
    def idle_nj(self) -> int:
        return joules_to_nj(self.config.energy.idle_per_tick_j)

    @property
    def budget_nj(self) -> int:
        return joules_to_nj(self.config.energy.budget_j)

    def loss_rate(self) -> float:
        return self.loss_rates[self.active_channel]

    def log(self, kind: str, device: str | None, **payload: Any) -> EventRecord:
        rec = EventRecord(self.tick, kind, device, payload)
        self.logs.append(rec)
        return rec


def new_state(config: ScenarioConfig, topology: Topology | None = None) -> SimState:
    topo = topology if topology is not None else build_topology(config)
    state = SimState(
        config=config,
        topology=topo,
        channel_interference=config.channel_interference(),
        loss_rates=config.channel_loss_rates(),
        active_channel=config.initial_channel,
        rng_seed=config.seed,
        rng=random.Random(config.seed),
    )
    budget = state.budget_nj
    for dev in topo.devices.values():
        if dev.constrained:
            state.energy_nj[dev.id] = budget
            state._settled[dev.id] = 0
    return state


# -- energy -----------------------------------------------------------------

def _settle(state: SimState, node: str) -> None:
    """Charge idle drain accrued since the node was last touched."""
    last = state._settled.get(node)
    if last is None:
        return
    elapsed = state.tick - last
    if elapsed > 0:
        state.energy_nj[node] = max(0, state.energy_nj[node] - elapsed * state.idle_nj)
        state._settled[node] = state.tick


def _debit(state: SimState, node: str, amount_nj: int) -> None:
    if node in state.energy_nj:
        state.energy_nj[node] = max(0, state.energy_nj[node] - amount_nj)


def remaining_energy(state: SimState, node: str) -> float:
    dev = state.topology.device(node)
    if not dev.constrained:
        raise InvalidTarget(f"{node} is not energy constrained")
    _settle(state, node)
    return state.energy_nj[node] / NJ_PER_J


def is_alive(state: SimState, device: str) -> bool:
    if device in state.faults:
        return False
    if device in state.energy_nj:
        _settle(state, device)
        return state.energy_nj[device] > 0
    return True


def inject_fault(state: SimState, device: str, kind: str = "crash") -> None:
    """Silence a device. ``crash`` clears on Restart; ``hardware`` needs FieldReplace."""
    state.topology.device(device)
    if kind not in ("crash", "hardware"):
        raise ValueError(f"unknown fault kind {kind!r}")
    state.faults[device] = kind
    state.log("fault", device, fault=kind)


# -- event queue ------------------------------------------------------------

def schedule_event(state: SimState, time: int, kind: str, device: str | None = None,
                   **payload: Any) -> Event:
    if time < state.tick:
        raise ValueError(f"cannot schedule event in the past ({time} < {state.tick})")
    ev = Event(time, next(state._seq), kind, device, payload)
    heapq.heappush(state._queue, ev)
    return ev


def _stale(state: SimState, ev: Event) -> bool:
    if ev.kind != "due":
        return False
    key = (ev.device, ev.payload["sensor"])
    return state._generation.get(key) != ev.payload["generation"]


def next_event_time(state: SimState) -> int | None:
    while state._queue and _stale(state, state._queue[0]):
        heapq.heappop(state._queue)
    return state._queue[0].time if state._queue else None


def pending_ticks(state: SimState, node: str) -> list[int]:
    return sorted(ev.time for ev in state._queue
                  if ev.kind == "due" and ev.device == node and not _stale(state, ev))


def step(state: SimState, until_tick: int,
         on_due: Callable[[SimState, Event], None] | None = None) -> list[EventRecord]:
    """Process every queued event with time <= ``until_tick``.

    Scheduled acquisitions ("due" events) are handed to ``on_due`` when given;
    otherwise the node collects immediately.
    """
    if until_tick < state.tick:
        raise ValueError("until_tick precedes the current tick")
    first_log = len(state.logs)
    while True:
        t = next_event_time(state)
        if t is None or t > until_tick:
            break
        ev = heapq.heappop(state._queue)
        state.tick = ev.time
        _handle(state, ev, on_due)
    state.tick = until_tick
    return state.logs[first_log:]


def _handle(state: SimState, ev: Event, on_due) -> None:
    if ev.kind == "due":
        term = ev.payload["term"]
        nxt = term.next_at_or_after(ev.time + 1)
        if nxt is not None:
            schedule_event(state, nxt, "due", ev.device, sensor=ev.payload["sensor"],
                           term=term, generation=ev.payload["generation"])
        # overlapping terms of one program demand the same tick only once
        key = (ev.device, ev.payload["sensor"])
        if state._last_due.get(key) == ev.time:
            return
        state._last_due[key] = ev.time
        if on_due is not None:
            on_due(state, ev)
            return
        try:
            execute_instruction(state, Collect(ev.device, ev.payload["sensor"]))
        except DeadNode:
            state.log("dead", ev.device, sensor=ev.payload["sensor"])
    elif ev.kind == "instruction":
        execute_instruction(state, ev.payload["instruction"])
    elif ev.kind == "collect":
        try:
            execute_instruction(state, Collect(ev.device, ev.payload["sensor"]))
        except DeadNode:
            state.log("dead", ev.device, sensor=ev.payload["sensor"])
    else:
        state.log(ev.kind, ev.device, **{k: v for k, v in ev.payload.items()
                                          if isinstance(v, (int, float, str, bool, type(None)))})


# -- instruction execution --------------------------------------------------

def _require(state: SimState, device: str, resource: str | None = None):
    dev = state.topology.device(device)
    if resource is not None and not dev.owns(resource):
        raise UnknownSensor(f"{device} has no sensor/actuator {resource!r}")
    return dev


def _require_alive(state: SimState, device: str) -> None:
    if not is_alive(state, device):
        raise DeadNode(device)


def _install(state: SimState, node: str, sensor: str, program: TickProgram) -> None:
    key = (node, sensor)
    gen = state._generation.get(key, 0) + 1
    state._generation[key] = gen
    if program:
        state.schedules[key] = program
        for term in program.terms:
            nxt = term.next_at_or_after(state.tick)
            if nxt is not None:
                schedule_event(state, nxt, "due", node, sensor=sensor, term=term, generation=gen)
    else:
        state.schedules.pop(key, None)


def _clear_node(state: SimState, node: str) -> int:
    keys = [k for k in list(state._generation) if k[0] == node]
    cleared = len(pending_ticks(state, node))
    for key in keys:
        _install(state, key[0], key[1], TickProgram())
        state.thresholds.pop(key, None)
    return cleared


def execute_instruction(state: SimState, instruction: Instruction) -> list:
    """Apply one instruction at the current tick and return its effects."""
    if isinstance(instruction, Collect):
        node, sensor = instruction.node, instruction.sensor
        dev = _require(state, node, sensor)
        if sensor in dev.actuators or sensor == COMPUTE:
            raise InvalidTarget(f"{sensor!r} is not a sensor")
        _require_alive(state, node)
        _debit(state, node, state.per_acquisition_nj)
        signal = state.config.signals[sensor]
        value = signal_value(signal, state.rng_seed, node, sensor, state.tick,
                             state.config.tick_millis)
        pushed = state.thresholds.get((node, sensor))
        fired = None
        if pushed is not None:
            fired = frozenset((op, v) for op, v in pushed if compare(op, value, v))
        reading = Reading(node, sensor, state.tick, value, fired)
        state.log("reading", node, sensor=sensor, value=value)
        return [reading]

    if isinstance(instruction, SetSchedule):
        _require(state, instruction.node, instruction.sensor)
        # replacing a schedule also drops its pushed thresholds
        state.thresholds.pop((instruction.node, instruction.sensor), None)
        _install(state, instruction.node, instruction.sensor, instruction.program)
        return [state.log("set_schedule", instruction.node, sensor=instruction.sensor,
                          terms=instruction.program.to_list())]

    if isinstance(instruction, SetThreshold):
        _require(state, instruction.node, instruction.sensor)
        key = (instruction.node, instruction.sensor)
        if instruction.thresholds:
            state.thresholds[key] = tuple(instruction.thresholds)
        else:
            state.thresholds.pop(key, None)
        return [state.log("set_threshold", instruction.node, sensor=instruction.sensor,
                          thresholds=[list(t) for t in instruction.thresholds])]

    if isinstance(instruction, Control):
        dev = _require(state, instruction.node, instruction.actuator)
        if instruction.actuator not in dev.actuators:
            raise InvalidTarget(f"{instruction.actuator!r} is not an actuator")
        _require_alive(state, instruction.node)
        state.actuators[(instruction.node, instruction.actuator)] = instruction.value
        return [state.log("control", instruction.node, actuator=instruction.actuator,
                          value=instruction.value)]

    if isinstance(instruction, ComputeTask):
        dev = _require(state, instruction.node)
        if dev.kind is not DeviceClass.EDGE_COMPUTE:
            raise InvalidTarget(f"ComputeTask needs an edge device, got {instruction.node}")
        if instruction.duration_ticks < 1:
            raise InvalidTarget("duration_ticks must be >= 1")
        _require_alive(state, instruction.node)
        if state.busy_until.get(instruction.node, 0) > state.tick:
            raise DeviceBusy(f"{instruction.node} busy until {state.busy_until[instruction.node]}")
        state.busy_until[instruction.node] = state.tick + instruction.duration_ticks
        return [state.log("compute", instruction.node, duration=instruction.duration_ticks)]

    if isinstance(instruction, Restart):
        node = instruction.node
        _require(state, node)
        cleared = _clear_node(state, node)
        ok = state.faults.get(node) != "hardware"
        if node in state.energy_nj:
            _settle(state, node)
            ok = ok and state.energy_nj[node] > 0
        if ok:
            state.faults.pop(node, None)
        return [state.log("restart", node, ok=ok, cleared=cleared)]

    if isinstance(instruction, FieldReplace):
        node = instruction.node
        _require(state, node)
        _clear_node(state, node)
        state.faults.pop(node, None)
        if node in state.energy_nj:
            state.energy_nj[node] = state.budget_nj
            state._settled[node] = state.tick
        return [state.log("field_replace", node)]

    if isinstance(instruction, Reconfigure):
        state.topology = state.topology.apply_delta(dict(instruction.delta))
        return [state.log("reconfigure", None, delta=[list(d) for d in instruction.delta])]

    if isinstance(instruction, ScanChannels):
        if instruction.gateway not in state.topology.gateways:
            if instruction.gateway not in state.topology:
                raise UnknownDevice(instruction.gateway)
            raise InvalidTarget(f"{instruction.gateway} is not a gateway")
        state.active_channel = scan_channels(state, instruction.gateway)
        return [state.log("scan", instruction.gateway, channel=state.active_channel)]

    raise InvalidTarget(f"unsupported instruction {instruction!r}")


# -- radio ------------------------------------------------------------------

def _linked(topology: Topology, a: str, b: str) -> bool:
    da, db = topology.device(a), topology.device(b)
    return da.parent == b or db.parent == a


def transmit(state: SimState, path: list[str], payload: Any = None,
             log: bool = True) -> Delivered | Lost:
    """Send a packet hop by hop along ``path``; every sender pays for its hop."""
    if not path:
        raise DisconnectedPath("empty path")
    for a, b in zip(path, path[1:]):
        if not _linked(state.topology, a, b):
            raise DisconnectedPath(f"no link between {a} and {b}")
    loss = state.loss_rate()
    hop_nj = state.per_hop_nj
    outcome: Delivered | Lost = Delivered(len(path) - 1)
    for i, sender in enumerate(path[:-1]):
        if not is_alive(state, sender):
            outcome = Lost(i)
            break
        _debit(state, sender, hop_nj)
        if state.rng.random() < loss:
            outcome = Lost(i)
            break
    if log:
        if isinstance(outcome, Delivered):
            state.log("tx", path[0], to=path[-1], ok=True)
        else:
            state.log("tx", path[0], to=path[-1], ok=False, hop=outcome.hop_index)
    return outcome


def scan_channels(state: SimState, gateway: str | None = None) -> int:
    interference = state.channel_interference
    return min(range(len(interference)), key=lambda i: (interference[i], i))
