"""Discrete-event simulation of the star-variant sensor network."""

from .config import EnergyConfig, MonitorConfig, ScenarioConfig, SensorSignal
from .engine import (
    Collect,
    ComputeTask,
    Control,
    Delivered,
    Event,
    EventRecord,
    FieldReplace,
    Instruction,
    Lost,
    Reading,
    Reconfigure,
    Restart,
    ScanChannels,
    SetSchedule,
    SetThreshold,
    SimState,
    execute_instruction,
    inject_fault,
    is_alive,
    new_state,
    next_event_time,
    pending_ticks,
    remaining_energy,
    scan_channels,
    schedule_event,
    step,
    transmit,
)
from .program import Term, TickProgram, compare, normalize_comparator
from .topology import COMPUTE, Device, DeviceClass, Topology, build_topology

__all__ = [
    "COMPUTE", "Collect", "ComputeTask", "Control", "Delivered", "Device", "DeviceClass",
    "EnergyConfig", "Event", "EventRecord", "FieldReplace", "Instruction", "Lost",
    "MonitorConfig", "Reading", "Reconfigure", "Restart", "ScanChannels", "ScenarioConfig",
    "SensorSignal", "SetSchedule", "SetThreshold", "SimState", "Term", "TickProgram",
    "Topology", "build_topology", "compare", "execute_instruction", "inject_fault",
    "is_alive", "new_state", "next_event_time", "normalize_comparator", "pending_ticks",
    "remaining_energy", "scan_channels", "schedule_event", "step", "transmit",
]
