"""Star-variant network topology: gateways, routers, edge computers and nodes.

Parent links always point toward a sink gateway, so the device graph is a
forest with one tree per gateway.  Constrained nodes may hang off other
constrained nodes, which then relay traffic (and pay for it in energy).
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from ..errors import ForestViolation, InvalidCount, UnknownDevice, ZeroGateways
from .config import ScenarioConfig

COMPUTE = "compute"


class DeviceClass(enum.Enum):
    EDGE_COMPUTE = "edge"
    INFRASTRUCTURE = "infrastructure"
    CONSTRAINED = "constrained"


@dataclass(frozen=True)
class Device:
    id: str
    kind: DeviceClass
    parent: str | None
    sensors: frozenset[str] = frozenset()
    actuators: frozenset[str] = frozenset()

    @property
    def constrained(self) -> bool:
        return self.kind is DeviceClass.CONSTRAINED

    def owns(self, resource: str) -> bool:
        if resource == COMPUTE:
            return self.kind is DeviceClass.EDGE_COMPUTE
        return resource in self.sensors or resource in self.actuators


@dataclass
class Topology:
    devices: dict[str, Device] = field(default_factory=dict)
    gateways: frozenset[str] = frozenset()

    def __contains__(self, device_id: str) -> bool:
        return device_id in self.devices

    def __len__(self) -> int:
        return len(self.devices)

    def device(self, device_id: str) -> Device:
        try:
            return self.devices[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    def of_kind(self, kind: DeviceClass) -> list[Device]:
        return [d for d in self.devices.values() if d.kind is kind]

    def path_to_gateway(self, device_id: str) -> list[str]:
        """Device ids from ``device_id`` up to and including its gateway."""
        path = [device_id]
        current = self.device(device_id)
        seen = {device_id}
        while current.parent is not None:
            if current.parent in seen:
                raise ForestViolation(f"cycle through {current.parent}")
            seen.add(current.parent)
            path.append(current.parent)
            current = self.device(current.parent)
        if path[-1] not in self.gateways:
            raise ForestViolation(f"{device_id} does not reach a gateway")
        return path

    def gateway_of(self, device_id: str) -> str:
        return self.path_to_gateway(device_id)[-1]

    def children(self, device_id: str) -> list[str]:
        return [d.id for d in self.devices.values() if d.parent == device_id]

    def check_forest(self) -> None:
        for gw in self.gateways:
            if self.device(gw).parent is not None:
                raise ForestViolation(f"gateway {gw} has a parent")
        for dev in self.devices.values():
            if dev.parent is not None and dev.parent not in self.devices:
                raise ForestViolation(f"{dev.id} has unknown parent {dev.parent}")
            self.path_to_gateway(dev.id)

    def apply_delta(self, delta: Mapping[str, str]) -> "Topology":
        """Return a copy with devices re-parented per ``delta``.

        Raises ForestViolation (and leaves ``self`` untouched) when the result
        would contain a cycle or orphan a device.
        """
        devices = dict(self.devices)
        for dev_id, parent in delta.items():
            dev = self.device(dev_id)
            if dev_id in self.gateways:
                raise ForestViolation(f"cannot re-parent gateway {dev_id}")
            if parent not in self.devices:
                raise UnknownDevice(parent)
            devices[dev_id] = replace(dev, parent=parent)
        out = Topology(devices, self.gateways)
        out.check_forest()
        return out

    def to_dict(self) -> dict:
        return {
            "gateways": sorted(self.gateways),
            "devices": [
                {
                    "id": d.id,
                    "kind": d.kind.value,
                    "parent": d.parent,
                    "sensors": sorted(d.sensors),
                    "actuators": sorted(d.actuators),
                }
                for d in self.devices.values()
            ],
        }

    def serialize(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def build_topology(config: ScenarioConfig) -> Topology:
    counts = {"edge": config.edge, "infrastructure": config.infrastructure,
              "constrained": config.constrained}
    for name, value in counts.items():
        if value < 0:
            raise InvalidCount(f"{name} count must be >= 0, got {value}")
    n_gw = config.gateway_count
    if n_gw < 0 or n_gw > config.infrastructure:
        raise InvalidCount("gateway count must lie within the infrastructure count")
    if n_gw == 0 and (config.edge or config.constrained or config.infrastructure):
        raise ZeroGateways("devices configured but no sink gateway")

    rng = random.Random(config.seed)
    devices: dict[str, Device] = {}
    gateways = [f"g{i}" for i in range(n_gw)]
    for gw in gateways:
        devices[gw] = Device(gw, DeviceClass.INFRASTRUCTURE, None)

    routers: list[str] = []
    actuators = frozenset(config.infrastructure_actuators)
    for i in range(config.infrastructure - n_gw):
        rid = f"r{i}"
        parent = rng.choice(gateways + routers)
        devices[rid] = Device(rid, DeviceClass.INFRASTRUCTURE, parent, actuators=actuators)
        routers.append(rid)

    for i in range(config.edge):
        eid = f"e{i}"
        devices[eid] = Device(eid, DeviceClass.EDGE_COMPUTE, rng.choice(gateways))

    infra = gateways + routers
    nodes: list[str] = []
    sensors = frozenset(config.node_sensors)
    for i in range(config.constrained):
        nid = f"n{i}"
        if nodes and rng.random() < config.relay_fraction:
            parent = rng.choice(nodes)
        else:
            parent = rng.choice(infra)
        devices[nid] = Device(nid, DeviceClass.CONSTRAINED, parent, sensors=sensors)
        nodes.append(nid)

    topo = Topology(devices, frozenset(gateways))
    topo.check_forest()
    return topo


def relay_load(topology: Topology, sources: Iterable[str]) -> dict[str, int]:
    """How many of ``sources``' uplink packets each device forwards."""
    load: dict[str, int] = {}
    for src in sources:
        for dev in topology.path_to_gateway(src)[1:-1]:
            load[dev] = load.get(dev, 0) + 1
    return load
