"""Exception types shared across the platform."""

from __future__ import annotations


class WsnError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(WsnError):
    pass


# topology / simulation

class ZeroGateways(ConfigError):
    pass


class InvalidCount(ConfigError):
    pass


class UnknownDevice(WsnError):
    def __init__(self, device: str):
        super().__init__(f"unknown device {device!r}")
        self.device = device


class InvalidTarget(WsnError):
    pass


class DeadNode(WsnError):
    def __init__(self, node: str):
        super().__init__(f"node {node!r} is dead")
        self.node = node


class DisconnectedPath(WsnError):
    pass


class DeviceBusy(WsnError):
    pass


class ForestViolation(InvalidTarget):
    """A topology change would break the gateway-rooted forest."""


# function specs

class FunctionSyntaxError(WsnError):
    """A function document could not be parsed.

    ``position`` is a character offset into the submitted text.
    """

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at offset {position})")
        self.message = message
        self.position = position


class UnknownField(FunctionSyntaxError):
    pass


class UnknownKind(FunctionSyntaxError):
    pass


class EmptySelector(WsnError):
    pass


class UnknownSensor(WsnError):
    pass


# middleware / scheduling

class HyperperiodOverflow(WsnError):
    pass


class OrphanReading(WsnError):
    def __init__(self, node: str, sensor: str, tick: int):
        super().__init__(f"reading {node}/{sensor}@{tick} matches no subscriber")
        self.node, self.sensor, self.tick = node, sensor, tick


# billing

class UnknownTier(WsnError):
    pass


class UnrepresentableAmount(WsnError):
    pass


# lifecycle

class InvalidPlan(WsnError):
    pass


class EmptySamples(WsnError):
    pass


class NotInMaintenance(WsnError):
    pass


# monitor

class WindowMismatch(WsnError):
    pass


# platform

class UnknownUser(WsnError):
    pass


class UnknownFunction(WsnError):
    pass
