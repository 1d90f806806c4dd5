"""Replayable synthetic sensor signals.

A reading is a pure function of (seed, node, sensor, tick): a sinusoid around
the sensor's baseline plus Gaussian noise drawn from a hash of the key, so
the same acquisition always yields the same value regardless of run order.
"""

from __future__ import annotations

import hashlib
import math
import struct

from .config import SensorSignal

_TWO_53 = float(1 << 53)


def _unit_pair(seed: int, node: str, sensor: str, tick: int) -> tuple[float, float]:
    digest = hashlib.blake2b(f"{seed}|{node}|{sensor}|{tick}".encode(), digest_size=16).digest()
    a, b = struct.unpack("<QQ", digest)
    # (0, 1] for the log in Box-Muller
    u1 = ((a >> 11) + 1) / _TWO_53
    u2 = (b >> 11) / _TWO_53
    return u1, u2


def standard_noise(seed: int, node: str, sensor: str, tick: int) -> float:
    u1, u2 = _unit_pair(seed, node, sensor, tick)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def signal_value(
    signal: SensorSignal, seed: int, node: str, sensor: str, tick: int, tick_millis: int
) -> float:
    period_ticks = signal.period_s * 1000.0 / tick_millis
    wave = signal.amplitude * math.sin(2.0 * math.pi * tick / period_ticks)
    return signal.baseline + wave + signal.noise * standard_noise(seed, node, sensor, tick)
