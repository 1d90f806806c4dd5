"""Per-delivery metering into an append-only ledger, and invoices.

Amounts are fixed-point integers in ten-thousandths of the currency unit so
that totals and conservation checks are exact.  Billing is demand-side:
when two users share one physical acquisition, both are charged.
"""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Iterator, Mapping

from .errors import UnknownTier, UnrepresentableAmount
from .middleware import DeliveryRecord
from .scheduler import TIERS, TierPolicy

SCALE = 10_000
CSV_HEADER = ("tick", "user", "functionId", "tier", "units", "amount")


def to_fixed(amount: Decimal | str | int) -> int:
    scaled = Decimal(str(amount)) * SCALE
    if scaled != scaled.to_integral_value():
        raise UnrepresentableAmount(f"{amount} is not a multiple of 0.0001")
    return int(scaled)


def format_amount(fixed: int) -> str:
    return str((Decimal(fixed) / SCALE).quantize(Decimal("0.0001")))


@dataclass(frozen=True)
class LedgerEntry:
    tick: int
    user: str
    function_id: str
    tier: int
    units: int
    amount: int

    def __post_init__(self) -> None:
        if self.units < 1:
            raise ValueError("ledger entries carry at least one unit")

    @property
    def amount_decimal(self) -> Decimal:
        return Decimal(self.amount) / SCALE

    def row(self) -> tuple:
        return (self.tick, self.user, self.function_id, self.tier, self.units,
                format_amount(self.amount))


class Ledger:
    """Append-only; readers get immutable snapshots."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()):
        self._entries: list[LedgerEntry] = list(entries)
        self._lock = threading.Lock()

    def append(self, entry: LedgerEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def snapshot(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(self.snapshot())

    def __len__(self) -> int:
        return len(self._entries)

    def total(self, window: tuple[int, int] | None = None) -> int:
        return sum(e.amount for e in self if window is None or window[0] <= e.tick < window[1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for entry in self:
            writer.writerow(entry.row())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Ledger":
        reader = csv.DictReader(io.StringIO(text))
        return cls(
            LedgerEntry(int(r["tick"]), r["user"], r["functionId"], int(r["tier"]),
                        int(r["units"]), to_fixed(r["amount"]))
            for r in reader
        )


def meter(record: DeliveryRecord, policies: Mapping[int, TierPolicy]) -> LedgerEntry:
    policy = policies.get(record.tier)
    if policy is None:
        raise UnknownTier(f"no policy for tier {record.tier}")
    units = record.billed_units
    return LedgerEntry(record.tick, record.user, record.function_id, record.tier, units,
                       units * to_fixed(policy.rate_per_acquisition))


@dataclass(frozen=True)
class Invoice:
    user: str
    window: tuple[int, int]
    subtotals: dict[int, int] = field(default_factory=dict)
    units: dict[int, int] = field(default_factory=dict)
    total: int = 0

    @property
    def total_decimal(self) -> Decimal:
        return Decimal(self.total) / SCALE

    def to_dict(self) -> dict:
        return {
            "user": self.user,
            "window": {"startTick": self.window[0], "endTick": self.window[1]},
            "tiers": {str(t): {"units": self.units.get(t, 0),
                               "subtotal": format_amount(self.subtotals.get(t, 0))}
                      for t in TIERS},
            "total": format_amount(self.total),
        }


def invoice(ledger: Iterable[LedgerEntry], user: str, window: tuple[int, int]) -> Invoice:
    start, end = window
    if end < start:
        raise ValueError("window end precedes start")
    subtotals = {t: 0 for t in TIERS}
    units = {t: 0 for t in TIERS}
    for entry in ledger:
        if entry.user == user and start <= entry.tick < end:
            subtotals[entry.tier] = subtotals.get(entry.tier, 0) + entry.amount
            units[entry.tier] = units.get(entry.tier, 0) + entry.units
    return Invoice(user, (start, end), subtotals, units, sum(subtotals.values()))


def operator_margin(billed_units: int, physical_acquisitions: int) -> int:
    """Units sold beyond what the network physically acquired."""
    return billed_units - physical_acquisitions
