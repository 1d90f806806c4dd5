"""Periodic tick programs and threshold comparators.

A program is a union of arithmetic progressions ``anchor + k * period``
(k >= 0), each optionally cut off at an exclusive ``end`` tick.  This is the
compressed form a node stores for one sensor; explicit tick sets are only
materialised over a hyperperiod when something needs to count them.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Iterable, Iterator

COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
COMPARATOR_ALIASES = {"≤": "<=", "≥": ">=", "=<": "<=", "=>": ">="}


def normalize_comparator(op: str) -> str:
    op = COMPARATOR_ALIASES.get(op, op)
    if op not in COMPARATORS:
        raise ValueError(f"unknown comparator {op!r}")
    return op


def compare(op: str, value: float, threshold: float) -> bool:
    return COMPARATORS[op](value, threshold)


@dataclass(frozen=True, order=True)
class Term:
    anchor: int
    period: int
    end: int | None = None

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.anchor < 0:
            raise ValueError("anchor must be >= 0")

    @property
    def residue(self) -> int:
        return self.anchor % self.period

    def demands(self, tick: int) -> bool:
        if tick < self.anchor or (self.end is not None and tick >= self.end):
            return False
        return (tick - self.anchor) % self.period == 0

    def next_at_or_after(self, tick: int) -> int | None:
        if tick <= self.anchor:
            nxt = self.anchor
        else:
            nxt = self.anchor + -(-(tick - self.anchor) // self.period) * self.period
        if self.end is not None and nxt >= self.end:
            return None
        return nxt

    def ticks_in(self, start: int, stop: int) -> Iterator[int]:
        t = self.next_at_or_after(start)
        limit = stop if self.end is None else min(stop, self.end)
        if t is None:
            return
        yield from range(t, limit, self.period)


@dataclass(frozen=True)
class TickProgram:
    terms: tuple[Term, ...] = ()

    @classmethod
    def of(cls, terms: Iterable[Term]) -> "TickProgram":
        return cls(tuple(sorted(set(terms))))

    @classmethod
    def explicit(cls, ticks: Iterable[int]) -> "TickProgram":
        return cls.of(Term(t, 1, t + 1) for t in ticks)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def demands(self, tick: int) -> bool:
        return any(term.demands(tick) for term in self.terms)

    def ticks_in(self, start: int, stop: int) -> list[int]:
        out: set[int] = set()
        for term in self.terms:
            out.update(term.ticks_in(start, stop))
        return sorted(out)

    def to_list(self) -> list[list[int | None]]:
        return [[t.anchor, t.period, t.end] for t in self.terms]
