"""Independent brute-force references used by several test modules."""

from math import lcm


def brute_union(subs, length=None):
    """Tick set of a subscription list over one hyperperiod, by enumeration."""
    if length is None:
        length = 1
        for s in subs:
            length = lcm(length, s.period)
    ticks = set()
    for s in subs:
        for t in range(length):
            if t % s.period == s.anchor % s.period:
                ticks.add(t)
    return length, ticks


def brute_minute_load(subs, ticks_per_minute):
    """Busiest one-minute window of distinct (resource, tick) pairs, by enumeration."""
    length = ticks_per_minute
    for s in subs:
        length = lcm(length, s.period)
    hits = [set() for _ in range(length)]
    for s in subs:
        for t in range(length):
            if t % s.period == s.anchor % s.period:
                hits[t].add(s.resource)
    best = 0
    for start in range(length):
        total = sum(len(hits[(start + i) % length]) for i in range(ticks_per_minute))
        best = max(best, total)
    return best
