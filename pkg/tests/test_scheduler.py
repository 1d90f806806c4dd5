import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_minute_load
from wsnfaas.functions import Subscription
from wsnfaas.scheduler import (
    Accepted,
    Failure,
    LoadBook,
    Rejected,
    Success,
    SuccessStats,
    Task,
    TierPolicy,
    admit,
    analytic_success,
    dispatch,
    execute_with_retries,
    minute_load,
    success_report,
    tier_policies,
)
from wsnfaas.simcore import Delivered, EnergyConfig, Lost, ScenarioConfig, new_state, transmit


def sub(fid, period, anchor=0, node="n1", resource="pm25"):
    return Subscription(fid, fid, 2, node, resource, anchor, period)


def test_default_policies():
    p = tier_policies()
    assert p[1].target_success_rate >= 0.99
    assert p[1].rate_per_acquisition > p[2].rate_per_acquisition > p[3].rate_per_acquisition
    assert p[1].preempts == {2, 3} and p[3].preempts == frozenset()
    assert [p[t].max_retries for t in (1, 2, 3)] == [2, 1, 0]
    with pytest.raises(ValueError):
        tier_policies({1: {"target_success_rate": 0.9}})
    with pytest.raises(ValueError):
        tier_policies({3: {"rate_per_acquisition": "0.05"}})


# -- admission --------------------------------------------------------------

def test_six_hundred_users_fill_a_minute():
    # 50 ms ticks give 1200 slots per minute, so 601 distinct anchors exist
    tpm = ScenarioConfig(tick_millis=50).ticks_per_minute
    book = LoadBook({"n1": 600}, tpm)
    for i in range(600):
        assert isinstance(admit(sub(f"u{i}", tpm, anchor=i), book), Accepted)
    assert book.load("n1") == 600
    before = book.snapshot()
    verdict = admit(sub("u600", tpm, anchor=600), book)
    assert verdict == Rejected("CapacityExceeded", "n1", 601, 600)
    assert book.snapshot() == before


def test_subset_adds_no_load():
    book = LoadBook({"n1": 600}, 600)
    admit(sub("a", 100), book)
    verdict = admit(sub("b", 200), book)
    assert verdict == Accepted("n1", 0, 6)


def test_unknown_node_and_huge_window():
    book = LoadBook({"n1": 600}, 600, max_window=10_000)
    assert admit(sub("a", 10, node="zz"), book).reason == "UnknownNode"
    assert admit(sub("a", 9_973), book).reason == "HyperperiodTooLarge"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, 2, 3, 4, 5, 6, 8, 9, 10, 12, 15, 18, 20, 24]),
                          st.integers(0, 40), st.sampled_from(["pm25", "temperature"])),
                min_size=1, max_size=6),
       st.sampled_from([5, 6, 10, 12, 15, 20, 24, 30]))
def test_minute_load_matches_brute_force(params, tpm):
    subs = [sub(f"f{i}", p, a, resource=r) for i, (p, a, r) in enumerate(params)]
    assert minute_load(subs, tpm) == brute_minute_load(subs, tpm)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, 2, 3, 4, 5, 6, 10, 12, 15, 20, 30, 60, 90, 120]),
                          st.integers(0, 59), st.integers(0, 2)),
                min_size=1, max_size=25), st.integers(1, 30))
def test_capacity_never_exceeded(params, capacity):
    tpm = 60
    book = LoadBook({f"n{i}": capacity for i in range(3)}, tpm)
    for i, (period, anchor, node) in enumerate(params):
        admit(sub(f"f{i}", period, anchor, node=f"n{node}"), book)
    # recount from the subscription table, not from the book's own figures
    for node, subs in book.committed.items():
        assert brute_minute_load(subs, tpm) <= capacity


# -- dispatch ---------------------------------------------------------------

def greedy_trace(tasks, ticks):
    pending, runs = [], {}
    for tick in range(ticks):
        pending += [t for t in tasks if t.due_tick == tick]
        res = dispatch(tick, pending)
        for t in res.executions:
            runs[t] = tick
        pending = res.deferrals
    return runs


def brute_best(tasks, ticks):
    """Every one-slot-per-tick placement; the best by priority order of start times."""
    order = sorted(tasks, key=Task.sort_key)
    best = None
    for starts in itertools.product(range(ticks), repeat=len(tasks)):
        if len(set(starts)) < len(starts):
            continue
        placed = dict(zip(tasks, starts))
        if any(placed[t] < t.due_tick for t in tasks):
            continue
        key = [placed[t] for t in order]
        if best is None or key < best[0]:
            best = (key, placed)
    return best[1]


def test_tier_one_preempts_tier_three():
    control = Task("n1", 1, 0, 1, "control")
    collect = Task("n1", 3, 0, 2, "collect")
    runs = greedy_trace([control, collect], 3)
    assert runs == {control: 0, collect: 1}
    assert runs == brute_best([control, collect], 3)


def test_no_contention_and_fifo():
    lone = Task("n1", 2, 4, 1)
    assert dispatch(4, [lone]).executions == [lone]
    a, b = Task("n1", 2, 0, 1), Task("n1", 2, 0, 2)
    res = dispatch(0, [b, a])
    assert res.executions == [a] and res.deferrals == [b]


def test_starvation_alarm_once():
    blockers = [Task("n1", 1, t, t) for t in range(15)]
    victim = Task("n1", 3, 0, 99)
    pending, alarms = [], []
    for tick in range(15):
        pending += [t for t in blockers if t.due_tick == tick]
        if tick == 0:
            pending.append(victim)
        res = dispatch(tick, pending, deferral_bound=10)
        alarms += res.alarms
        pending = res.deferrals
    assert [a.task for a in alarms] == [victim]
    assert alarms[0].waited == 11
    assert victim in pending


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 3), st.integers(0, 1)),
                min_size=1, max_size=4))
def test_dispatch_matches_brute_force(params):
    tasks = [Task(f"n{node}", tier, due, i) for i, (tier, due, node) in enumerate(params)]
    horizon = 4 + len(tasks)
    runs = greedy_trace(tasks, horizon)
    for node in {t.node for t in tasks}:
        mine = [t for t in tasks if t.node == node]
        assert {t: runs[t] for t in mine} == brute_best(mine, horizon)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 5)), min_size=1, max_size=12))
def test_priority_and_work_conservation(params):
    tasks = [Task("n1", tier, due, i) for i, (tier, due) in enumerate(params)]
    pending = []
    for tick in range(40):
        pending += [t for t in tasks if t.due_tick == tick]
        res = dispatch(tick, pending)
        if pending:
            assert len(res.executions) == 1
            run = res.executions[0]
            assert all(run.sort_key() <= other.sort_key() for other in res.deferrals)
        pending = res.deferrals
    assert not pending


# -- retries ----------------------------------------------------------------

def test_retry_outcomes():
    policy = TierPolicy(1, 0.99, 2, 0)
    assert execute_with_retries(policy, lambda: Delivered(1)) == Success(1)
    assert execute_with_retries(policy, lambda: Lost(0)) == Failure(3)
    outcomes = iter([Lost(0), Delivered(1)])
    stats = SuccessStats()
    assert execute_with_retries(policy, lambda: next(outcomes), stats) == Success(2)
    assert stats.attempted[1] == 1 and stats.succeeded[1] == 1


def _lossy_hop(seed, loss):
    cfg = ScenarioConfig(seed=seed, edge=0, infrastructure=1, constrained=1,
                         loss_rates=[loss] * 4, energy=EnergyConfig(budget_j=1e9))
    state = new_state(cfg)
    path = state.topology.path_to_gateway("n0")
    return lambda: transmit(state, path, log=False)


def test_one_retry_success_rate():
    policy = tier_policies({1: {"max_retries": 1}})[1]
    stats = SuccessStats()
    send = _lossy_hop(21, 0.05)
    for _ in range(100_000):
        execute_with_retries(policy, send, stats)
    expected = analytic_success(0.05, 1)
    assert expected == pytest.approx(0.9975)
    assert abs(stats.measured_rate(1) - expected) <= 0.003


@pytest.mark.parametrize("loss,retries", [(0.05, 0), (0.2, 1), (0.3, 2)])
def test_retry_math_within_three_sigma(loss, retries):
    policy = TierPolicy(2, 0.5, retries, 0)
    stats = SuccessStats()
    send = _lossy_hop(5, loss)
    n = 20_000
    for _ in range(n):
        execute_with_retries(policy, send, stats)
    p = analytic_success(loss, retries)
    sigma = (p * (1 - p) / n) ** 0.5
    assert abs(stats.measured_rate(2) - p) <= 3 * sigma


def test_success_report():
    stats = SuccessStats()
    stats.attempted[1], stats.succeeded[1] = 10_000, 9_990
    rows = {r.tier: r for r in success_report(stats)}
    assert rows[1].verdict == "PASS" and rows[1].rate == pytest.approx(0.999)
    assert rows[2].verdict == "INSUFFICIENT_DATA" and rows[2].rate is None
    stats.attempted[1], stats.succeeded[1] = 1000, 980
    assert success_report(stats)[0].verdict == "FAIL"


def test_random_admission_never_overloads():
    rng = random.Random(4)
    book = LoadBook({"n1": 600}, 600)
    for i in range(400):
        admit(sub(f"f{i}", rng.choice([60, 120, 300, 600, 1200]), rng.randrange(600)), book)
    assert brute_minute_load(book.committed["n1"], 600) <= 600
