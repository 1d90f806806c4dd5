import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsnfaas.errors import EmptySamples, InvalidPlan, NotInMaintenance
from wsnfaas.lifecycle import (
    Advance,
    DecisionInputs,
    DecisionThresholds,
    Dist,
    Feedback,
    Hold,
    LifecycleLedger,
    LifecyclePlan,
    Phase,
    PhaseModel,
    advance,
    expected_cost_single_loop,
    maintenance_switch,
    net_benefit,
    point_plan,
    simulate_lifecycle,
    simulate_trajectory,
)

COSTS = [10, 5, 5, 20, 5, 10, 10]


def geometric_plan(level=2, horizon=3650.0):
    plan = point_plan(COSTS, [1] * 7, horizon_days=horizon)
    phases = dict(plan.phases)
    phases[Phase.DEBUGGING] = PhaseModel(Dist.point(5), Dist.point(1), 0.5,
                                         (Phase.CONFIGURATION, level), 1.0)
    return LifecyclePlan(phases, horizon_days=horizon)


def enumerated_mean(depth=40):
    # f failures happen with probability 0.5^(f+1); each adds feedback 3 plus a
    # re-run of configuration, trial production and debugging (10 + 5 + 5)
    return sum(0.5 ** (f + 1) * (65 + 23 * f) for f in range(depth + 1))


def test_net_benefit():
    assert net_benefit(100, 60, 10) == 30
    assert net_benefit(0, 0, 0) == 0
    assert net_benefit(75.5, 60.25, 15.25) == 0.0


def test_zero_failure_plan_is_exact():
    plan = point_plan(COSTS)
    report, costs = simulate_lifecycle(plan, 1000, seed=1, return_samples=True)
    assert (costs == 65.0).all()
    assert report.mean_cost == 65.0
    assert report.cost_percentiles == {50: 65.0, 90: 65.0, 99: 65.0}
    assert report.completion_fraction == 1.0


def test_geometric_oracles_agree():
    closed = expected_cost_single_loop(geometric_plan(), Phase.DEBUGGING)
    assert closed == 88.0
    assert enumerated_mean() == pytest.approx(closed, rel=1e-9)


def test_geometric_monte_carlo():
    start = time.perf_counter()
    report = simulate_lifecycle(geometric_plan(), 100_000, seed=2024)
    elapsed = time.perf_counter() - start
    assert abs(report.mean_cost - 88.0) <= 0.02 * 88.0
    assert abs(report.mean_cost - 88.0) <= 3 * report.cost_stderr
    assert report.completion_fraction == 1.0
    assert elapsed < 30


def test_same_seed_same_report():
    plan = LifecyclePlan.load("samples/lifecycle_plan.yaml")
    assert simulate_lifecycle(plan, 500, 9) == simulate_lifecycle(plan, 500, 9)
    assert simulate_lifecycle(plan, 500, 9) != simulate_lifecycle(plan, 500, 10)


def test_workers_do_not_change_results():
    plan = geometric_plan()
    assert simulate_lifecycle(plan, 2000, 5, workers=2) == simulate_lifecycle(plan, 2000, 5)


def test_trajectory_bookkeeping():
    plan = LifecyclePlan.load("samples/lifecycle_plan.yaml")
    rng = np.random.default_rng(3)
    for _ in range(200):
        traj = simulate_trajectory(plan, rng)
        assert traj.total_cost == pytest.approx(sum(s.cost for s in traj.steps))
        assert traj.total_days == pytest.approx(sum(s.duration for s in traj.steps))
        if traj.completed:
            assert traj.total_days <= plan.horizon_days


def test_horizon_cuts_trajectories():
    plan = point_plan(COSTS, [600] * 7)
    report = simulate_lifecycle(plan, 10, 1)
    assert report.completion_fraction == 0.0


def test_level_monotonicity():
    means = [simulate_lifecycle(geometric_plan(level), 5000, 77).mean_cost for level in (1, 2, 3, 4)]
    assert means == sorted(means)
    assert len(set(means)) == 4


def test_invalid_plans():
    with pytest.raises(InvalidPlan):
        point_plan(COSTS[:6])
    with pytest.raises(InvalidPlan):
        LifecyclePlan.from_dict({"phases": {"debugging": {"failure_prob": 1.5}}})
    raw = {"phases": {p.name.lower(): {"cost": 1} for p in Phase}}
    raw["phases"]["configuration"] = {"cost": 1, "failure_prob": 0.2,
                                      "on_failure": {"target": "debugging", "level": 1}}
    with pytest.raises(InvalidPlan):
        LifecyclePlan.from_dict(raw)
    with pytest.raises(InvalidPlan):
        Dist("triangular", (3.0, 1.0, 2.0))
    with pytest.raises(InvalidPlan):
        simulate_lifecycle(point_plan(COSTS), 0, 1)
    with pytest.raises(InvalidPlan):
        point_plan(COSTS, multipliers=(1, 3, 3, 27))


def test_plan_file_round_trip():
    plan = LifecyclePlan.load("samples/geometric_plan.yaml")
    assert expected_cost_single_loop(plan, Phase.DEBUGGING) == 88.0


# -- decisions --------------------------------------------------------------

def inputs(net_ok, net_n, impl_ok, impl_n, **th):
    return DecisionInputs([1.0] * net_ok + [-1.0] * (net_n - net_ok),
                          [True] * impl_ok + [False] * (impl_n - impl_ok),
                          DecisionThresholds(**th))


def test_advance_rules():
    assert advance(Phase.DEBUGGING, inputs(9, 10, 19, 20)) == Advance(Phase.BATCH_PRODUCTION)
    plan = geometric_plan()
    assert advance(Phase.DEBUGGING, inputs(9, 10, 5, 10), plan) == Feedback(Phase.CONFIGURATION, 2)
    # borderline: exactly at the thresholds advances
    assert advance(Phase.CONFIGURATION, inputs(8, 10, 9, 10)) == Advance(Phase.TRIAL_PRODUCTION)
    assert isinstance(advance(Phase.CONFIGURATION, inputs(7, 10, 9, 10)), Hold)
    assert advance(Phase.MAINTENANCE, inputs(1, 1, 1, 1)) == Advance(None)
    with pytest.raises(EmptySamples):
        advance(Phase.DEBUGGING, DecisionInputs([], [True]))


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30),
       st.lists(st.booleans(), min_size=1, max_size=30))
def test_advance_is_consistent(net, impl):
    d = advance(Phase.OPERATION, DecisionInputs(net, impl))
    conf_net = sum(x >= 0 for x in net) / len(net)
    conf_impl = sum(impl) / len(impl)
    assert isinstance(d, Advance) == (conf_net >= 0.8 and conf_impl >= 0.9)
    if isinstance(d, Hold):
        assert 0 <= d.conf_net_benefit <= 1 and 0 <= d.conf_implementation <= 1


def test_maintenance_switch():
    rec = maintenance_switch(Phase.MAINTENANCE, Phase.CONFIGURATION, "upgrade requirement")
    assert rec.target is Phase.CONFIGURATION
    assert maintenance_switch(Phase.MAINTENANCE, Phase.OPERATION, "fault cleared", 1).level == 1
    with pytest.raises(NotInMaintenance):
        maintenance_switch(Phase.DEBUGGING, Phase.OPERATION, "shortcut")


def test_ledger_prices_levels():
    ledger = LifecycleLedger(base_cost=2.0)
    ledger.post(10, "n17", "Restart", 1)
    ledger.post(20, "n17", "FieldReplace", 3)
    assert [e.cost for e in ledger.entries] == [2.0, 18.0]
    assert ledger.total() == 20.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.9), st.integers(1, 4))
def test_single_loop_closed_form_matches_enumeration(q, level):
    plan = geometric_plan(level)
    phases = dict(plan.phases)
    old = phases[Phase.DEBUGGING]
    phases[Phase.DEBUGGING] = PhaseModel(old.cost, old.duration, q, old.on_failure, 1.0)
    plan = LifecyclePlan(phases)
    loop = (1, 3, 9, 27)[level - 1] + 20
    series = sum(q ** f * (1 - q) * (65 + loop * f) for f in range(2000))
    assert expected_cost_single_loop(plan, Phase.DEBUGGING) == pytest.approx(series, rel=1e-6)
